"""Smoke test for the keytrack Python module.

Build and install first:  pip install ./crates/py   (or `maturin develop -m crates/py/Cargo.toml`)
"""

import json
import os
import tempfile

import keytrack


def figure(x, y, w):
    fx = [0.5, 0.5, 0.5, 0.2, 0.8, 0.1, 0.9, 0.0, 1.0, 0.35, 0.65, 0.3, 0.7, 0.25, 0.75]
    fy = [0.0, 0.15, 0.08, 0.2, 0.2, 0.35, 0.35, 0.5, 0.5, 0.55, 0.55, 0.75, 0.75, 1.0, 1.0]
    return [[x + a * w, y + b * 2 * w, 0.9] for a, b in zip(fx, fy)]


def main():
    assert abs(keytrack.iou([0, 0, 2, 1], [1, 0, 3, 1]) - 1 / 3) < 1e-12
    pose = figure(10, 20, 50)
    box = keytrack.bbox_from_pose(pose)
    assert box == [0.0, 0.0, 70.0, 140.0], box
    assert abs(keytrack.mean_confidence(pose) - 0.9) < 1e-12
    norm = keytrack.normalize_pose(pose, box)
    assert all(p is not None and -1 <= p[0] <= 1 and -1 <= p[1] <= 1 for p in norm)

    seq = keytrack.Sequence.synth(json.dumps({
        "seq_id": "smoke", "n_people": 3, "n_frames": 30, "seed": 5,
        "camera_shift_events": [{"frame": 15, "dx": 400, "dy": 0}],
    }))
    assert len(seq) == 30 and seq.max_people == 3
    assert keytrack.Sequence.from_json(seq.to_json()).to_json() == seq.to_json()

    sc = keytrack.track(seq, keyframe_interval=5)
    perfect_ids = [sorted(i for i in f if i is not None) for f in seq.gt_ids()]
    assert len(sc) == 30 and sc.keyframes()[:1] == [0]
    tally = keytrack.mota(seq, sc)
    assert tally["mota"] <= 1.0 and set(tally["joints"]) >= {"head_top", "right_ankle"}

    with tempfile.TemporaryDirectory() as d:
        pairs = os.path.join(d, "pairs.json")
        pos, hard, other = keytrack.generate_pairs([seq], pairs)
        assert pos == 3 * 29, (pos, hard, other)
        matcher, curve = keytrack.Matcher.train(pairs, json.dumps({"epochs": 2, "hidden": 8}))
        assert len(curve) == 2
        path = os.path.join(d, "w.json")
        matcher.save(path)
        matcher = keytrack.Matcher.load(path)
        assert matcher.distance(pose, [[x + 300, y, s] for x, y, s in pose]) < 1e-9
        assert len(matcher.embed(pose)) == 128
        gcn = keytrack.track(seq, matcher, keyframe_interval=5)
        assert len(gcn) == 30

    try:
        keytrack.track(seq, keyframe_interval=0)
    except keytrack.KeytrackError:
        pass
    else:
        raise AssertionError("invalid config accepted")

    print("keytrack smoke test ok:", f"SC-only MOTA {tally['mota']:.3f}, first-frame ids {perfect_ids[0]}")


if __name__ == "__main__":
    main()
