use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

#[test]
fn module_tracks_and_scores_from_python() {
    Python::initialize();
    Python::attach(|py| {
        let module = wrap_pymodule!(keytrack_py::keytrack_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("keytrack", module).unwrap();
        let code = c"
import json
seq = keytrack.Sequence.synth(json.dumps({'n_people': 2, 'n_frames': 12, 'seed': 3}))
tracked = keytrack.track(seq, keyframe_interval=4)
ids = tracked.track_ids()
tally = keytrack.mota(seq, tracked)
assert len(seq) == 12 and ids[0] == [1, 2] and ids[-1] == [1, 2], ids
assert tracked.keyframes() == [0, 4, 8]
assert tally['mota'] == 1.0 and tally['id_switches'] == 0, tally
assert abs(keytrack.iou([0, 0, 2, 1], [1, 0, 3, 1]) - 1 / 3) < 1e-12
try:
    keytrack.Sequence.from_json('{')
    raise AssertionError('bad json accepted')
except keytrack.KeytrackError:
    pass
";
        py.run(code, Some(&globals), None).unwrap();
    });
}
