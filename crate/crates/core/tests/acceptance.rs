//! End-to-end acceptance gate. Every criterion runs at its stated tolerance
//! and reports one PASS/FAIL line; the test fails if any criterion does.

mod common;

use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::{brute_force_assignment, candidate, data_path, figure, gradient_check, naive_mota, perfect_prediction, random_scenario, sequence};
use keytrack::cli::{self, RunManifest};
use keytrack::eval::{mota, MotTally};
use keytrack::geometry::{iou, BoundingBox, Keypoint, Pose};
use keytrack::matcher::accuracy::{calibrate_from_distances, euclidean_accuracy, euclidean_distances, labels, matching_accuracy};
use keytrack::matcher::loss::contrastive_loss;
use keytrack::matcher::pairs::PairCounts;
use keytrack::matcher::{fit_matcher, generate_pairs, weights_file, PairDataset, PoseMatcher, PosePair, TrainConfig};
use keytrack::providers::synth::SynthSuite;
use keytrack::providers::{synth_pair_benchmark, ObservationSequence, PairBenchConfig, ReplayEstimator};
use keytrack::skeleton::{build_partitioned_adjacency, ReferenceRadii, SkeletonTopology};
use keytrack::tracking::associate::spatial_match;
use keytrack::tracking::{run_replay, to_tracked_sequence, update_state, TrackState, TrackerConfig};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(name: &str) -> T {
    serde_json::from_str(&fs::read_to_string(data_path(name)).unwrap()).unwrap()
}

fn suite(name: &str) -> Vec<ObservationSequence> {
    SynthSuite::parse(&fs::read_to_string(data_path(name)).unwrap()).unwrap().build().unwrap()
}

struct Trained {
    matcher: PoseMatcher,
    train: PairDataset,
    test: PairDataset,
    seconds: f64,
}

/// The matcher trained on the bundled benchmark, shared by every criterion
/// that needs one.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let train = synth_pair_benchmark(&read_json::<PairBenchConfig>("pair_bench_train.json")).unwrap();
        let test = synth_pair_benchmark(&read_json::<PairBenchConfig>("pair_bench_test.json")).unwrap();
        let cfg: TrainConfig = read_json("matcher_train.json");
        let (matcher, _) = fit_matcher(&train, &cfg, &SkeletonTopology::posetrack15()).unwrap();
        Trained { matcher, train, test, seconds: start.elapsed().as_secs_f64() }
    })
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for j in [2, 3, 15] {
        for seed in 0..5 {
            worst = worst.max(gradient_check(j, 4, seed, 1.0).max_rel);
            runs += 1;
        }
    }
    worst = worst.max(gradient_check(15, 16, 11, 4.0).max_rel);
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-4 && secs < 30.0, format!("{} checks, max rel err {worst:.2e}, {secs:.1} s", runs + 1))
}

fn c2_equations() -> Verdict {
    let mut failures = Vec::new();
    let mut expect = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    // tracked iff mean confidence strictly above the threshold
    let pose = |s: f64| Pose::new(vec![Keypoint::new(1.0, 1.0, s); 15]);
    let state = |s: f64, t: f64| if update_state(&pose(s), t) == TrackState::Tracked { 1.0 } else { 0.0 };
    expect("state at threshold", state(0.5, 0.5), 0.0);
    expect("state above threshold", state(0.5 + 1e-9, 0.5), 1.0);
    expect("state below threshold", state(0.25, 0.5), 0.0);

    // IOU and the strict spatial threshold
    let a = BoundingBox::new(0.0, 0.0, 2.0, 1.0);
    let b = BoundingBox::new(1.0, 0.0, 3.0, 1.0);
    expect("iou half overlap", iou(&a, &b), 1.0 / 3.0);
    expect("iou identical", iou(&a, &a), 1.0);
    expect("iou disjoint", iou(&a, &BoundingBox::new(5.0, 5.0, 6.0, 6.0)), 0.0);
    expect("match at tau_o", spatial_match(&[a], &[b], 1.0 / 3.0).pairs.len() as f64, 0.0);
    expect("match below tau_o", spatial_match(&[a], &[b], 0.33).pairs.len() as f64, 1.0);

    // contrastive loss closed forms
    expect("loss negative inside margin", contrastive_loss(0.5, 0, 1.0), 0.375);
    expect("loss positive", contrastive_loss(0.5, 1, 1.0), 0.125);
    expect("loss negative beyond margin", contrastive_loss(2.0, 0, 1.0), 0.0);
    expect("loss at zero distance", contrastive_loss(0.0, 0, 1.0), 0.5);

    // partitioned adjacency on hand-built graphs
    let names = |n: usize| (0..n).map(|i| format!("n{i}")).collect::<Vec<_>>();
    let ops = |edges: Vec<(usize, usize)>, r: Vec<f64>| {
        let topo = SkeletonTopology::new("g", names(r.len()), edges).unwrap();
        build_partitioned_adjacency(&topo, &ReferenceRadii(r)).unwrap().ops
    };
    let flat = |o: &[ndarray::Array2<f64>; 3]| o.iter().flat_map(|m| m.iter().copied()).collect::<Vec<_>>();
    let mut expect_ops = |name: &str, got: Vec<f64>, want: Vec<f64>| {
        for (k, (g, w)) in got.iter().zip(&want).enumerate() {
            expect(&format!("{name}[{k}]"), *g, *w);
        }
    };
    expect_ops("1-node", flat(&ops(vec![], vec![0.3])), vec![1.0, 0.0, 0.0]);
    // r0 < r1: node 0 sees 1 as centrifugal, node 1 sees 0 as centripetal
    expect_ops(
        "2-node",
        flat(&ops(vec![(0, 1)], vec![0.2, 0.9])),
        vec![1.0, 0.0, 0.0, 1.0, /* centripetal */ 0.0, 0.0, 1.0, 0.0, /* centrifugal */ 0.0, 1.0, 0.0, 0.0],
    );
    // root 1 nearest the center with two farther neighbors sharing weight 1/2
    expect_ops(
        "3-node",
        flat(&ops(vec![(0, 1), (1, 2)], vec![1.0, 0.1, 2.0])),
        vec![
            1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, // root
            0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, // centripetal
            0.0, 0.0, 0.0, 0.5, 0.0, 0.5, 0.0, 0.0, 0.0, // centrifugal
        ],
    );
    // equal radii put a neighbor in the root partition
    expect_ops(
        "3-node ties",
        flat(&ops(vec![(0, 1), (1, 2)], vec![0.5, 0.5, 0.7])),
        vec![
            0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0, // root
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, // centripetal
            0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, // centrifugal
        ],
    );
    check(failures.is_empty(), if failures.is_empty() { "all closed forms exact to 1e-12".into() } else { failures.join("; ") })
}

fn c3_matcher_ordering() -> Verdict {
    let t = trained();
    let train: Vec<&PosePair> = t.train.hard_subset();
    let test: Vec<&PosePair> = t.test.hard_subset();
    let (eu_thr, _) = calibrate_from_distances(&euclidean_distances(&train), &labels(&train)).unwrap();
    let eu = euclidean_accuracy(&test, eu_thr).unwrap();
    let gcn = matching_accuracy(&t.matcher.weights, &t.matcher.adjacency, &test, t.matcher.threshold).unwrap();
    check(
        test.len() >= 2000 && gcn >= eu + 0.02 && gcn > 0.90 && t.seconds < 600.0,
        format!(
            "held-out {} pairs: GCN {:.2}% vs Euclidean {:.2}% (train+eval {:.0} s)",
            test.len(),
            100.0 * gcn,
            100.0 * eu,
            t.seconds
        ),
    )
}

fn run_suite(seqs: &[ObservationSequence], cfg: &TrackerConfig, m: Option<&PoseMatcher>) -> Vec<MotTally> {
    seqs.iter()
        .map(|s| {
            let (res, _) = run_replay(s, cfg, m, &ReplayEstimator::new(s)).unwrap();
            mota(s, &to_tracked_sequence(s, &res), 0.1).unwrap()
        })
        .collect()
}

fn merged(t: &[MotTally]) -> MotTally {
    let mut out = MotTally::new(t[0].joint_names.clone());
    for x in t {
        out.merge(x).unwrap();
    }
    out
}

fn c4_trend_gcn() -> Verdict {
    let seqs = suite("camera_shift_suite.json");
    let m = &trained().matcher;
    let mut ok = seqs.len() >= 10;
    let mut parts = Vec::new();
    for n in [2, 5, 8] {
        let sc = merged(&run_suite(&seqs, &TrackerConfig { keyframe_interval: n, pose_matching: false, ..Default::default() }, None)).total();
        let gcn = merged(&run_suite(&seqs, &TrackerConfig { keyframe_interval: n, ..Default::default() }, Some(m))).total();
        ok &= gcn.mota().unwrap() >= sc.mota().unwrap() && gcn.id_switches <= sc.id_switches;
        parts.push(format!(
            "N={n}: MOTA {:.4} vs {:.4}, idsw {} vs {}",
            gcn.mota().unwrap(),
            sc.mota().unwrap(),
            gcn.id_switches,
            sc.id_switches
        ));
    }
    check(ok, format!("{} sequences, SC+GCN vs SC: {}", seqs.len(), parts.join("; ")))
}

fn c5_trend_interval() -> Verdict {
    let seqs = suite("camera_shift_suite.json");
    let m = &trained().matcher;
    let means: Vec<f64> = [2, 5, 8]
        .iter()
        .map(|&n| {
            let t = run_suite(&seqs, &TrackerConfig { keyframe_interval: n, ..Default::default() }, Some(m));
            t.iter().map(|x| x.mota().unwrap()).sum::<f64>() / t.len() as f64
        })
        .collect();
    check(
        means[0] >= means[1] && means[1] >= means[2],
        format!("mean MOTA N=2 {:.4}, N=5 {:.4}, N=8 {:.4}", means[0], means[1], means[2]),
    )
}

fn total_score(pairs: &[(usize, usize)], s: &[Vec<f64>]) -> f64 {
    pairs.iter().map(|&(t, d)| s[t][d]).sum()
}

/// Greedy result is optimal when it equals the exhaustive assignment, or
/// ties it in both cardinality and total score.
fn optimal(greedy: &[(usize, usize)], oracle: &[(usize, usize)], s: &[Vec<f64>]) -> bool {
    greedy == oracle || (greedy.len() == oracle.len() && (total_score(greedy, s) - total_score(oracle, s)).abs() < 1e-12)
}

fn c6_tracking_oracle() -> Verdict {
    let seqs = suite("small_suite.json");
    let m = &trained().matcher;
    let (mut spatial, mut pose, mut bad) = (0, 0, Vec::new());
    for s in &seqs {
        assert!(s.max_people() <= 3 && s.len() <= 20);
        for (n, gcn) in [(2, true), (5, true), (5, false), (8, true)] {
            let cfg = TrackerConfig { keyframe_interval: n, pose_matching: gcn, record_traces: true, ..Default::default() };
            let (res, _) = run_replay(s, &cfg, gcn.then_some(m), &ReplayEstimator::new(s)).unwrap();
            for r in res.iter().filter(|r| r.keyframe) {
                let tr = r.trace.as_ref().unwrap();
                let n_det = tr.iou.first().map_or(tr.leftover_detections.len(), Vec::len);
                let oracle = brute_force_assignment(&tr.iou, n_det, &|v| v > tr.tau_o, true);
                spatial += 1;
                if !optimal(&tr.spatial, &oracle, &tr.iou) {
                    bad.push(format!("{} frame {} spatial", s.seq_id, r.frame));
                }
                if !tr.distances.is_empty() {
                    let oracle =
                        brute_force_assignment(&tr.distances, tr.leftover_detections.len(), &|d| d < tr.match_threshold, false);
                    pose += 1;
                    if !optimal(&tr.pose, &oracle, &tr.distances) {
                        bad.push(format!("{} frame {} pose", s.seq_id, r.frame));
                    }
                }
            }
        }
    }
    check(
        bad.is_empty(),
        format!("{} sequences, {spatial} spatial and {pose} pose stages checked; mismatches: {bad:?}", seqs.len()),
    )
}

fn c7_mot_oracle() -> Verdict {
    let mut mismatches = 0;
    for seed in 0..100 {
        let (gt, pred) = random_scenario(seed);
        let c = mota(&gt, &pred, 0.1).unwrap().total();
        let n = naive_mota(&gt, &pred, 0.1);
        if (c.gt, c.misses, c.false_positives, c.id_switches) != (n.gt, n.misses, n.false_positives, n.id_switches) {
            mismatches += 1;
        }
    }
    let gt = sequence(vec![vec![candidate(Some(1), figure(0.0, 0.0, 60.0)), candidate(Some(2), figure(300.0, 0.0, 60.0))]; 4]);
    let perfect = mota(&gt, &perfect_prediction(&gt), 0.1).unwrap().mota();

    let mut gt = sequence(vec![vec![candidate(Some(1), figure(0.0, 0.0, 60.0))]; 2]);
    for f in &mut gt.frames {
        f.candidates[0].pose.joints[10..].iter_mut().for_each(|k| k.score = 0.0);
    }
    let mut pred = perfect_prediction(&gt);
    pred.frames[1].entries[0].pose.joints[3].score = 0.0;
    let one_miss = mota(&gt, &pred, 0.1).unwrap().mota();
    check(
        mismatches == 0 && perfect == Some(1.0) && one_miss == Some(0.95),
        format!("100 random scenarios, {mismatches} mismatches; perfect {perfect:?}; 1 miss of 20 {one_miss:?}"),
    )
}

fn cli_run(args: &[&str]) -> i32 {
    cli::run(std::iter::once("keytrack").chain(args.iter().copied()))
}

fn rerun_identical(manifest: &Path) -> Result<(), String> {
    let m = RunManifest::load(manifest).map_err(|e| e.to_string())?;
    let before: Vec<Vec<u8>> = m.outputs.iter().map(|p| fs::read(p).unwrap()).collect();
    m.outputs.iter().for_each(|p| fs::remove_file(p).unwrap());
    let again = manifest.with_extension("rerun.json");
    let code = cli_run(&["rerun", "--manifest", manifest.to_str().unwrap(), "--manifest-out", again.to_str().unwrap()]);
    let after: Vec<Vec<u8>> = m.outputs.iter().map(|p| fs::read(p).unwrap_or_default()).collect();
    if code != 0 || before != after {
        return Err(format!("{} not reproduced", manifest.display()));
    }
    Ok(())
}

fn c8_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    fs::write(d.join("bench.json"), r#"{"n_positive": 60, "n_hard_negative": 60}"#).unwrap();
    let small = fs::read_to_string(data_path("small_suite.json")).unwrap();
    fs::write(d.join("suite.json"), small).unwrap();
    let pt: serde_json::Value = serde_json::json!({
        "images": [{"id": 1}, {"id": 2}],
        "annotations": [
            {"image_id": 1, "track_id": 0, "keypoints": (0..51).map(|k| if k % 3 == 2 { 1.0 } else { 10.0 + k as f64 }).collect::<Vec<_>>()},
            {"image_id": 2, "track_id": 0, "keypoints": (0..51).map(|k| if k % 3 == 2 { 1.0 } else { 12.0 + k as f64 }).collect::<Vec<_>>()}
        ]
    });
    fs::write(d.join("pt.json"), pt.to_string()).unwrap();
    let small0 = p("seqs/small0.json");
    let commands: Vec<(Vec<String>, PathBuf)> = vec![
        (vec!["synth".into(), "--config".into(), p("suite.json"), "--out-dir".into(), p("seqs")], d.join("seqs/manifest.json")),
        (
            vec!["synth-pairs".into(), "--config".into(), p("bench.json"), "--seed".into(), "4".into(), "--out".into(), p("pairs.json")],
            d.join("pairs.json.manifest.json"),
        ),
        (
            ["train", "--pairs", &p("pairs.json"), "--out", &p("w.json"), "--epochs", "3", "--hidden", "16", "--lr", "0.05", "--lr-decay-epochs", "2"]
                .map(String::from)
                .to_vec(),
            d.join("w.json.manifest.json"),
        ),
        (
            ["track", "--input", &small0, "--weights", &p("w.json"), "--out", &p("t.json"), "--noise-sigma", "1.5", "--score-jitter", "0.05", "--seed", "3"]
                .map(String::from)
                .to_vec(),
            d.join("t.json.manifest.json"),
        ),
        (["gen-pairs", "--input", &small0, "--out", &p("mined.json")].map(String::from).to_vec(), d.join("mined.json.manifest.json")),
        (
            ["eval", "--gt", &small0, "--run", &format!("gcn={}", p("t.json")), "--out", &p("report")].map(String::from).to_vec(),
            d.join("report.manifest.json"),
        ),
        (["convert", "--input", &p("pt.json"), "--out", &p("conv.json")].map(String::from).to_vec(), d.join("conv.json.manifest.json")),
    ];
    let mut done = Vec::new();
    for (args, manifest) in &commands {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        if cli_run(&argv) != 0 {
            return Err(format!("{} failed", args[0]));
        }
        rerun_identical(manifest)?;
        done.push(args[0].clone());
    }
    Ok(format!("byte-identical reruns: {}", done.join(", ")))
}

fn c9_throughput() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("six.cfg.json"), serde_json::json!({
            "seq_id": "six", "n_people": 6, "n_frames": 1000, "noise_sigma": 1.0, "seed": 77,
            "camera_shift_events": (1..10).map(|k| serde_json::json!({"frame": 100 * k + 3, "dx": if k % 2 == 0 { -320 } else { 320 }, "dy": 0})).collect::<Vec<_>>(),
            "occlusion_windows": [{"id": 3, "start": 400, "end": 430}]
        })
        .to_string()).unwrap();
    weights_file::save(&trained().matcher, &d.join("w.json")).unwrap();
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    if cli_run(&["synth", "--config", &s("six.cfg.json"), "--out-dir", &s(".")]) != 0 {
        return Err("synth failed".into());
    }
    let mut best: f64 = 0.0;
    let mut framework: f64 = 0.0;
    // best of three to damp scheduler noise
    for _ in 0..3 {
        if cli_run(&["track", "--input", &s("six.json"), "--weights", &s("w.json"), "--out", &s("t.json")]) != 0 {
            return Err("track failed".into());
        }
        let m = RunManifest::load(&d.join("t.json.manifest.json")).unwrap();
        best = best.max(m.timings.loop_fps.unwrap_or(0.0));
        framework = framework.max(m.timings.framework_fps.unwrap_or(0.0));
    }
    check(best >= 1000.0, format!("6 people x 1000 frames with 9 camera shifts: {best:.0} frames/s with providers, {framework:.0} frames/s framework only"))
}

fn c10_pair_mining() -> Verdict {
    let at = |x: f64| figure(x, 0.0, 50.0);
    let cases: Vec<(&str, Vec<Vec<keytrack::providers::Candidate>>, PairCounts)> = vec![
        ("1 person, 2 frames", vec![vec![candidate(Some(1), at(0.0))], vec![candidate(Some(1), at(2.0))]], PairCounts { positive: 1, hard_negative: 0, other_negative: 0 }),
        (
            "2 apart, 1 frame",
            vec![vec![candidate(Some(1), at(0.0)), candidate(Some(2), at(300.0))]],
            PairCounts { positive: 0, hard_negative: 0, other_negative: 1 },
        ),
        (
            "2 overlapping, 1 frame",
            vec![vec![candidate(Some(1), at(0.0)), candidate(Some(2), at(30.0))]],
            PairCounts { positive: 0, hard_negative: 1, other_negative: 0 },
        ),
        (
            "2 overlapping, 2 frames",
            vec![vec![candidate(Some(1), at(0.0)), candidate(Some(2), at(30.0))]; 2],
            PairCounts { positive: 2, hard_negative: 4, other_negative: 0 },
        ),
        (
            "gap frame",
            vec![vec![candidate(Some(1), at(0.0))], vec![], vec![candidate(Some(1), at(0.0))]],
            PairCounts::default(),
        ),
    ];
    let mut bad = Vec::new();
    for (name, frames, want) in cases {
        let got = generate_pairs(&[sequence(frames)]).counts();
        if got != want {
            bad.push(format!("{name}: {got:?}"));
        }
    }
    let mut detail = format!("5 micro-sequences; mismatches {bad:?}");
    if let Some(dir) = std::env::var_os("KEYTRACK_POSETRACK_TRAIN") {
        let mut seqs = Vec::new();
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = fs::read_to_string(&path).unwrap();
                let id = path.file_stem().unwrap().to_string_lossy().to_string();
                seqs.push(keytrack::providers::posetrack::convert_posetrack(&text, &id).unwrap());
            }
        }
        let c = generate_pairs(&seqs).counts();
        let want = PairCounts { positive: 56908, hard_negative: 25064, other_negative: 241450 };
        if c != want {
            bad.push(format!("PoseTrack train: {c:?}"));
        }
        detail.push_str(&format!("; PoseTrack train counts {c:?}"));
    } else {
        detail.push_str("; PoseTrack counts skipped (KEYTRACK_POSETRACK_TRAIN unset)");
    }
    check(bad.is_empty(), detail)
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("1 gradient suite", c1_gradients),
        ("2 closed-form conformance", c2_equations),
        ("3 matcher beats euclidean baseline", c3_matcher_ordering),
        ("4 pose matching helps on camera shifts", c4_trend_gcn),
        ("5 shorter keyframe interval helps", c5_trend_interval),
        ("6 association equals exhaustive optimum", c6_tracking_oracle),
        ("7 MOT tally matches reference", c7_mot_oracle),
        ("8 reruns are byte-identical", c8_determinism),
        ("9 tracking loop throughput", c9_throughput),
        ("10 pair-mining conformance", c10_pair_mining),
    ];
    let mut failed = Vec::new();
    writeln!(std::io::stdout()).unwrap();
    for (name, f) in criteria {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or(e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        // written past the test harness's capture so the gate is always visible
        let line = match &verdict {
            Ok(d) => format!("PASS  criterion {name}: {d}"),
            Err(d) => format!("FAIL  criterion {name}: {d}"),
        };
        writeln!(std::io::stdout(), "{line}").unwrap();
        if verdict.is_err() {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
