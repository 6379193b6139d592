#![allow(dead_code)]

use std::path::PathBuf;

use keytrack::geometry::NormalizedPose;
use keytrack::matcher::loss::{batch_loss, loss_gradients};
use keytrack::matcher::network::relu_kink_distance;
use keytrack::matcher::{Dims, GcnWeights, PairCategory, PosePair};
use keytrack::skeleton::{build_partitioned_adjacency, compute_reference_radii, PartitionedAdjacency, SkeletonTopology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn chain_topology(j: usize) -> SkeletonTopology {
    SkeletonTopology::new(
        format!("chain{j}"),
        (0..j).map(|i| format!("j{i}")).collect(),
        (1..j).map(|i| (i - 1, i)).collect(),
    )
    .unwrap()
}

pub fn topology_for(j: usize) -> SkeletonTopology {
    if j == 15 {
        SkeletonTopology::posetrack15()
    } else {
        chain_topology(j)
    }
}

pub fn random_pose(rng: &mut ChaCha8Rng, j: usize, p_invalid: f64) -> NormalizedPose {
    let coords = (0..j).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let mut valid: Vec<bool> = (0..j).map(|_| !rng.random_bool(p_invalid)).collect();
    valid[0] = true;
    NormalizedPose { coords, valid }
}

/// A random net with perturbed biases and edge importances, plus the
/// adjacency built from radii of random poses.
pub fn random_net(j: usize, hidden: usize, seed: u64) -> (GcnWeights, PartitionedAdjacency) {
    let topo = topology_for(j);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample: Vec<NormalizedPose> = (0..32).map(|_| random_pose(&mut rng, j, 0.0)).collect();
    let radii = compute_reference_radii(&sample, &topo).unwrap();
    let adj = build_partitioned_adjacency(&topo, &radii).unwrap();
    let mut w = GcnWeights::init(Dims::new(j, hidden), seed);
    let flat: Vec<f64> = w.flatten().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    w.set_flat(&flat);
    (w, adj)
}

pub struct GradCheck {
    pub max_rel: f64,
    pub params: usize,
    pub resampled: usize,
}

const STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely; central
/// differences cannot resolve relative error there.
const REL_FLOOR: f64 = 1e-6;
/// Instances whose ReLU or hinge kinks lie closer than this are redrawn so
/// the finite-difference stencil never straddles one.
const KINK_CLEARANCE: f64 = 1e-3;

/// Central finite differences against the analytic batch gradient for a
/// random net and a batch of two positive and two negative pairs.
pub fn gradient_check(j: usize, hidden: usize, seed: u64, margin: f64) -> GradCheck {
    let (w, adj) = random_net(j, hidden, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut resampled = 0;
    let pairs = loop {
        let pairs: Vec<PosePair> = (0..4)
            .map(|k| {
                let a = random_pose(&mut rng, j, 0.15);
                let b = random_pose(&mut rng, j, 0.15);
                let cat = if k % 2 == 0 { PairCategory::Positive } else { PairCategory::HardNegative };
                PosePair::new(a, b, cat)
            })
            .collect();
        let near_kink = pairs.iter().any(|p| {
            let relu = relu_kink_distance(&p.a, &w, &adj).unwrap().min(relu_kink_distance(&p.b, &w, &adj).unwrap());
            let d = keytrack::matcher::pose_distance(
                &keytrack::matcher::embed(&p.a, &w, &adj).unwrap(),
                &keytrack::matcher::embed(&p.b, &w, &adj).unwrap(),
            );
            relu < KINK_CLEARANCE || (p.label == 0 && (margin - d * d).abs() < KINK_CLEARANCE)
        });
        if !near_kink {
            break pairs;
        }
        resampled += 1;
    };
    let batch: Vec<&PosePair> = pairs.iter().collect();
    let analytic = loss_gradients(&batch, &w, &adj, margin).unwrap().grad.flatten();
    let base = w.flatten();
    let mut probe = w.clone();
    let mut max_rel: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut x = base.clone();
        x[i] = base[i] + STEP;
        probe.set_flat(&x);
        let up = batch_loss(&batch, &probe, &adj, margin).unwrap();
        x[i] = base[i] - STEP;
        probe.set_flat(&x);
        let down = batch_loss(&batch, &probe, &adj, margin).unwrap();
        let n = (up - down) / (2.0 * STEP);
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR);
        max_rel = max_rel.max(rel);
    }
    GradCheck { max_rel, params: analytic.len(), resampled }
}

/// Exhaustive assignment search: the largest set of eligible one-to-one
/// pairs, ties broken by the best total score (highest when `maximize`,
/// lowest otherwise). Pairs come back sorted.
pub fn brute_force_assignment(
    scores: &[Vec<f64>],
    n_det: usize,
    eligible: &dyn Fn(f64) -> bool,
    maximize: bool,
) -> Vec<(usize, usize)> {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        t: usize,
        scores: &[Vec<f64>],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        total: f64,
        best: &mut (usize, f64, Vec<(usize, usize)>),
        eligible: &dyn Fn(f64) -> bool,
        maximize: bool,
    ) {
        if t == scores.len() {
            let better = cur.len() > best.0
                || (cur.len() == best.0 && if maximize { total > best.1 } else { total < best.1 });
            if better {
                *best = (cur.len(), total, cur.clone());
            }
            return;
        }
        rec(t + 1, scores, used, cur, total, best, eligible, maximize);
        for d in 0..used.len() {
            if !used[d] && eligible(scores[t][d]) {
                used[d] = true;
                cur.push((t, d));
                rec(t + 1, scores, used, cur, total + scores[t][d], best, eligible, maximize);
                cur.pop();
                used[d] = false;
            }
        }
    }
    let mut best = (0, if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, Vec::new());
    rec(0, scores, &mut vec![false; n_det], &mut Vec::new(), 0.0, &mut best, eligible, maximize);
    let mut pairs = best.2;
    pairs.sort_unstable();
    pairs
}

use std::collections::BTreeMap;

use keytrack::geometry::{bbox_from_pose, Keypoint, Pose};
use keytrack::providers::sequence_file::{TrackedEntry, TrackedFrame, TrackedSequence};
use keytrack::providers::{Candidate, FrameObservation, ObservationSequence};
use keytrack::skeleton::DEFAULT_JOINT_ORDER;
use keytrack::tracking::TrackState;

/// A 15-joint figure whose box is `[x, x + w] × [y, y + 2w]`.
pub fn figure(x: f64, y: f64, w: f64) -> Pose {
    Pose::new(
        (0..15)
            .map(|j| {
                let fx = [0.5, 0.5, 0.5, 0.2, 0.8, 0.1, 0.9, 0.0, 1.0, 0.35, 0.65, 0.3, 0.7, 0.25, 0.75][j];
                let fy = [0.0, 0.15, 0.08, 0.2, 0.2, 0.35, 0.35, 0.5, 0.5, 0.55, 0.55, 0.75, 0.75, 1.0, 1.0][j];
                Keypoint::new(x + fx * w, y + fy * 2.0 * w, 0.9)
            })
            .collect(),
    )
}

pub fn candidate(gt_id: Option<u64>, pose: Pose) -> Candidate {
    let bbox = bbox_from_pose(&pose).unwrap();
    Candidate { gt_id, pose, bbox }
}

pub fn sequence(frames: Vec<Vec<Candidate>>) -> ObservationSequence {
    ObservationSequence {
        seq_id: "t".into(),
        image_size: [1280, 720],
        joint_order: DEFAULT_JOINT_ORDER.iter().map(|s| s.to_string()).collect(),
        frames: frames
            .into_iter()
            .enumerate()
            .map(|(index, candidates)| FrameObservation { index, candidates })
            .collect(),
    }
}

/// Predictions that copy the ground truth, track id = gt id.
pub fn perfect_prediction(gt: &ObservationSequence) -> TrackedSequence {
    TrackedSequence {
        seq_id: gt.seq_id.clone(),
        image_size: gt.image_size,
        joint_order: gt.joint_order.clone(),
        frames: gt
            .frames
            .iter()
            .map(|f| TrackedFrame {
                index: f.index,
                keyframe: false,
                entries: f
                    .candidates
                    .iter()
                    .map(|c| TrackedEntry {
                        track_id: c.gt_id.unwrap(),
                        state: TrackState::Tracked,
                        pose: c.pose.clone(),
                        bbox: c.bbox,
                    })
                    .collect(),
            })
            .collect(),
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct NaiveCounts {
    pub gt: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

/// Straightforward clear-MOT reference: per joint type and frame, keep the
/// previous pairing if still close, then repeatedly take the closest free
/// pair (ties: smaller gt id, then smaller track id). Ground truth must be
/// fully labelled.
pub fn naive_mota(gt: &ObservationSequence, pred: &TrackedSequence, thr: f64) -> NaiveCounts {
    let j_count = gt.joint_order.len();
    let mut out = NaiveCounts::default();
    let mut last: BTreeMap<(u64, usize), u64> = BTreeMap::new();
    for (gf, pf) in gt.frames.iter().zip(&pred.frames) {
        for j in 0..j_count {
            let gts: Vec<&Candidate> = gf.candidates.iter().filter(|c| c.pose.joints[j].score > 0.0).collect();
            let preds: Vec<&TrackedEntry> = pf
                .entries
                .iter()
                .filter(|e| e.state == TrackState::Tracked && e.pose.joints[j].score >= 0.05)
                .collect();
            let d = |g: &Candidate, p: &TrackedEntry| {
                let (a, b) = (g.pose.joints[j], p.pose.joints[j]);
                ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
            };
            let ok = |g: &Candidate, p: &TrackedEntry| d(g, p) < thr * g.bbox.diagonal();
            let mut free_g: Vec<bool> = vec![true; gts.len()];
            let mut free_p: Vec<bool> = vec![true; preds.len()];
            let mut matched: Vec<(u64, u64)> = Vec::new();
            for (gi, g) in gts.iter().enumerate() {
                let id = g.gt_id.unwrap();
                if let Some(&pid) = last.get(&(id, j)) {
                    if let Some(pi) = preds.iter().position(|p| p.track_id == pid) {
                        if free_p[pi] && ok(g, preds[pi]) {
                            free_g[gi] = false;
                            free_p[pi] = false;
                            matched.push((id, pid));
                        }
                    }
                }
            }
            loop {
                let mut best: Option<(f64, u64, u64, usize, usize)> = None;
                for (gi, g) in gts.iter().enumerate() {
                    for (pi, p) in preds.iter().enumerate() {
                        if !free_g[gi] || !free_p[pi] || !ok(g, p) {
                            continue;
                        }
                        let key = (d(g, p), g.gt_id.unwrap(), p.track_id, gi, pi);
                        let better = match best {
                            None => true,
                            Some(b) => (key.0, key.1, key.2) < (b.0, b.1, b.2),
                        };
                        if better {
                            best = Some(key);
                        }
                    }
                }
                let Some((_, gid, pid, gi, pi)) = best else { break };
                free_g[gi] = false;
                free_p[pi] = false;
                matched.push((gid, pid));
            }
            out.gt += gts.len();
            out.misses += gts.len() - matched.len();
            out.false_positives += preds.len() - matched.len();
            for (gid, pid) in matched {
                if let Some(prev) = last.insert((gid, j), pid) {
                    if prev != pid {
                        out.id_switches += 1;
                    }
                }
            }
        }
    }
    out
}

/// Random small scenario: gt with partial joint visibility, predictions that
/// jitter, drop, spawn and swap ids.
pub fn random_scenario(seed: u64) -> (ObservationSequence, TrackedSequence) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let people = rng.random_range(1..4usize);
    let n_frames = rng.random_range(1..7usize);
    let starts: Vec<(f64, f64)> =
        (0..people).map(|_| (rng.random_range(0.0..300.0), rng.random_range(0.0..200.0))).collect();
    let mut frames = Vec::new();
    for t in 0..n_frames {
        let mut cands = Vec::new();
        for (p, &(x, y)) in starts.iter().enumerate() {
            if !rng.random_bool(0.9) {
                continue;
            }
            let mut c = candidate(Some(p as u64 + 1), figure(x + 3.0 * t as f64, y, 40.0));
            for k in &mut c.pose.joints {
                if rng.random_bool(0.15) {
                    k.score = 0.0;
                }
            }
            cands.push(c);
        }
        frames.push(cands);
    }
    let gt = sequence(frames);
    let mut pred = perfect_prediction(&gt);
    for f in &mut pred.frames {
        for e in &mut f.entries {
            for k in &mut e.pose.joints {
                k.x += rng.random_range(-12.0..12.0);
                k.y += rng.random_range(-12.0..12.0);
                k.score = if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.0..1.0) };
            }
            if rng.random_bool(0.2) {
                e.track_id += 10 * rng.random_range(1..3u64);
            }
            if rng.random_bool(0.1) {
                e.state = TrackState::Lost;
            }
        }
        if rng.random_bool(0.4) {
            let &(x, y) = &starts[rng.random_range(0..people)];
            let pose = figure(x + rng.random_range(-6.0..6.0), y + rng.random_range(-6.0..6.0), 40.0);
            let id = 100 + rng.random_range(0..3u64);
            if f.entries.iter().all(|e| e.track_id != id) {
                f.entries.push(TrackedEntry { track_id: id, state: TrackState::Tracked, bbox: bbox_from_pose(&pose).unwrap(), pose });
            }
        }
    }
    (gt, pred)
}
