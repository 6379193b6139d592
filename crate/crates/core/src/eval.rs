//! Keypoint-level clear-MOT scoring.
//!
//! This is a simplified clear-MOT: a predicted joint may match a ground-truth
//! joint of the same type when their distance is below `dist_threshold`
//! times the diagonal of the ground-truth person's box. Each joint type is
//! matched independently per frame; ids only matter through switches.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::DEFAULT_JOINT_SCORE_FLOOR;
use crate::providers::sequence_file::{TrackedFrame, TrackedSequence};
use crate::providers::{FrameObservation, ObservationSequence};
use crate::tracking::TrackState;

pub const DEFAULT_DIST_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("frame mismatch: ground truth frame {gt} vs prediction frame {pred}")]
    FrameMismatch { gt: usize, pred: usize },
    #[error("sequence length mismatch: {gt} ground-truth frames vs {pred} predicted")]
    LengthMismatch { gt: usize, pred: usize },
    #[error("joint count mismatch: expected {expected}, got {got}")]
    JointCount { expected: usize, got: usize },
    #[error("no runs to compare")]
    NoRuns,
    #[error("run '{run}' has {got} sequences, ground truth has {expected}")]
    RunShape { run: String, expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub gt: usize,
    pub matches: usize,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
}

impl Counts {
    /// `None` when there is no ground truth to score against.
    pub fn mota(&self) -> Option<f64> {
        (self.gt > 0)
            .then(|| 1.0 - (self.misses + self.false_positives + self.id_switches) as f64 / self.gt as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        (self.gt > 0).then(|| self.matches as f64 / self.gt as f64)
    }

    fn add(&mut self, o: &Counts) {
        self.gt += o.gt;
        self.matches += o.matches;
        self.misses += o.misses;
        self.false_positives += o.false_positives;
        self.id_switches += o.id_switches;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MotTally {
    pub joint_names: Vec<String>,
    pub per_joint: Vec<Counts>,
}

impl MotTally {
    pub fn new(joint_names: Vec<String>) -> Self {
        let n = joint_names.len();
        Self { joint_names, per_joint: vec![Counts::default(); n] }
    }

    pub fn total(&self) -> Counts {
        let mut c = Counts::default();
        for j in &self.per_joint {
            c.add(j);
        }
        c
    }

    pub fn mota(&self) -> Option<f64> {
        self.total().mota()
    }

    pub fn merge(&mut self, other: &MotTally) -> Result<(), EvalError> {
        if other.per_joint.len() != self.per_joint.len() {
            return Err(EvalError::JointCount { expected: self.per_joint.len(), got: other.per_joint.len() });
        }
        for (a, b) in self.per_joint.iter_mut().zip(&other.per_joint) {
            a.add(b);
        }
        Ok(())
    }
}

/// One accepted ground-truth/prediction pairing for a joint type. Indices
/// refer to the candidate list of the ground-truth frame and the entry list
/// of the predicted frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointMatch {
    pub gt: usize,
    pub pred: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    pub frame: usize,
    /// `joints[j]` lists the matches for joint type `j`, ascending gt index.
    pub joints: Vec<Vec<JointMatch>>,
    pub gt_counts: Vec<usize>,
    pub pred_counts: Vec<usize>,
}

/// Last matched prediction id for each `(gt_id, joint)`.
pub type Continuity = BTreeMap<(u64, usize), u64>;

fn gt_valid(frame: &FrameObservation, g: usize, j: usize) -> bool {
    frame.candidates[g].pose.joints[j].score > 0.0
}

fn pred_valid(frame: &TrackedFrame, p: usize, j: usize) -> bool {
    let e = &frame.entries[p];
    e.state == TrackState::Tracked && e.pose.joints[j].score >= DEFAULT_JOINT_SCORE_FLOOR
}

/// Per-joint correspondences for one frame. A pairing carried over from
/// `continuity` is kept while it stays within threshold; the rest are
/// matched greedily by ascending distance, ties to the lower gt id and
/// then the lower prediction id.
pub fn match_frame(
    gt: &FrameObservation,
    pred: &TrackedFrame,
    continuity: &Continuity,
    dist_threshold: f64,
) -> Result<FrameMatch, EvalError> {
    if gt.index != pred.index {
        return Err(EvalError::FrameMismatch { gt: gt.index, pred: pred.index });
    }
    let n_joints = gt
        .candidates
        .first()
        .map(|c| c.pose.len())
        .or(pred.entries.first().map(|e| e.pose.len()))
        .unwrap_or(0);
    for c in &gt.candidates {
        if c.pose.len() != n_joints {
            return Err(EvalError::JointCount { expected: n_joints, got: c.pose.len() });
        }
    }
    for e in &pred.entries {
        if e.pose.len() != n_joints {
            return Err(EvalError::JointCount { expected: n_joints, got: e.pose.len() });
        }
    }

    // gt order for tie-breaks: labelled people by id, unlabelled after, by index
    let gt_rank = |g: usize| (gt.candidates[g].gt_id.is_none(), gt.candidates[g].gt_id, g);
    let pred_index: BTreeMap<u64, usize> =
        pred.entries.iter().enumerate().map(|(p, e)| (e.track_id, p)).collect();

    let mut joints = Vec::with_capacity(n_joints);
    let mut gt_counts = Vec::with_capacity(n_joints);
    let mut pred_counts = Vec::with_capacity(n_joints);
    for j in 0..n_joints {
        let gts: Vec<usize> = (0..gt.candidates.len()).filter(|&g| gt_valid(gt, g, j)).collect();
        let preds: Vec<usize> = (0..pred.entries.len()).filter(|&p| pred_valid(pred, p, j)).collect();
        gt_counts.push(gts.len());
        pred_counts.push(preds.len());

        let dist = |g: usize, p: usize| {
            let a = &gt.candidates[g].pose.joints[j];
            let b = &pred.entries[p].pose.joints[j];
            (a.x - b.x).hypot(a.y - b.y)
        };
        let limit = |g: usize| dist_threshold * gt.candidates[g].bbox.diagonal();

        let mut used_g = vec![false; gt.candidates.len()];
        let mut used_p = vec![false; pred.entries.len()];
        let mut out = Vec::new();
        for &g in &gts {
            let Some(id) = gt.candidates[g].gt_id else { continue };
            let Some(&pid) = continuity.get(&(id, j)) else { continue };
            let Some(&p) = pred_index.get(&pid) else { continue };
            if used_p[p] || !pred_valid(pred, p, j) {
                continue;
            }
            let d = dist(g, p);
            if d < limit(g) {
                used_g[g] = true;
                used_p[p] = true;
                out.push(JointMatch { gt: g, pred: p, distance: d });
            }
        }

        let mut cand = Vec::new();
        for &g in gts.iter().filter(|&&g| !used_g[g]) {
            for &p in preds.iter().filter(|&&p| !used_p[p]) {
                let d = dist(g, p);
                if d < limit(g) {
                    cand.push((d, g, p));
                }
            }
        }
        cand.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| gt_rank(a.1).cmp(&gt_rank(b.1)))
                .then_with(|| pred.entries[a.2].track_id.cmp(&pred.entries[b.2].track_id))
        });
        for (d, g, p) in cand {
            if !used_g[g] && !used_p[p] {
                used_g[g] = true;
                used_p[p] = true;
                out.push(JointMatch { gt: g, pred: p, distance: d });
            }
        }
        out.sort_by_key(|m| m.gt);
        joints.push(out);
    }
    Ok(FrameMatch { frame: gt.index, joints, gt_counts, pred_counts })
}

/// Folds one frame's matches into `tally` and updates `continuity`. A
/// switch is counted when a gt joint is matched to a different prediction
/// id than the last time it was matched.
pub fn accumulate(
    tally: &mut MotTally,
    continuity: &mut Continuity,
    gt: &FrameObservation,
    pred: &TrackedFrame,
    m: &FrameMatch,
) {
    for (j, matches) in m.joints.iter().enumerate() {
        let c = &mut tally.per_joint[j];
        c.gt += m.gt_counts[j];
        c.matches += matches.len();
        c.misses += m.gt_counts[j] - matches.len();
        c.false_positives += m.pred_counts[j] - matches.len();
        for jm in matches {
            let Some(id) = gt.candidates[jm.gt].gt_id else { continue };
            let pid = pred.entries[jm.pred].track_id;
            if let Some(prev) = continuity.insert((id, j), pid) {
                if prev != pid {
                    c.id_switches += 1;
                }
            }
        }
    }
}

pub fn mota(
    gt: &ObservationSequence,
    pred: &TrackedSequence,
    dist_threshold: f64,
) -> Result<MotTally, EvalError> {
    if gt.len() != pred.frames.len() {
        return Err(EvalError::LengthMismatch { gt: gt.len(), pred: pred.frames.len() });
    }
    let mut tally = MotTally::new(gt.joint_order.clone());
    let mut continuity = Continuity::new();
    for (g, p) in gt.frames.iter().zip(&pred.frames) {
        let m = match_frame(g, p, &continuity, dist_threshold)?;
        if !m.joints.is_empty() && m.joints.len() != tally.per_joint.len() {
            return Err(EvalError::JointCount { expected: tally.per_joint.len(), got: m.joints.len() });
        }
        accumulate(&mut tally, &mut continuity, g, p, &m);
    }
    Ok(tally)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub run: String,
    /// Joint name, or `total`.
    pub joint: String,
    pub gt: usize,
    pub miss: usize,
    pub fp: usize,
    pub idsw: usize,
    pub mota: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metric: String,
    pub dist_threshold: f64,
    pub rows: Vec<ReportRow>,
}

/// A named run: one predicted sequence per ground-truth sequence.
pub struct Run<'a> {
    pub name: String,
    pub sequences: &'a [TrackedSequence],
}

/// Scores every run against the same ground truth, summing counts over
/// sequences. Rows are per run: `total` first, then each joint.
pub fn compare_runs(gt: &[ObservationSequence], runs: &[Run<'_>], dist_threshold: f64) -> Result<Report, EvalError> {
    if runs.is_empty() {
        return Err(EvalError::NoRuns);
    }
    let names = gt.first().map(|s| s.joint_order.clone()).unwrap_or_default();
    let mut rows = Vec::new();
    for run in runs {
        if run.sequences.len() != gt.len() {
            return Err(EvalError::RunShape { run: run.name.clone(), expected: gt.len(), got: run.sequences.len() });
        }
        let mut tally = MotTally::new(names.clone());
        for (g, p) in gt.iter().zip(run.sequences) {
            tally.merge(&mota(g, p, dist_threshold)?)?;
        }
        let row = |joint: &str, c: &Counts| ReportRow {
            run: run.name.clone(),
            joint: joint.to_string(),
            gt: c.gt,
            miss: c.misses,
            fp: c.false_positives,
            idsw: c.id_switches,
            mota: c.mota(),
            recall: c.recall(),
        };
        rows.push(row("total", &tally.total()));
        for (name, c) in tally.joint_names.iter().zip(&tally.per_joint) {
            rows.push(row(name, c));
        }
    }
    Ok(Report { metric: "simplified clear-MOT (keypoint level, gt-box-diagonal normalised)".into(), dist_threshold, rows })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

impl Report {
    pub fn total(&self, run: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.run == run && r.joint == "total")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,joint,gt,miss,fp,idsw,mota,recall\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.run,
                r.joint,
                r.gt,
                r.miss,
                r.fp,
                r.idsw,
                fmt_opt(r.mota),
                fmt_opt(r.recall)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.run.len()).max().unwrap_or(3).max(3);
        let mut s = format!("{} @ {}\n", self.metric, self.dist_threshold);
        let _ = writeln!(
            s,
            "{:<width$}  {:<14} {:>8} {:>7} {:>7} {:>6} {:>9} {:>8}",
            "run", "joint", "gt", "miss", "fp", "idsw", "mota%", "recall%"
        );
        for r in &self.rows {
            let pct = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(
                s,
                "{:<width$}  {:<14} {:>8} {:>7} {:>7} {:>6} {:>9} {:>8}",
                r.run,
                r.joint,
                r.gt,
                r.miss,
                r.fp,
                r.idsw,
                pct(r.mota),
                pct(r.recall)
            );
        }
        s
    }
}
