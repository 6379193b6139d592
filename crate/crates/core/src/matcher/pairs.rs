//! Pose pairs for training and evaluating the matcher, and mining them from
//! annotated sequences.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MatcherError;
use crate::geometry::{iou, normalize_pose, NormalizedPose};
use crate::providers::{Candidate, ObservationSequence};

pub const PAIR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCategory {
    Positive,
    HardNegative,
    OtherNegative,
}

impl PairCategory {
    pub fn label(self) -> u8 {
        u8::from(self == PairCategory::Positive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    pub a: NormalizedPose,
    pub b: NormalizedPose,
    /// 1 for the same person, 0 otherwise.
    pub label: u8,
    pub category: PairCategory,
}

impl PosePair {
    pub fn new(a: NormalizedPose, b: NormalizedPose, category: PairCategory) -> Self {
        Self {
            a,
            b,
            label: category.label(),
            category,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub positive: usize,
    pub hard_negative: usize,
    pub other_negative: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDataset {
    pub format_version: u32,
    pub joint_order: Vec<String>,
    pub pairs: Vec<PosePair>,
}

impl PairDataset {
    pub fn new(joint_order: Vec<String>, pairs: Vec<PosePair>) -> Self {
        Self {
            format_version: PAIR_FORMAT_VERSION,
            joint_order,
            pairs,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn counts(&self) -> PairCounts {
        let mut c = PairCounts::default();
        for p in &self.pairs {
            match p.category {
                PairCategory::Positive => c.positive += 1,
                PairCategory::HardNegative => c.hard_negative += 1,
                PairCategory::OtherNegative => c.other_negative += 1,
            }
        }
        c
    }

    /// Positive and hard-negative pairs only, the subset used for
    /// accuracy and threshold calibration.
    pub fn hard_subset(&self) -> Vec<&PosePair> {
        self.pairs
            .iter()
            .filter(|p| p.category != PairCategory::OtherNegative)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self, MatcherError> {
        let text = fs::read_to_string(path).map_err(|e| MatcherError::Io(format!("{}: {e}", path.display())))?;
        let ds: PairDataset = serde_json::from_str(&text)
            .map_err(|e| MatcherError::Format(format!("{}: {e}", path.display())))?;
        if ds.format_version != PAIR_FORMAT_VERSION {
            return Err(MatcherError::Format(format!(
                "unsupported pair file version {}",
                ds.format_version
            )));
        }
        for (i, p) in ds.pairs.iter().enumerate() {
            let j = ds.joint_order.len();
            if p.a.len() != j || p.b.len() != j || p.a.valid.len() != j || p.b.valid.len() != j {
                return Err(MatcherError::Format(format!("pair {i} does not have {j} joints")));
            }
            if p.label != p.category.label() {
                return Err(MatcherError::Format(format!("pair {i} label disagrees with category")));
            }
        }
        Ok(ds)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pair dataset serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), MatcherError> {
        fs::write(path, self.to_json()).map_err(|e| MatcherError::Io(format!("{}: {e}", path.display())))
    }
}

fn normalized(c: &Candidate) -> Option<NormalizedPose> {
    normalize_pose(&c.pose, &c.bbox).ok()
}

fn classify(a: &Candidate, b: &Candidate) -> Option<PairCategory> {
    match (a.gt_id, b.gt_id) {
        (Some(x), Some(y)) if x == y => Some(PairCategory::Positive),
        (Some(_), Some(_)) if iou(&a.bbox, &b.bbox) > 0.0 => Some(PairCategory::HardNegative),
        (Some(_), Some(_)) => Some(PairCategory::OtherNegative),
        _ => None,
    }
}

/// Mines pairs from sequences carrying ground-truth ids:
///
/// * positives: the same id in adjacent frames
/// * hard negatives: different ids with overlapping boxes, in the same or
///   adjacent frames
/// * other negatives: different ids without overlap, same or adjacent frames
///
/// Candidates without an id or with a degenerate box are skipped.
pub fn generate_pairs(sequences: &[ObservationSequence]) -> PairDataset {
    let joint_order = sequences
        .first()
        .map(|s| s.joint_order.clone())
        .unwrap_or_default();
    let mut pairs = Vec::new();
    let mut push = |a: &Candidate, b: &Candidate, cat: PairCategory| {
        if let (Some(na), Some(nb)) = (normalized(a), normalized(b)) {
            pairs.push(PosePair::new(na, nb, cat));
        }
    };
    for seq in sequences {
        for (t, frame) in seq.frames.iter().enumerate() {
            let cands = &frame.candidates;
            for (i, a) in cands.iter().enumerate() {
                for b in &cands[i + 1..] {
                    match classify(a, b) {
                        Some(PairCategory::Positive) | None => {}
                        Some(cat) => push(a, b, cat),
                    }
                }
            }
            if let Some(next) = seq.frames.get(t + 1) {
                for a in cands {
                    for b in &next.candidates {
                        if let Some(cat) = classify(a, b) {
                            push(a, b, cat);
                        }
                    }
                }
            }
        }
    }
    PairDataset::new(joint_order, pairs)
}
