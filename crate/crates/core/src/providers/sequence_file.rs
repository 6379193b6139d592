//! JSON sequence files.
//!
//! Observation sequence (input):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "seq_id": "name",
//!   "image_size": [w, h],
//!   "joint_order": ["head_top", ...],
//!   "frames": [
//!     { "index": 0,
//!       "candidates": [ { "gt_id": 3,                       // optional
//!                         "keypoints": [[x, y, score], ...],  // one per joint
//!                         "bbox": [x_min, y_min, x_max, y_max] } ] } // optional
//!   ]
//! }
//! ```
//!
//! Tracked output uses the same document with `"keyframe": bool` on every
//! frame and `"track_id"`, `"state"` (`"tracked"` | `"lost"`) on every
//! candidate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Candidate, FrameObservation, ObservationSequence, ProviderError};
use crate::geometry::{bbox_from_pose, BoundingBox, Keypoint, Pose};
use crate::tracking::TrackState;

pub const SEQUENCE_FORMAT_VERSION: u32 = 1;

/// Keypoints further than this fraction of the image size outside the
/// image trigger a warning.
pub const BOUNDS_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_id: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<TrackState>,
    pub keypoints: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframe: Option<bool>,
    pub candidates: Vec<CandidateRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub format_version: u32,
    pub seq_id: String,
    pub image_size: [u32; 2],
    pub joint_order: Vec<String>,
    pub frames: Vec<FrameRecord>,
}

pub fn pose_from_keypoints(kps: &[[f64; 3]]) -> Pose {
    Pose::new(kps.iter().map(|k| Keypoint::new(k[0], k[1], k[2])).collect())
}

pub fn keypoints_of(pose: &Pose) -> Vec<[f64; 3]> {
    pose.joints.iter().map(|k| [k.x, k.y, k.score]).collect()
}

fn bbox_of(b: [f64; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3])
}

/// Parses and version-checks a document without semantic validation.
pub fn parse_record(text: &str) -> Result<SequenceRecord, ProviderError> {
    #[derive(Deserialize)]
    struct Version {
        format_version: u32,
    }
    let parse_err = |e: serde_json::Error| ProviderError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    };
    let v: Version = serde_json::from_str(text).map_err(parse_err)?;
    if v.format_version != SEQUENCE_FORMAT_VERSION {
        return Err(ProviderError::SchemaVersion {
            found: v.format_version,
            expected: SEQUENCE_FORMAT_VERSION,
        });
    }
    serde_json::from_str(text).map_err(parse_err)
}

/// Structural checks shared by observation and tracked documents.
pub fn validate_record(rec: &SequenceRecord) -> Result<(), ProviderError> {
    let invalid = |m: String| Err(ProviderError::Validation(m));
    let j = rec.joint_order.len();
    if j == 0 {
        return invalid("joint_order is empty".into());
    }
    for (t, f) in rec.frames.iter().enumerate() {
        if f.index != t {
            return invalid(format!("frames[{t}].index is {}, expected {t} (indices must be dense from 0)", f.index));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (c, cand) in f.candidates.iter().enumerate() {
            let at = format!("frames[{t}].candidates[{c}]");
            if cand.keypoints.len() != j {
                return invalid(format!("{at}.keypoints has {} entries, expected {j}", cand.keypoints.len()));
            }
            for (k, kp) in cand.keypoints.iter().enumerate() {
                if !kp[0].is_finite() || !kp[1].is_finite() {
                    return invalid(format!("{at}.keypoints[{k}] has a non-finite coordinate"));
                }
                if !(0.0..=1.0).contains(&kp[2]) {
                    return invalid(format!("{at}.keypoints[{k}] score {} outside [0, 1]", kp[2]));
                }
            }
            if let Some(b) = cand.bbox {
                if !bbox_of(b).is_valid() {
                    return invalid(format!("{at}.bbox {b:?} is not a valid box"));
                }
            }
            if let Some(id) = cand.gt_id {
                if !ids.insert(id) {
                    return invalid(format!("{at}.gt_id {id} repeated within frame {t}"));
                }
            }
        }
    }
    Ok(())
}

pub fn sequence_from_record(rec: SequenceRecord) -> Result<ObservationSequence, ProviderError> {
    validate_record(&rec)?;
    let frames = rec
        .frames
        .into_iter()
        .enumerate()
        .map(|(t, f)| {
            let candidates = f
                .candidates
                .into_iter()
                .enumerate()
                .map(|(c, cand)| {
                    let pose = pose_from_keypoints(&cand.keypoints);
                    let bbox = match cand.bbox {
                        Some(b) => bbox_of(b),
                        None => bbox_from_pose(&pose).map_err(|e| {
                            ProviderError::Validation(format!(
                                "frames[{t}].candidates[{c}]: no bbox and none inferable: {e}"
                            ))
                        })?,
                    };
                    Ok(Candidate {
                        gt_id: cand.gt_id,
                        pose,
                        bbox,
                    })
                })
                .collect::<Result<Vec<_>, ProviderError>>()?;
            Ok(FrameObservation {
                index: f.index,
                candidates,
            })
        })
        .collect::<Result<Vec<_>, ProviderError>>()?;
    Ok(ObservationSequence {
        seq_id: rec.seq_id,
        image_size: rec.image_size,
        joint_order: rec.joint_order,
        frames,
    })
}

pub fn parse_sequence(text: &str) -> Result<ObservationSequence, ProviderError> {
    sequence_from_record(parse_record(text)?)
}

/// Reads, version-checks and validates a sequence file. Candidates
/// without a box get the one inferred from their keypoints.
pub fn load_sequence(path: &Path) -> Result<ObservationSequence, ProviderError> {
    let text = fs::read_to_string(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
    parse_sequence(&text)
}

pub fn sequence_to_record(seq: &ObservationSequence) -> SequenceRecord {
    SequenceRecord {
        format_version: SEQUENCE_FORMAT_VERSION,
        seq_id: seq.seq_id.clone(),
        image_size: seq.image_size,
        joint_order: seq.joint_order.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| FrameRecord {
                index: f.index,
                keyframe: None,
                candidates: f
                    .candidates
                    .iter()
                    .map(|c| CandidateRecord {
                        gt_id: c.gt_id,
                        track_id: None,
                        state: None,
                        keypoints: keypoints_of(&c.pose),
                        bbox: Some(c.bbox.to_array()),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn record_to_json(rec: &SequenceRecord) -> String {
    serde_json::to_string(rec).expect("sequence serializes")
}

pub fn sequence_to_json(seq: &ObservationSequence) -> String {
    record_to_json(&sequence_to_record(seq))
}

pub fn save_sequence(seq: &ObservationSequence, path: &Path) -> Result<(), ProviderError> {
    validate_record(&sequence_to_record(seq))?;
    fs::write(path, sequence_to_json(seq)).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))
}

/// Keypoints lying well outside the image. Not an error.
pub fn bounds_warnings(seq: &ObservationSequence) -> Vec<String> {
    let [w, h] = seq.image_size.map(f64::from);
    let (mx, my) = (BOUNDS_MARGIN * w, BOUNDS_MARGIN * h);
    let mut out = Vec::new();
    for f in &seq.frames {
        for (c, cand) in f.candidates.iter().enumerate() {
            if cand
                .pose
                .joints
                .iter()
                .any(|k| k.x < -mx || k.x > w + mx || k.y < -my || k.y > h + my)
            {
                out.push(format!("frame {} candidate {c}: keypoints far outside the image", f.index));
            }
        }
    }
    out
}

/// One entry of a tracked-output frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedEntry {
    pub track_id: u64,
    pub state: TrackState,
    pub pose: Pose,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub index: usize,
    pub keyframe: bool,
    pub entries: Vec<TrackedEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedSequence {
    pub seq_id: String,
    pub image_size: [u32; 2],
    pub joint_order: Vec<String>,
    pub frames: Vec<TrackedFrame>,
}

pub fn tracked_to_record(seq: &TrackedSequence) -> SequenceRecord {
    SequenceRecord {
        format_version: SEQUENCE_FORMAT_VERSION,
        seq_id: seq.seq_id.clone(),
        image_size: seq.image_size,
        joint_order: seq.joint_order.clone(),
        frames: seq
            .frames
            .iter()
            .map(|f| FrameRecord {
                index: f.index,
                keyframe: Some(f.keyframe),
                candidates: f
                    .entries
                    .iter()
                    .map(|e| CandidateRecord {
                        gt_id: None,
                        track_id: Some(e.track_id),
                        state: Some(e.state),
                        keypoints: keypoints_of(&e.pose),
                        bbox: Some(e.bbox.to_array()),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn tracked_to_json(seq: &TrackedSequence) -> String {
    record_to_json(&tracked_to_record(seq))
}

pub fn parse_tracked(text: &str) -> Result<TrackedSequence, ProviderError> {
    let rec = parse_record(text)?;
    validate_record(&rec)?;
    let frames = rec
        .frames
        .into_iter()
        .map(|f| {
            let mut seen = std::collections::BTreeSet::new();
            let entries = f
                .candidates
                .into_iter()
                .enumerate()
                .map(|(c, cand)| {
                    let at = format!("frames[{}].candidates[{c}]", f.index);
                    let track_id = cand
                        .track_id
                        .ok_or_else(|| ProviderError::Validation(format!("{at}: missing track_id")))?;
                    if !seen.insert(track_id) {
                        return Err(ProviderError::Validation(format!("{at}: track_id {track_id} repeated")));
                    }
                    let pose = pose_from_keypoints(&cand.keypoints);
                    let bbox = match cand.bbox {
                        Some(b) => bbox_of(b),
                        None => bbox_from_pose(&pose)?,
                    };
                    Ok(TrackedEntry {
                        track_id,
                        state: cand.state.unwrap_or(TrackState::Tracked),
                        pose,
                        bbox,
                    })
                })
                .collect::<Result<Vec<_>, ProviderError>>()?;
            Ok(TrackedFrame {
                index: f.index,
                keyframe: f.keyframe.unwrap_or(false),
                entries,
            })
        })
        .collect::<Result<Vec<_>, ProviderError>>()?;
    Ok(TrackedSequence {
        seq_id: rec.seq_id,
        image_size: rec.image_size,
        joint_order: rec.joint_order,
        frames,
    })
}

pub fn load_tracked(path: &Path) -> Result<TrackedSequence, ProviderError> {
    let text = fs::read_to_string(path).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))?;
    parse_tracked(&text)
}

pub fn save_tracked(seq: &TrackedSequence, path: &Path) -> Result<(), ProviderError> {
    fs::write(path, tracked_to_json(seq)).map_err(|e| ProviderError::Io(format!("{}: {e}", path.display())))
}
