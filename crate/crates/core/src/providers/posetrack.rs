//! Converter from PoseTrack-style JSON annotations (one file per video,
//! `images` + `annotations` + `categories`) to the sequence format.
//!
//! Joint mapping into the canonical order:
//!
//! | canonical       | PoseTrack keypoint |
//! |-----------------|--------------------|
//! | head_top        | head_top           |
//! | neck            | head_bottom        |
//! | nose            | nose               |
//! | left/right_*    | same name          |
//!
//! `left_ear` / `right_ear` are dropped. A keypoint with visibility flag 0
//! gets score 0, otherwise 1. Frames follow the order of `images` (sorted
//! by `frame_id` when present, else `id`). Boxes are always inferred from
//! the keypoints; annotations with fewer than two labelled joints are
//! skipped.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{Candidate, FrameObservation, ObservationSequence, ProviderError};
use crate::geometry::{bbox_from_pose, Keypoint, Pose};
use crate::skeleton::DEFAULT_JOINT_ORDER;

/// PoseTrack'18 keypoint order, used when the file has no `categories`.
pub const POSETRACK_KEYPOINTS: [&str; 17] = [
    "nose",
    "head_bottom",
    "head_top",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

fn source_name(canonical: &str) -> &str {
    match canonical {
        "neck" => "head_bottom",
        other => other,
    }
}

#[derive(Debug, Deserialize)]
struct PtImage {
    id: u64,
    #[serde(default)]
    frame_id: Option<u64>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct PtAnnotation {
    image_id: u64,
    #[serde(default)]
    track_id: Option<u64>,
    #[serde(default)]
    keypoints: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct PtCategory {
    #[serde(default)]
    keypoints: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct PtFile {
    images: Vec<PtImage>,
    annotations: Vec<PtAnnotation>,
    #[serde(default)]
    categories: Vec<PtCategory>,
}

pub fn convert_posetrack(text: &str, seq_id: &str) -> Result<ObservationSequence, ProviderError> {
    let file: PtFile = serde_json::from_str(text).map_err(|e| ProviderError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let names: Vec<String> = match file.categories.first() {
        Some(c) if !c.keypoints.is_empty() => c.keypoints.clone(),
        _ => POSETRACK_KEYPOINTS.iter().map(|s| s.to_string()).collect(),
    };
    let mapping = DEFAULT_JOINT_ORDER
        .iter()
        .map(|c| {
            names.iter().position(|n| n == source_name(c)).ok_or_else(|| {
                ProviderError::Validation(format!("annotation keypoints lack '{}'", source_name(c)))
            })
        })
        .collect::<Result<Vec<usize>, _>>()?;

    let mut images: Vec<&PtImage> = file.images.iter().collect();
    images.sort_by_key(|im| (im.frame_id.unwrap_or(im.id), im.id));
    let slot: BTreeMap<u64, usize> = images.iter().enumerate().map(|(i, im)| (im.id, i)).collect();
    let mut frames: Vec<FrameObservation> = (0..images.len())
        .map(|index| FrameObservation {
            index,
            candidates: Vec::new(),
        })
        .collect();

    for (a, ann) in file.annotations.iter().enumerate() {
        let Some(&t) = slot.get(&ann.image_id) else {
            return Err(ProviderError::Validation(format!(
                "annotation {a} references unknown image {}",
                ann.image_id
            )));
        };
        if ann.keypoints.len() != 3 * names.len() {
            continue;
        }
        let pose = Pose::new(
            mapping
                .iter()
                .map(|&k| {
                    let (x, y, v) = (ann.keypoints[3 * k], ann.keypoints[3 * k + 1], ann.keypoints[3 * k + 2]);
                    Keypoint::new(x, y, if v > 0.0 { 1.0 } else { 0.0 })
                })
                .collect(),
        );
        let Ok(bbox) = bbox_from_pose(&pose) else {
            continue;
        };
        if let Some(id) = ann.track_id {
            if frames[t].candidates.iter().any(|c| c.gt_id == Some(id)) {
                return Err(ProviderError::Validation(format!(
                    "track_id {id} repeated in image {}",
                    ann.image_id
                )));
            }
        }
        frames[t].candidates.push(Candidate {
            gt_id: ann.track_id,
            pose,
            bbox,
        });
    }
    let size = images
        .iter()
        .find_map(|im| Some([im.width?, im.height?]))
        .unwrap_or([1920, 1080]);
    Ok(ObservationSequence {
        seq_id: seq_id.to_string(),
        image_size: size,
        joint_order: DEFAULT_JOINT_ORDER.iter().map(|s| s.to_string()).collect(),
        frames,
    })
}
