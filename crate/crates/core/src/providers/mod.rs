//! Detector and estimator interfaces, replay and synthetic implementations,
//! and the sequence file formats.

pub mod posetrack;
pub mod replay;
pub mod sequence_file;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BoundingBox, GeometryError, Pose};

pub use replay::{ReplayDetector, ReplayEstimator, ReplayNoise, DEFAULT_CONTAINMENT_FLOOR};
pub use sequence_file::{load_sequence, save_sequence, sequence_to_json};
pub use synth::{synth_pair_benchmark, synth_sequence, PairBenchConfig, SynthConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("unsupported format version {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("frame {frame} out of range (sequence has {len} frames)")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One person in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub gt_id: Option<u64>,
    pub pose: Pose,
    pub bbox: BoundingBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameObservation {
    pub index: usize,
    pub candidates: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSequence {
    pub seq_id: String,
    pub image_size: [u32; 2],
    pub joint_order: Vec<String>,
    pub frames: Vec<FrameObservation>,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, frame: usize) -> Result<&FrameObservation, ProviderError> {
        self.frames.get(frame).ok_or(ProviderError::FrameOutOfRange {
            frame,
            len: self.frames.len(),
        })
    }

    pub fn max_people(&self) -> usize {
        self.frames.iter().map(|f| f.candidates.len()).max().unwrap_or(0)
    }
}

/// A person candidate produced by a detector at a keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub pose: Pose,
}

pub trait Detector {
    fn detect(&self, frame: usize) -> Result<Vec<Detection>, ProviderError>;
}

/// Single-person pose estimator run inside a region of interest.
pub trait Estimator {
    fn estimate(&self, frame: usize, roi: &BoundingBox) -> Result<Pose, ProviderError>;
}
