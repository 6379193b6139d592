//! Online top-down multi-person pose tracking with a graph-convolutional
//! pose matcher.
//!
//! The pipeline: per-target pose propagation through an enlarged box,
//! a tracked/lost state machine, keyframe detection, and identity
//! association by box overlap followed by skeleton-embedding distance.

pub mod cli;
pub mod eval;
pub mod geometry;
pub mod matcher;
pub mod providers;
pub mod skeleton;
pub mod tracking;

use thiserror::Error;

pub use geometry::{bbox_from_pose, iou, mean_confidence, normalize_pose, BoundingBox, Keypoint, NormalizedPose, Pose};
pub use matcher::{PoseMatcher, TrainConfig};
pub use providers::ObservationSequence;
pub use tracking::{TrackerConfig, TrackerEngine};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Graph(#[from] skeleton::GraphError),
    #[error(transparent)]
    Matcher(#[from] matcher::MatcherError),
    #[error(transparent)]
    Provider(#[from] providers::ProviderError),
    #[error(transparent)]
    Track(#[from] tracking::TrackError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}
