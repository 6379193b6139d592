//! Siamese graph-convolution pose matcher.

pub mod accuracy;
pub mod loss;
pub mod network;
pub mod pairs;
pub mod train;
pub mod weights_file;

use thiserror::Error;

use crate::geometry::{GeometryError, NormalizedPose};
use crate::skeleton::{
    build_partitioned_adjacency, GraphError, PartitionedAdjacency, ReferenceRadii, SkeletonTopology,
};

pub use accuracy::{calibrate_threshold, euclidean_distance, matching_accuracy};
pub use loss::{contrastive_loss, loss_gradients};
pub use network::{embed, gcn_layer_forward, pose_distance, Dims, Embedding, GcnLayer, GcnWeights};
pub use pairs::{generate_pairs, PairCategory, PairDataset, PosePair};
pub use train::{fit_matcher, train, TrainConfig, TrainOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatcherError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dataset holds a single label")]
    DegenerateDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("weights file: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Trained weights bundled with everything needed to run them: topology,
/// reference radii, the derived adjacency, the margin they were trained
/// with and the calibrated match threshold.
#[derive(Debug, Clone)]
pub struct PoseMatcher {
    pub topology: SkeletonTopology,
    pub radii: ReferenceRadii,
    pub adjacency: PartitionedAdjacency,
    pub weights: GcnWeights,
    pub margin: f64,
    pub threshold: f64,
}

impl PoseMatcher {
    pub fn new(
        topology: SkeletonTopology,
        radii: ReferenceRadii,
        weights: GcnWeights,
        margin: f64,
        threshold: f64,
    ) -> Result<Self, MatcherError> {
        weights.validate()?;
        if weights.dims.joints != topology.num_joints() {
            return Err(MatcherError::ShapeMismatch(format!(
                "weights for {} joints, topology has {}",
                weights.dims.joints,
                topology.num_joints()
            )));
        }
        let adjacency = build_partitioned_adjacency(&topology, &radii)?;
        Ok(Self {
            topology,
            radii,
            adjacency,
            weights,
            margin,
            threshold,
        })
    }

    pub fn embed(&self, pose: &NormalizedPose) -> Result<Embedding, MatcherError> {
        embed(pose, &self.weights, &self.adjacency)
    }

    pub fn distance(&self, a: &NormalizedPose, b: &NormalizedPose) -> Result<f64, MatcherError> {
        Ok(pose_distance(&self.embed(a)?, &self.embed(b)?))
    }

    pub fn is_match(&self, distance: f64) -> bool {
        distance < self.threshold
    }
}
