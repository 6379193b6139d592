//! Online top-down tracking: per-target pose propagation, the
//! tracked/lost state machine, keyframe scheduling and two-stage identity
//! association.

pub mod associate;
pub mod engine;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{mean_confidence, BoundingBox, Pose};
use crate::matcher::{Embedding, MatcherError};
use crate::providers::ProviderError;

pub use associate::{pose_match, spatial_match, Assignment};
pub use engine::{run_replay, to_tracked_sequence, TrackerEngine};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("frame {frame}: {source}")]
    Provider {
        frame: usize,
        #[source]
        source: ProviderError,
    },
    #[error("pose matching is enabled but no matcher weights are loaded")]
    MatcherUnavailable,
    #[error("invalid tracker config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Tracked,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyframeMode {
    /// Detect every `keyframe_interval` frames only.
    Fki,
    /// Detect only when a target has just been lost.
    Aki,
    /// Both triggers.
    Hybrid,
}

impl std::str::FromStr for KeyframeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fki" => Ok(Self::Fki),
            "aki" => Ok(Self::Aki),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown keyframe mode '{other}'")),
        }
    }
}

pub const DEFAULT_TAU_S: f64 = 0.4;
pub const DEFAULT_TAU_O: f64 = 0.3;
pub const DEFAULT_KEYFRAME_INTERVAL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Mean joint confidence a pose must exceed to stay tracked.
    pub tau_s: f64,
    /// IOU a track/detection pair must exceed to match spatially.
    pub tau_o: f64,
    pub keyframe_interval: usize,
    pub mode: KeyframeMode,
    /// Embedding distance below which a pair matches. `None` uses the
    /// threshold stored with the matcher weights.
    pub match_threshold: Option<f64>,
    /// Second association stage on embeddings. Off means spatial only.
    pub pose_matching: bool,
    /// Lost tracks older than this are retired. `None` means twice the
    /// keyframe interval.
    pub max_lost_frames: Option<usize>,
    /// Only frame 0 may create identities.
    pub restrict_new_ids: bool,
    /// Keep per-keyframe association inputs in the frame results.
    pub record_traces: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            tau_s: DEFAULT_TAU_S,
            tau_o: DEFAULT_TAU_O,
            keyframe_interval: DEFAULT_KEYFRAME_INTERVAL,
            mode: KeyframeMode::Hybrid,
            match_threshold: None,
            pose_matching: true,
            max_lost_frames: None,
            restrict_new_ids: false,
            record_traces: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(self.tau_s > 0.0 && self.tau_s < 1.0) || !(self.tau_o > 0.0 && self.tau_o < 1.0) {
            return Err(TrackError::InvalidConfig("tau_s and tau_o must lie in (0, 1)".into()));
        }
        if self.keyframe_interval == 0 {
            return Err(TrackError::InvalidConfig("keyframe interval must be >= 1".into()));
        }
        if let Some(t) = self.match_threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(TrackError::InvalidConfig("match threshold must be finite and >= 0".into()));
            }
        }
        Ok(())
    }

    pub fn max_lost(&self) -> usize {
        self.max_lost_frames.unwrap_or(2 * self.keyframe_interval)
    }
}

/// Tracked iff the mean joint confidence strictly exceeds `tau_s`.
pub fn update_state(pose: &Pose, tau_s: f64) -> TrackState {
    if mean_confidence(pose) > tau_s {
        TrackState::Tracked
    } else {
        TrackState::Lost
    }
}

/// Whether `frame` runs the detector. `just_lost` reports a target lost
/// during this frame's propagation. Frame 0 always detects.
pub fn is_keyframe(frame: usize, cfg: &TrackerConfig, just_lost: bool) -> bool {
    let scheduled = frame.is_multiple_of(cfg.keyframe_interval);
    frame == 0
        || match cfg.mode {
            KeyframeMode::Fki => scheduled,
            KeyframeMode::Aki => just_lost,
            KeyframeMode::Hybrid => scheduled || just_lost,
        }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub last_pose: Pose,
    pub last_box: BoundingBox,
    pub last_seen_frame: usize,
    pub embedding_cache: Option<Embedding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssociationStage {
    Spatial,
    Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    pub track_id: u64,
    pub detection: usize,
    pub stage: AssociationStage,
}

/// Inputs and outcome of one keyframe association, for offline checking.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationTrace {
    /// Track ids in association order (ascending).
    pub track_ids: Vec<u64>,
    /// `iou[t][d]` between track `t` and detection `d`.
    pub iou: Vec<Vec<f64>>,
    pub tau_o: f64,
    pub spatial: Vec<(usize, usize)>,
    pub leftover_tracks: Vec<usize>,
    pub leftover_detections: Vec<usize>,
    /// Embedding distances between leftovers, `distances[a][b]` for
    /// `leftover_tracks[a]`, `leftover_detections[b]`. Empty when pose
    /// matching is off.
    pub distances: Vec<Vec<f64>>,
    pub match_threshold: f64,
    /// Pairs of indices into the leftover lists.
    pub pose: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackEntry {
    pub id: u64,
    pub pose: Pose,
    pub bbox: BoundingBox,
    pub state: TrackState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    /// Every active track, ascending id.
    pub entries: Vec<TrackEntry>,
    pub keyframe: bool,
    pub estimator_calls: usize,
    pub associations: Vec<Association>,
    pub new_ids: Vec<u64>,
    pub terminated_ids: Vec<u64>,
    pub trace: Option<AssociationTrace>,
}

impl FrameResult {
    pub fn tracked(&self) -> impl Iterator<Item = &TrackEntry> {
        self.entries.iter().filter(|e| e.state == TrackState::Tracked)
    }
}
