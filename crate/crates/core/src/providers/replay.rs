//! Detector and estimator that replay the candidates recorded in a
//! sequence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Detection, Detector, Estimator, ObservationSequence, ProviderError};
use crate::geometry::{BoundingBox, Keypoint, Pose, DEFAULT_JOINT_SCORE_FLOOR};

/// Fraction of a candidate's joints that must fall inside the ROI for the
/// estimator to lock on.
pub const DEFAULT_CONTAINMENT_FLOOR: f64 = 0.3;

pub struct ReplayDetector<'a> {
    seq: &'a ObservationSequence,
}

impl<'a> ReplayDetector<'a> {
    pub fn new(seq: &'a ObservationSequence) -> Self {
        Self { seq }
    }
}

impl Detector for ReplayDetector<'_> {
    fn detect(&self, frame: usize) -> Result<Vec<Detection>, ProviderError> {
        Ok(self
            .seq
            .frame(frame)?
            .candidates
            .iter()
            .map(|c| Detection {
                bbox: c.bbox,
                pose: c.pose.clone(),
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayNoise {
    /// Gaussian coordinate noise in pixels, clipped at three sigma.
    pub coord_sigma: f64,
    /// Half-width of the uniform score jitter.
    pub score_jitter: f64,
    pub seed: u64,
}

impl Default for ReplayNoise {
    fn default() -> Self {
        Self {
            coord_sigma: 0.0,
            score_jitter: 0.0,
            seed: 0,
        }
    }
}

pub struct ReplayEstimator<'a> {
    seq: &'a ObservationSequence,
    pub containment_floor: f64,
    pub noise: ReplayNoise,
}

impl<'a> ReplayEstimator<'a> {
    pub fn new(seq: &'a ObservationSequence) -> Self {
        Self {
            seq,
            containment_floor: DEFAULT_CONTAINMENT_FLOOR,
            noise: ReplayNoise::default(),
        }
    }

    pub fn with_noise(mut self, noise: ReplayNoise) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_containment_floor(mut self, floor: f64) -> Self {
        self.containment_floor = floor;
        self
    }

    fn perturb(&self, pose: &Pose, frame: usize, candidate: usize) -> Pose {
        let n = self.noise;
        if n.coord_sigma <= 0.0 && n.score_jitter <= 0.0 {
            return pose.clone();
        }
        // seeded per (frame, candidate) so repeated calls agree
        let stream = n.seed ^ ((frame as u64) << 20) ^ candidate as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        let normal = Normal::new(0.0, n.coord_sigma.max(0.0)).expect("finite sigma");
        let clip = 3.0 * n.coord_sigma;
        Pose::new(
            pose.joints
                .iter()
                .map(|k| {
                    let (dx, dy) = if n.coord_sigma > 0.0 {
                        (
                            normal.sample(&mut rng).clamp(-clip, clip),
                            normal.sample(&mut rng).clamp(-clip, clip),
                        )
                    } else {
                        (0.0, 0.0)
                    };
                    let ds = if n.score_jitter > 0.0 {
                        rng.random_range(-n.score_jitter..=n.score_jitter)
                    } else {
                        0.0
                    };
                    Keypoint::new(k.x + dx, k.y + dy, (k.score + ds).clamp(0.0, 1.0))
                })
                .collect(),
        )
    }
}

/// Fraction of a pose's qualifying joints lying inside `roi`.
pub fn containment(pose: &Pose, roi: &BoundingBox) -> f64 {
    let mut total = 0usize;
    let mut inside = 0usize;
    for k in pose.joints.iter().filter(|k| k.score >= DEFAULT_JOINT_SCORE_FLOOR) {
        total += 1;
        if roi.contains(k.x, k.y) {
            inside += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        inside as f64 / total as f64
    }
}

impl Estimator for ReplayEstimator<'_> {
    /// Returns the recorded pose best contained in `roi` (first candidate on
    /// ties). Below the containment floor the pose comes back with all
    /// scores zeroed, which the tracker reads as a lost target.
    fn estimate(&self, frame: usize, roi: &BoundingBox) -> Result<Pose, ProviderError> {
        let obs = self.seq.frame(frame)?;
        let mut best: Option<(usize, f64)> = None;
        for (i, c) in obs.candidates.iter().enumerate() {
            let f = containment(&c.pose, roi);
            if best.is_none_or(|(_, b)| f > b) {
                best = Some((i, f));
            }
        }
        match best {
            None => Ok(Pose::zeros(self.seq.joint_order.len())),
            Some((i, f)) if f < self.containment_floor => Ok(obs.candidates[i].pose.with_scores(0.0)),
            Some((i, _)) => Ok(self.perturb(&obs.candidates[i].pose, frame, i)),
        }
    }
}
