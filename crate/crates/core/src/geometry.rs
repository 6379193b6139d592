//! Keypoints, poses and axis-aligned boxes.
//!
//! Coordinates are continuous image pixels. Nothing in here rounds to
//! integer pixels and boxes are allowed to extend past the image border.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joints scoring below this value do not take part in box inference.
pub const DEFAULT_JOINT_SCORE_FLOOR: f64 = 0.05;

/// Fraction of the tight width/height added on each side of a pose box.
pub const BOX_ENLARGEMENT: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    #[error("degenerate box: width {width}, height {height}")]
    DegenerateBox { width: f64, height: f64 },
    #[error("invalid keypoint: {0}")]
    InvalidKeypoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, score: f64) -> Self {
        Self { x, y, score }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !self.x.is_finite() || !self.y.is_finite() {
            return Err(GeometryError::InvalidKeypoint(format!(
                "non-finite coordinate ({}, {})",
                self.x, self.y
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GeometryError::InvalidKeypoint(format!(
                "score {} outside [0, 1]",
                self.score
            )));
        }
        Ok(())
    }
}

/// One person's joints, ordered as in the skeleton topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joints: Vec<Keypoint>,
}

impl Pose {
    pub fn new(joints: Vec<Keypoint>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    /// All joints at the origin with zero confidence.
    pub fn zeros(num_joints: usize) -> Self {
        Self {
            joints: vec![Keypoint::new(0.0, 0.0, 0.0); num_joints],
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|k| Keypoint::new(k.x + dx, k.y + dy, k.score))
                .collect(),
        }
    }

    pub fn with_scores(&self, score: f64) -> Self {
        Self {
            joints: self
                .joints
                .iter()
                .map(|k| Keypoint::new(k.x, k.y, score))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.joints.iter().try_for_each(Keypoint::validate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// Intersection over union. Pairs with zero union area score 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Tight box over the joints scoring at least `score_floor`, grown by 20% of
/// the tight extent on every side.
pub fn bbox_from_pose_with_floor(pose: &Pose, score_floor: f64) -> Result<BoundingBox, GeometryError> {
    let mut count = 0usize;
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for k in pose.joints.iter().filter(|k| k.score >= score_floor) {
        count += 1;
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    if count < 2 {
        return Err(GeometryError::DegeneratePose(format!(
            "{count} joints above score floor {score_floor}, need at least 2"
        )));
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w == 0.0 && h == 0.0 {
        return Err(GeometryError::DegeneratePose(
            "all qualifying joints coincide".into(),
        ));
    }
    let (mx, my) = (BOX_ENLARGEMENT * w, BOX_ENLARGEMENT * h);
    Ok(BoundingBox::new(x0 - mx, y0 - my, x1 + mx, y1 + my))
}

pub fn bbox_from_pose(pose: &Pose) -> Result<BoundingBox, GeometryError> {
    bbox_from_pose_with_floor(pose, DEFAULT_JOINT_SCORE_FLOOR)
}

/// Average joint confidence, the quantity compared against the tracking
/// threshold.
pub fn mean_confidence(pose: &Pose) -> f64 {
    if pose.joints.is_empty() {
        return 0.0;
    }
    pose.joints.iter().map(|k| k.score).sum::<f64>() / pose.joints.len() as f64
}

/// Pose coordinates expressed relative to a box, in [-1, 1] on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPose {
    pub coords: Vec<[f64; 2]>,
    /// `true` where the joint scored at or above the joint floor.
    pub valid: Vec<bool>,
}

impl NormalizedPose {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Flattened coordinates with invalid joints zeroed, as fed to the
    /// Euclidean baseline matcher and the first graph layer.
    pub fn features(&self) -> Vec<[f64; 2]> {
        self.coords
            .iter()
            .zip(&self.valid)
            .map(|(c, &v)| if v { *c } else { [0.0, 0.0] })
            .collect()
    }
}

pub fn normalize_pose_with_floor(
    pose: &Pose,
    bbox: &BoundingBox,
    score_floor: f64,
) -> Result<NormalizedPose, GeometryError> {
    let (w, h) = (bbox.width(), bbox.height());
    if !(w > 0.0 && h > 0.0) {
        return Err(GeometryError::DegenerateBox {
            width: w,
            height: h,
        });
    }
    let (cx, cy) = bbox.center();
    let (hw, hh) = (0.5 * w, 0.5 * h);
    let coords = pose
        .joints
        .iter()
        .map(|k| {
            [
                ((k.x - cx) / hw).clamp(-1.0, 1.0),
                ((k.y - cy) / hh).clamp(-1.0, 1.0),
            ]
        })
        .collect();
    let valid = pose.joints.iter().map(|k| k.score >= score_floor).collect();
    Ok(NormalizedPose { coords, valid })
}

pub fn normalize_pose(pose: &Pose, bbox: &BoundingBox) -> Result<NormalizedPose, GeometryError> {
    normalize_pose_with_floor(pose, bbox, DEFAULT_JOINT_SCORE_FLOOR)
}

/// Normalizes a pose by its own inferred box.
pub fn normalize_by_own_box(pose: &Pose) -> Result<NormalizedPose, GeometryError> {
    let bbox = bbox_from_pose(pose)?;
    normalize_pose(pose, &bbox)
}
