//! Seeded synthetic sequences of walking stick figures, with scripted
//! camera shifts, zooms and occlusions.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Candidate, FrameObservation, ObservationSequence, ProviderError};
use crate::geometry::{bbox_from_pose, Keypoint, Pose};
use crate::skeleton::DEFAULT_JOINT_ORDER;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub frame: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomEvent {
    pub frame: usize,
    pub factor: f64,
}

/// Person `id` is absent for frames `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub id: u64,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seq_id: String,
    pub n_people: usize,
    pub n_frames: usize,
    pub image_size: [u32; 2],
    pub camera_shift_events: Vec<ShiftEvent>,
    pub zoom_events: Vec<ZoomEvent>,
    pub occlusion_windows: Vec<OcclusionWindow>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seq_id: "synth".into(),
            n_people: 1,
            n_frames: 30,
            image_size: [1280, 720],
            camera_shift_events: Vec::new(),
            zoom_events: Vec::new(),
            occlusion_windows: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let bad = |m: String| Err(ProviderError::InvalidConfig(m));
        if self.n_frames == 0 {
            return bad("n_frames must be positive".into());
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image_size must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma));
        }
        for e in &self.camera_shift_events {
            if e.frame >= self.n_frames || !e.dx.is_finite() || !e.dy.is_finite() {
                return bad(format!("shift event {e:?} outside frame range or non-finite"));
            }
        }
        for e in &self.zoom_events {
            if e.frame >= self.n_frames || !(e.factor > 0.0 && e.factor.is_finite()) {
                return bad(format!("zoom event {e:?} outside frame range or non-positive"));
            }
        }
        for w in &self.occlusion_windows {
            if w.id == 0 || w.id as usize > self.n_people || w.start >= w.end || w.end > self.n_frames {
                return bad(format!("occlusion window {w:?} invalid"));
            }
        }
        Ok(())
    }
}

/// Body proportions and motion parameters of one figure. Lengths are
/// fractions of the figure height.
#[derive(Debug, Clone)]
struct Figure {
    height: f64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
    omega: f64,
    phase: f64,
    leg_amp: f64,
    arm_amp: f64,
    raise: [f64; 2],
    raise_drift: [f64; 2],
    elbow: [f64; 2],
    drift_omega: f64,
    drift_phase: f64,
    lean: f64,
    facing: f64,
    torso: f64,
    head: f64,
    shoulder_w: f64,
    hip_w: f64,
    upper_arm: f64,
    forearm: f64,
    thigh: f64,
    shin: f64,
    knee_bend: f64,
    score: f64,
}

impl Figure {
    fn sample(rng: &mut ChaCha8Rng, slot: usize, n_slots: usize, w: f64, h: f64) -> Self {
        let height = rng.random_range(0.22..0.32) * h;
        let slot_w = w / n_slots as f64;
        Self {
            height,
            x0: slot_w * (slot as f64 + rng.random_range(0.3..0.7)),
            y0: rng.random_range(0.5..0.62) * h,
            vx: rng.random_range(-1.2..1.2),
            vy: rng.random_range(-0.2..0.2),
            omega: rng.random_range(0.12..0.28),
            phase: rng.random_range(0.0..2.0 * PI),
            leg_amp: rng.random_range(0.15..0.5),
            arm_amp: rng.random_range(0.1..0.5),
            raise: [rng.random_range(0.0..2.2), rng.random_range(0.0..2.2)],
            raise_drift: [rng.random_range(0.0..0.3), rng.random_range(0.0..0.3)],
            elbow: [rng.random_range(0.0..1.6), rng.random_range(0.0..1.6)],
            drift_omega: rng.random_range(0.01..0.04),
            drift_phase: rng.random_range(0.0..2.0 * PI),
            lean: rng.random_range(-0.2..0.2),
            facing: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            torso: rng.random_range(0.28..0.34),
            head: rng.random_range(0.10..0.14),
            shoulder_w: rng.random_range(0.16..0.27),
            hip_w: rng.random_range(0.10..0.18),
            upper_arm: rng.random_range(0.15..0.2),
            forearm: rng.random_range(0.13..0.18),
            thigh: rng.random_range(0.22..0.27),
            shin: rng.random_range(0.21..0.26),
            knee_bend: rng.random_range(0.0..0.6),
            score: rng.random_range(0.75..1.0),
        }
    }

    /// World coordinates of the 15 joints at time `t`, canonical order.
    fn joints(&self, t: f64, w: f64, h: f64) -> [[f64; 2]; 15] {
        let hh = self.height;
        let px = reflect(self.x0 + self.vx * t, 0.08 * w, 0.92 * w);
        let py = reflect(self.y0 + self.vy * t, 0.35 * h, 0.75 * h);
        let up = [self.lean.sin(), -self.lean.cos()];
        let down = [-up[0], -up[1]];
        let right = [self.lean.cos(), self.lean.sin()];
        let add = |p: [f64; 2], d: [f64; 2], s: f64| [p[0] + s * d[0], p[1] + s * d[1]];
        // direction at angle `a` from straight down, rotating toward `side`
        let dir = |a: f64, side: [f64; 2]| {
            [
                a.cos() * down[0] + a.sin() * side[0],
                a.cos() * down[1] + a.sin() * side[1],
            ]
        };
        let left = [-right[0], -right[1]];
        let fwd = [self.facing * right[0], self.facing * right[1]];

        let swing = (self.omega * t + self.phase).sin();
        let drift = (self.drift_omega * t + self.drift_phase).sin();

        let pelvis = [px, py];
        let neck = add(pelvis, up, self.torso * hh);
        let nose = add(add(neck, up, 0.6 * self.head * hh), fwd, 0.25 * self.head * hh);
        let head_top = add(neck, up, 1.5 * self.head * hh);
        let sh_base = add(neck, down, 0.03 * hh);
        let l_sh = add(sh_base, left, 0.5 * self.shoulder_w * hh);
        let r_sh = add(sh_base, right, 0.5 * self.shoulder_w * hh);

        let raise_l = self.raise[0] + self.raise_drift[0] * drift + self.arm_amp * swing;
        let raise_r = self.raise[1] - self.raise_drift[1] * drift - self.arm_amp * swing;
        let l_el = add(l_sh, dir(raise_l, left), self.upper_arm * hh);
        let r_el = add(r_sh, dir(raise_r, right), self.upper_arm * hh);
        let l_wr = add(l_el, dir(raise_l + self.elbow[0], left), self.forearm * hh);
        let r_wr = add(r_el, dir(raise_r + self.elbow[1], right), self.forearm * hh);

        let l_hip = add(pelvis, left, 0.5 * self.hip_w * hh);
        let r_hip = add(pelvis, right, 0.5 * self.hip_w * hh);
        let thigh_l = self.leg_amp * swing;
        let thigh_r = -self.leg_amp * swing;
        let bend = |phase_shift: f64| {
            self.knee_bend * (0.5 + 0.5 * (self.omega * t + self.phase + phase_shift).cos())
        };
        let l_kn = add(l_hip, dir(thigh_l, fwd), self.thigh * hh);
        let r_kn = add(r_hip, dir(thigh_r, fwd), self.thigh * hh);
        let l_an = add(l_kn, dir(thigh_l - bend(0.0), fwd), self.shin * hh);
        let r_an = add(r_kn, dir(thigh_r - bend(PI), fwd), self.shin * hh);

        [
            head_top, neck, nose, l_sh, r_sh, l_el, r_el, l_wr, r_wr, l_hip, r_hip, l_kn, r_kn, l_an, r_an,
        ]
    }
}

/// Bounces `v` between `lo` and `hi`.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m <= span { m } else { 2.0 * span - m }
}

/// Builds a ground-truth-annotated sequence. Person ids run from 1.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<ObservationSequence, ProviderError> {
    cfg.validate()?;
    let [w, h] = cfg.image_size.map(f64::from);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let figures: Vec<Figure> = (0..cfg.n_people)
        .map(|i| Figure::sample(&mut rng, i, cfg.n_people, w, h))
        .collect();
    let noise = Normal::new(0.0, cfg.noise_sigma.max(0.0)).expect("finite sigma");
    let clip = 3.0 * cfg.noise_sigma;
    let (cx, cy) = (0.5 * w, 0.5 * h);

    let mut offset = [0.0, 0.0];
    let mut zoom = 1.0;
    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        for e in cfg.camera_shift_events.iter().filter(|e| e.frame == t) {
            offset[0] += e.dx;
            offset[1] += e.dy;
        }
        for e in cfg.zoom_events.iter().filter(|e| e.frame == t) {
            zoom *= e.factor;
        }
        let mut candidates = Vec::new();
        for (i, fig) in figures.iter().enumerate() {
            let id = i as u64 + 1;
            let hidden = cfg
                .occlusion_windows
                .iter()
                .any(|o| o.id == id && (o.start..o.end).contains(&t));
            // draw noise and scores even when hidden so the stream does not
            // depend on the occlusion script
            let joints = fig.joints(t as f64, w, h);
            let pose = Pose::new(
                joints
                    .iter()
                    .map(|p| {
                        let (mut nx, mut ny) = (0.0, 0.0);
                        if cfg.noise_sigma > 0.0 {
                            nx = noise.sample(&mut rng).clamp(-clip, clip);
                            ny = noise.sample(&mut rng).clamp(-clip, clip);
                        }
                        let score = (fig.score + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
                        let x = cx + zoom * (p[0] + offset[0] - cx) + nx;
                        let y = cy + zoom * (p[1] + offset[1] - cy) + ny;
                        Keypoint::new(x, y, score)
                    })
                    .collect(),
            );
            if hidden {
                continue;
            }
            let bbox = bbox_from_pose(&pose)?;
            candidates.push(Candidate {
                gt_id: Some(id),
                pose,
                bbox,
            });
        }
        frames.push(FrameObservation { index: t, candidates });
    }
    Ok(ObservationSequence {
        seq_id: cfg.seq_id.clone(),
        image_size: cfg.image_size,
        joint_order: DEFAULT_JOINT_ORDER.iter().map(|s| s.to_string()).collect(),
        frames,
    })
}

/// A list of generator configs, the on-disk form of a benchmark suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSuite {
    pub name: String,
    pub sequences: Vec<SynthConfig>,
}

impl SynthSuite {
    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        serde_json::from_str(text).map_err(|e| ProviderError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }

    pub fn build(&self) -> Result<Vec<ObservationSequence>, ProviderError> {
        self.sequences.iter().map(synth_sequence).collect()
    }
}

/// Settings of the synthetic hard-pair matching benchmark. Noise sigmas
/// are fractions of the figure height: torso joints are located precisely,
/// elbows and knees less so, and wrists, ankles and the head worst, the
/// way a real single-person estimator degrades toward the extremities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairBenchConfig {
    pub n_positive: usize,
    pub n_hard_negative: usize,
    pub torso_sigma: f64,
    pub limb_sigma: f64,
    pub extremity_sigma: f64,
    /// Probability that a joint is reported with score 0.
    pub dropout: f64,
    /// Positives pair the same figure up to this many frames apart.
    pub max_gap: usize,
    /// How far a hard negative's articulation moves from its partner's
    /// toward an independently drawn one: 0 copies the motion, 1 draws a
    /// fresh one. Body proportions are always drawn fresh.
    pub pose_spread: f64,
    pub seed: u64,
}

impl Default for PairBenchConfig {
    fn default() -> Self {
        Self {
            n_positive: 1200,
            n_hard_negative: 1200,
            torso_sigma: 0.004,
            limb_sigma: 0.015,
            extremity_sigma: 0.05,
            dropout: 0.0,
            max_gap: 2,
            pose_spread: 0.8,
            seed: 0,
        }
    }
}

impl PairBenchConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        let sig = [self.torso_sigma, self.limb_sigma, self.extremity_sigma];
        if sig.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(ProviderError::InvalidConfig("noise sigmas must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ProviderError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.pose_spread) {
            return Err(ProviderError::InvalidConfig("pose_spread must lie in [0, 1]".into()));
        }
        if self.max_gap == 0 {
            return Err(ProviderError::InvalidConfig("max_gap must be >= 1".into()));
        }
        Ok(())
    }

    fn sigma(&self, joint: usize) -> f64 {
        match joint {
            1 | 3 | 4 | 9 | 10 => self.torso_sigma,
            5 | 6 | 11 | 12 => self.limb_sigma,
            _ => self.extremity_sigma,
        }
    }
}

fn render_noisy(fig: &Figure, t: f64, cfg: &PairBenchConfig, rng: &mut ChaCha8Rng, w: f64, h: f64) -> Pose {
    let joints = fig.joints(t, w, h);
    Pose::new(
        joints
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let s = cfg.sigma(j) * fig.height;
                let (nx, ny) = if s > 0.0 {
                    let n = Normal::new(0.0, s).expect("finite sigma");
                    (n.sample(rng).clamp(-3.0 * s, 3.0 * s), n.sample(rng).clamp(-3.0 * s, 3.0 * s))
                } else {
                    (0.0, 0.0)
                };
                let score = if rng.random_bool(cfg.dropout) {
                    0.0
                } else {
                    (fig.score + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
                };
                Keypoint::new(p[0] + nx, p[1] + ny, score)
            })
            .collect(),
    )
}

/// Builds the hard-pair benchmark. Positives are the same figure a frame
/// or two apart with independent estimator noise. Hard negatives are two
/// figures mid-way through the same motion (same gait phase, arm pose and
/// facing) whose bodies differ, standing close enough for their boxes to
/// overlap. Every pose is normalized by its own box. Pairs alternate
/// positive/negative until one kind runs out.
pub fn synth_pair_benchmark(cfg: &PairBenchConfig) -> Result<crate::matcher::PairDataset, ProviderError> {
    use crate::geometry::{iou, normalize_pose};
    use crate::matcher::{PairCategory, PairDataset, PosePair};

    cfg.validate()?;
    let (w, h) = (1280.0, 720.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::with_capacity(cfg.n_positive + cfg.n_hard_negative);
    let (mut pos, mut neg) = (0, 0);
    while pos < cfg.n_positive || neg < cfg.n_hard_negative {
        let want_pos = pos < cfg.n_positive && (neg >= cfg.n_hard_negative || pos <= neg);
        let fig = Figure::sample(&mut rng, 0, 1, w, h);
        let t = rng.random_range(0.0..200.0);
        let (a, b, cat) = if want_pos {
            let gap = rng.random_range(1..=cfg.max_gap) as f64;
            let a = render_noisy(&fig, t, cfg, &mut rng, w, h);
            let b = render_noisy(&fig, t + gap, cfg, &mut rng, w, h);
            (a, b, PairCategory::Positive)
        } else {
            let other = Figure::sample(&mut rng, 0, 1, w, h);
            let mut twin = fig.clone();
            twin.height = other.height;
            twin.torso = other.torso;
            twin.head = other.head;
            twin.shoulder_w = other.shoulder_w;
            twin.hip_w = other.hip_w;
            twin.upper_arm = other.upper_arm;
            twin.forearm = other.forearm;
            twin.thigh = other.thigh;
            twin.shin = other.shin;
            twin.knee_bend = other.knee_bend;
            twin.score = other.score;
            let mix = |a: f64, b: f64| a + cfg.pose_spread * (b - a);
            twin.phase = mix(fig.phase, other.phase);
            twin.leg_amp = mix(fig.leg_amp, other.leg_amp);
            twin.arm_amp = mix(fig.arm_amp, other.arm_amp);
            twin.lean = mix(fig.lean, other.lean);
            for k in 0..2 {
                twin.raise[k] = mix(fig.raise[k], other.raise[k]);
                twin.elbow[k] = mix(fig.elbow[k], other.elbow[k]);
            }
            twin.x0 += rng.random_range(-0.25..0.25) * fig.height;
            twin.y0 += rng.random_range(-0.1..0.1) * fig.height;
            let a = render_noisy(&fig, t, cfg, &mut rng, w, h);
            let b = render_noisy(&twin, t, cfg, &mut rng, w, h);
            (a, b, PairCategory::HardNegative)
        };
        let (Ok(ba), Ok(bb)) = (bbox_from_pose(&a), bbox_from_pose(&b)) else {
            continue;
        };
        if cat == PairCategory::HardNegative && iou(&ba, &bb) <= 0.0 {
            continue;
        }
        let (na, nb) = (normalize_pose(&a, &ba)?, normalize_pose(&b, &bb)?);
        pairs.push(PosePair::new(na, nb, cat));
        if want_pos {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    Ok(PairDataset::new(DEFAULT_JOINT_ORDER.iter().map(|s| s.to_string()).collect(), pairs))
}
