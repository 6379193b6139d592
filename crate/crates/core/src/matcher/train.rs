//! Mini-batch SGD with step learning-rate decay and weight decay.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_gradients;
use super::network::{Dims, GcnWeights, DEFAULT_HIDDEN};
use super::pairs::{PairDataset, PosePair};
use super::accuracy::calibrate_threshold;
use super::{MatcherError, PoseMatcher};
use crate::skeleton::{build_partitioned_adjacency, compute_reference_radii, ReferenceRadii, SkeletonTopology};

pub const DEFAULT_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    /// Contrastive margin on the squared distance.
    pub margin: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 200,
            lr: 0.001,
            lr_decay_epochs: vec![40, 60, 80, 100],
            lr_decay_factor: 0.1,
            weight_decay: 1e-4,
            momentum: 0.0,
            margin: DEFAULT_MARGIN,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: &str| Err(MatcherError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        if !(self.margin > 0.0) {
            return bad("margin must be positive");
        }
        if !(self.weight_decay >= 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("weight_decay must be >= 0 and momentum in [0, 1)");
        }
        if !(self.lr_decay_factor > 0.0) {
            return bad("lr_decay_factor must be positive");
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return bad("lr_decay_epochs must be strictly ascending");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&e| e <= epoch).count();
        self.lr * self.lr_decay_factor.powi(decays as i32)
    }
}

/// Plain SGD, optional momentum, coupled weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub weight_decay: f64,
    pub momentum: f64,
    velocity: Option<GcnWeights>,
}

impl Sgd {
    pub fn new(weight_decay: f64, momentum: f64) -> Self {
        Self {
            weight_decay,
            momentum,
            velocity: None,
        }
    }

    /// `w -= lr * (g + weight_decay * w)`, through the velocity buffer when
    /// momentum is on. Edge importance is projected back onto `>= 0`.
    pub fn step(&mut self, weights: &mut GcnWeights, grad: &GcnWeights, lr: f64) {
        let mut g = grad.clone();
        let wd = self.weight_decay;
        if wd != 0.0 {
            g.zip_apply(weights, |gv, wv| *gv += wd * wv);
        }
        if self.momentum > 0.0 {
            let mu = self.momentum;
            let v = self.velocity.get_or_insert_with(|| GcnWeights::zeros(weights.dims));
            v.zip_apply(&g, |vv, gv| *vv = mu * *vv + gv);
            g = v.clone();
        }
        if lr != 0.0 {
            weights.zip_apply(&g, |wv, gv| *wv -= lr * gv);
        }
        for m in weights.edge_importance.iter_mut() {
            m.mapv_inplace(|v| v.max(0.0));
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: GcnWeights,
    /// Mean training loss of every epoch, in order.
    pub loss_curve: Vec<f64>,
}

pub fn check_dataset(pairs: &[PosePair]) -> Result<(), MatcherError> {
    if pairs.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(MatcherError::DegenerateDataset);
    }
    Ok(())
}

/// Trains from a seeded initialization.
pub fn train(
    dataset: &PairDataset,
    cfg: &TrainConfig,
    topology: &SkeletonTopology,
    radii: &ReferenceRadii,
) -> Result<TrainOutcome, MatcherError> {
    let init = GcnWeights::init(Dims::new(topology.num_joints(), cfg.hidden), cfg.seed);
    train_from(init, dataset, cfg, topology, radii)
}

/// Trains starting from `weights`. Batches are drawn from a per-epoch
/// shuffle seeded by `cfg.seed`, so equal inputs give equal weights.
pub fn train_from(
    mut weights: GcnWeights,
    dataset: &PairDataset,
    cfg: &TrainConfig,
    topology: &SkeletonTopology,
    radii: &ReferenceRadii,
) -> Result<TrainOutcome, MatcherError> {
    cfg.validate()?;
    check_dataset(&dataset.pairs)?;
    if weights.dims.joints != topology.num_joints() {
        return Err(MatcherError::ShapeMismatch(format!(
            "weights built for {} joints, topology has {}",
            weights.dims.joints,
            topology.num_joints()
        )));
    }
    let adj = build_partitioned_adjacency(topology, radii)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut opt = Sgd::new(cfg.weight_decay, cfg.momentum);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PosePair> = chunk.iter().map(|&i| &dataset.pairs[i]).collect();
            let g = loss_gradients(&batch, &weights, &adj, cfg.margin)?;
            total += g.loss * batch.len() as f64;
            opt.step(&mut weights, &g.grad, lr);
        }
        loss_curve.push(total / dataset.len() as f64);
    }
    Ok(TrainOutcome {
        weights,
        loss_curve,
    })
}

/// Reference radii over every pose in the dataset.
pub fn dataset_radii(dataset: &PairDataset, topology: &SkeletonTopology) -> Result<ReferenceRadii, MatcherError> {
    Ok(compute_reference_radii(
        dataset.pairs.iter().flat_map(|p| [&p.a, &p.b]),
        topology,
    )?)
}

/// Full fitting recipe: radii from the data, seeded training, then a match
/// threshold calibrated on the same pairs.
pub fn fit_matcher(
    dataset: &PairDataset,
    cfg: &TrainConfig,
    topology: &SkeletonTopology,
) -> Result<(PoseMatcher, Vec<f64>), MatcherError> {
    cfg.validate()?;
    check_dataset(&dataset.pairs)?;
    let radii = dataset_radii(dataset, topology)?;
    let out = train(dataset, cfg, topology, &radii)?;
    let adj = build_partitioned_adjacency(topology, &radii)?;
    let all: Vec<&PosePair> = dataset.pairs.iter().collect();
    let threshold = calibrate_threshold(&out.weights, &adj, &all)?;
    let m = PoseMatcher::new(topology.clone(), radii, out.weights, cfg.margin, threshold)?;
    Ok((m, out.loss_curve))
}
