//! Two graph-convolution layers, masked mean pooling, a linear head and
//! l2 normalization.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MatcherError;
use crate::geometry::NormalizedPose;
use crate::skeleton::{PartitionedAdjacency, NUM_PARTITIONS};

pub const INPUT_CHANNELS: usize = 2;
pub const EMBEDDING_DIM: usize = 128;
pub const DEFAULT_HIDDEN: usize = 64;

const MIN_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub joints: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub embed: usize,
}

impl Dims {
    pub fn new(joints: usize, hidden: usize) -> Self {
        Self {
            joints,
            in_channels: INPUT_CHANNELS,
            hidden,
            embed: EMBEDDING_DIM,
        }
    }
}

/// One graph-convolution layer: a weight matrix per partition plus a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub w: [Array2<f64>; NUM_PARTITIONS],
    pub bias: Array1<f64>,
}

impl GcnLayer {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self {
            w: std::array::from_fn(|_| Array2::zeros((c_in, c_out))),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.w[0].nrows()
    }

    pub fn out_channels(&self) -> usize {
        self.w[0].ncols()
    }
}

/// Every learnable parameter of the siamese matcher. Both branches of the
/// siamese pair run on the same value. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnWeights {
    pub dims: Dims,
    pub layer1: GcnLayer,
    pub layer2: GcnLayer,
    /// One `J x J` multiplicative mask per graph layer.
    pub edge_importance: [Array2<f64>; 2],
    /// `hidden x embed` projection applied after pooling.
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

impl GcnWeights {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            layer1: GcnLayer::zeros(dims.in_channels, dims.hidden),
            layer2: GcnLayer::zeros(dims.hidden, dims.hidden),
            edge_importance: std::array::from_fn(|_| Array2::zeros((dims.joints, dims.joints))),
            head_w: Array2::zeros((dims.hidden, dims.embed)),
            head_b: Array1::zeros(dims.embed),
        }
    }

    /// Glorot-uniform matrices, zero biases, all-ones edge importance.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(dims);
        for m in w.layer1.w.iter_mut() {
            *m = glorot(&mut rng, dims.in_channels, dims.hidden);
        }
        for m in w.layer2.w.iter_mut() {
            *m = glorot(&mut rng, dims.hidden, dims.hidden);
        }
        w.head_w = glorot(&mut rng, dims.hidden, dims.embed);
        for m in w.edge_importance.iter_mut() {
            m.fill(1.0);
        }
        w
    }

    /// Named tensors in the canonical serialization order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (l, (layer, mask)) in [&self.layer1, &self.layer2]
            .into_iter()
            .zip(&self.edge_importance)
            .enumerate()
        {
            for (c, w) in layer.w.iter().enumerate() {
                out.push((format!("layer{}.w{c}", l + 1), w.shape().to_vec(), slice(w)));
            }
            out.push((format!("layer{}.bias", l + 1), layer.bias.shape().to_vec(), slice1(&layer.bias)));
            out.push((format!("layer{}.edge_importance", l + 1), mask.shape().to_vec(), slice(mask)));
        }
        out.push(("head.w".into(), self.head_w.shape().to_vec(), slice(&self.head_w)));
        out.push(("head.bias".into(), self.head_b.shape().to_vec(), slice1(&self.head_b)));
        out
    }

    /// Mutable views of all tensors, same order as [`GcnWeights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let [m1, m2] = &mut self.edge_importance;
        for (layer, mask) in [(&mut self.layer1, m1), (&mut self.layer2, m2)] {
            for w in layer.w.iter_mut() {
                out.push(w.as_slice_mut().expect("standard layout"));
            }
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
            out.push(mask.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head_w.as_slice_mut().expect("standard layout"));
        out.push(self.head_b.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *it.next().expect("flat length matches parameter count");
            }
        }
    }

    /// Applies `f(self_value, other_value)` to every parameter pair.
    pub fn zip_apply(&mut self, other: &GcnWeights, mut f: impl FnMut(&mut f64, f64)) {
        let theirs = other.flatten();
        let mut it = theirs.into_iter();
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                f(v, it.next().expect("congruent weights"));
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.flatten().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|v| v.is_finite()))
    }

    pub fn validate(&self) -> Result<(), MatcherError> {
        let d = self.dims;
        let shape_ok = self.layer1.w.iter().all(|w| w.dim() == (d.in_channels, d.hidden))
            && self.layer1.bias.len() == d.hidden
            && self.layer2.w.iter().all(|w| w.dim() == (d.hidden, d.hidden))
            && self.layer2.bias.len() == d.hidden
            && self.edge_importance.iter().all(|m| m.dim() == (d.joints, d.joints))
            && self.head_w.dim() == (d.hidden, d.embed)
            && self.head_b.len() == d.embed;
        if !shape_ok {
            return Err(MatcherError::ShapeMismatch("weights disagree with recorded dims".into()));
        }
        if !self.is_finite() {
            return Err(MatcherError::InvalidWeights("non-finite parameter".into()));
        }
        if self.edge_importance.iter().any(|m| m.iter().any(|&v| v < 0.0)) {
            return Err(MatcherError::InvalidWeights("negative edge importance".into()));
        }
        Ok(())
    }
}

fn slice(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

/// An l2-normalized pose descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Array1<f64>);

impl Embedding {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }
}

pub fn pose_distance(a: &Embedding, b: &Embedding) -> f64 {
    a.0.iter()
        .zip(b.0.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Masked adjacency `ops[c] * mask`, elementwise.
pub fn masked_ops(adj: &PartitionedAdjacency, mask: &Array2<f64>) -> [Array2<f64>; NUM_PARTITIONS] {
    std::array::from_fn(|c| &adj.ops[c] * mask)
}

fn check_layer_shapes(
    features: &Array2<f64>,
    adj: &PartitionedAdjacency,
    mask: &Array2<f64>,
    layer: &GcnLayer,
) -> Result<(), MatcherError> {
    let j = adj.num_joints();
    if features.nrows() != j || mask.dim() != (j, j) {
        return Err(MatcherError::ShapeMismatch(format!(
            "features {:?}, mask {:?}, adjacency {j}x{j}",
            features.dim(),
            mask.dim()
        )));
    }
    if features.ncols() != layer.in_channels() || layer.bias.len() != layer.out_channels() {
        return Err(MatcherError::ShapeMismatch(format!(
            "features have {} channels, layer expects {}",
            features.ncols(),
            layer.in_channels()
        )));
    }
    Ok(())
}

/// `relu(sum_c (ops[c] * mask) . features . W_c + bias)`.
pub fn gcn_layer_forward(
    features: &Array2<f64>,
    adj: &PartitionedAdjacency,
    mask: &Array2<f64>,
    layer: &GcnLayer,
) -> Result<Array2<f64>, MatcherError> {
    check_layer_shapes(features, adj, mask, layer)?;
    let ops = masked_ops(adj, mask);
    let (pre, _) = layer_pre_activation(features, &ops, layer);
    Ok(pre.mapv(relu))
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn layer_pre_activation(
    features: &Array2<f64>,
    ops: &[Array2<f64>; NUM_PARTITIONS],
    layer: &GcnLayer,
) -> (Array2<f64>, [Array2<f64>; NUM_PARTITIONS]) {
    let aggregated: [Array2<f64>; NUM_PARTITIONS] = std::array::from_fn(|c| ops[c].dot(features));
    let mut pre = Array2::zeros((features.nrows(), layer.out_channels()));
    for (agg, w) in aggregated.iter().zip(&layer.w) {
        pre += &agg.dot(w);
    }
    pre += &layer.bias;
    (pre, aggregated)
}

pub fn input_features(pose: &NormalizedPose) -> Array2<f64> {
    let feats = pose.features();
    Array2::from_shape_fn((feats.len(), INPUT_CHANNELS), |(i, c)| feats[i][c])
}

/// Intermediate values of one branch, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub x: Array2<f64>,
    pub valid: Vec<bool>,
    pub ops1: [Array2<f64>; NUM_PARTITIONS],
    pub ops2: [Array2<f64>; NUM_PARTITIONS],
    pub agg1: [Array2<f64>; NUM_PARTITIONS],
    pub pre1: Array2<f64>,
    pub h1: Array2<f64>,
    pub agg2: [Array2<f64>; NUM_PARTITIONS],
    pub pre2: Array2<f64>,
    pub pooled: Array1<f64>,
    pub valid_count: usize,
    pub z: Array1<f64>,
    pub norm: f64,
    pub embedding: Array1<f64>,
}

pub(crate) fn forward(
    pose: &NormalizedPose,
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
) -> Result<ForwardCache, MatcherError> {
    if pose.len() != weights.dims.joints || adj.num_joints() != weights.dims.joints {
        return Err(MatcherError::ShapeMismatch(format!(
            "pose has {} joints, weights {}, adjacency {}",
            pose.len(),
            weights.dims.joints,
            adj.num_joints()
        )));
    }
    let x = input_features(pose);
    check_layer_shapes(&x, adj, &weights.edge_importance[0], &weights.layer1)?;
    let ops1 = masked_ops(adj, &weights.edge_importance[0]);
    let (pre1, agg1) = layer_pre_activation(&x, &ops1, &weights.layer1);
    let h1 = pre1.mapv(relu);
    check_layer_shapes(&h1, adj, &weights.edge_importance[1], &weights.layer2)?;
    let ops2 = masked_ops(adj, &weights.edge_importance[1]);
    let (pre2, agg2) = layer_pre_activation(&h1, &ops2, &weights.layer2);

    let valid_count = pose.valid.iter().filter(|v| **v).count();
    let mut pooled = Array1::zeros(weights.dims.hidden);
    if valid_count > 0 {
        for (row, _) in pre2.axis_iter(Axis(0)).zip(&pose.valid).filter(|(_, v)| **v) {
            pooled.zip_mut_with(&row, |p, &r| *p += relu(r));
        }
        pooled /= valid_count as f64;
    }
    let z = pooled.dot(&weights.head_w) + &weights.head_b;
    let norm = z.dot(&z).sqrt().max(MIN_NORM);
    let embedding = &z / norm;
    Ok(ForwardCache {
        x,
        valid: pose.valid.clone(),
        ops1,
        ops2,
        agg1,
        pre1,
        h1,
        agg2,
        pre2,
        pooled,
        valid_count,
        z,
        norm,
        embedding,
    })
}

/// Smallest absolute ReLU pre-activation over both layers. Finite
/// differences are only trustworthy when this is well above the step size.
pub fn relu_kink_distance(
    pose: &NormalizedPose,
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
) -> Result<f64, MatcherError> {
    let c = forward(pose, weights, adj)?;
    Ok(c.pre1.iter().chain(c.pre2.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs())))
}

/// Maps a normalized pose to its unit-length descriptor.
pub fn embed(
    pose: &NormalizedPose,
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
) -> Result<Embedding, MatcherError> {
    forward(pose, weights, adj).map(|c| Embedding(c.embedding))
}

/// Accumulates into `grad` the gradient of a scalar whose derivative with
/// respect to this branch's embedding is `g_e`.
pub(crate) fn backward(
    cache: &ForwardCache,
    g_e: &Array1<f64>,
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    grad: &mut GcnWeights,
) {
    // through e = z / |z|
    let g_z = if cache.norm > MIN_NORM {
        let zg = cache.z.dot(g_e);
        g_e / cache.norm - &cache.z * (zg / cache.norm.powi(3))
    } else {
        g_e / cache.norm
    };

    // head
    for (h, mut row) in cache.pooled.iter().zip(grad.head_w.rows_mut()) {
        row.scaled_add(*h, &g_z);
    }
    grad.head_b += &g_z;
    if cache.valid_count == 0 {
        return;
    }
    let g_pooled = weights.head_w.dot(&g_z) / cache.valid_count as f64;

    // masked mean pool + relu
    let mut g_pre2 = Array2::zeros(cache.pre2.raw_dim());
    for (i, mut row) in g_pre2.rows_mut().into_iter().enumerate() {
        if cache.valid[i] {
            for (k, g) in row.iter_mut().enumerate() {
                if cache.pre2[[i, k]] > 0.0 {
                    *g = g_pooled[k];
                }
            }
        }
    }

    let g_h1 = layer_backward(
        &g_pre2,
        &cache.h1,
        &cache.agg2,
        &cache.ops2,
        adj,
        &weights.layer2,
        &mut grad.layer2,
        &mut grad.edge_importance[1],
    );
    let mut g_pre1 = g_h1;
    g_pre1.zip_mut_with(&cache.pre1, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    layer_backward(
        &g_pre1,
        &cache.x,
        &cache.agg1,
        &cache.ops1,
        adj,
        &weights.layer1,
        &mut grad.layer1,
        &mut grad.edge_importance[0],
    );
}

/// Backward pass of one layer given the gradient at its pre-activation.
/// Returns the gradient at the layer input.
#[allow(clippy::too_many_arguments)]
fn layer_backward(
    g_pre: &Array2<f64>,
    input: &Array2<f64>,
    aggregated: &[Array2<f64>; NUM_PARTITIONS],
    masked: &[Array2<f64>; NUM_PARTITIONS],
    adj: &PartitionedAdjacency,
    layer: &GcnLayer,
    grad: &mut GcnLayer,
    grad_mask: &mut Array2<f64>,
) -> Array2<f64> {
    let mut g_input = Array2::zeros(input.raw_dim());
    grad.bias += &g_pre.sum_axis(Axis(0));
    for c in 0..NUM_PARTITIONS {
        grad.w[c] += &aggregated[c].t().dot(g_pre);
        // gradient with respect to (masked op . input)
        let g_agg = g_pre.dot(&layer.w[c].t());
        let g_ops = g_agg.dot(&input.t());
        *grad_mask += &(&g_ops * &adj.ops[c]);
        g_input += &masked[c].t().dot(&g_agg);
    }
    g_input
}
