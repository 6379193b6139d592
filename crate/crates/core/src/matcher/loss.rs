//! Margin contrastive loss and its exact gradient through the network.

use super::network::{backward, forward, GcnWeights};
use super::pairs::PosePair;
use super::MatcherError;
use crate::skeleton::PartitionedAdjacency;

/// `0.5 * y * D^2 + 0.5 * (1 - y) * max(0, margin - D^2)`.
pub fn contrastive_loss(distance: f64, label: u8, margin: f64) -> f64 {
    let d2 = distance * distance;
    let y = f64::from(label);
    0.5 * y * d2 + 0.5 * (1.0 - y) * (margin - d2).max(0.0)
}

/// Derivative of the loss with respect to `D^2`. The hinge kink takes
/// subgradient 0.
fn loss_slope_sq(d2: f64, label: u8, margin: f64) -> f64 {
    if label == 1 {
        0.5
    } else if margin - d2 > 0.0 {
        -0.5
    } else {
        0.0
    }
}

/// Mean loss of a batch together with its gradient.
#[derive(Debug, Clone)]
pub struct BatchGradient {
    pub loss: f64,
    pub grad: GcnWeights,
}

/// Loss of one pair, without gradient.
pub fn pair_loss(
    pair: &PosePair,
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    margin: f64,
) -> Result<f64, MatcherError> {
    let a = forward(&pair.a, weights, adj)?;
    let b = forward(&pair.b, weights, adj)?;
    let diff = &a.embedding - &b.embedding;
    Ok(contrastive_loss(diff.dot(&diff).sqrt(), pair.label, margin))
}

pub fn batch_loss(
    batch: &[&PosePair],
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    margin: f64,
) -> Result<f64, MatcherError> {
    if batch.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    let mut total = 0.0;
    for p in batch {
        total += pair_loss(p, weights, adj, margin)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean contrastive loss over `batch` and its analytic gradient with
/// respect to every parameter, edge importance included.
pub fn loss_gradients(
    batch: &[&PosePair],
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    margin: f64,
) -> Result<BatchGradient, MatcherError> {
    if batch.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = GcnWeights::zeros(weights.dims);
    let mut total = 0.0;
    for pair in batch {
        let a = forward(&pair.a, weights, adj)?;
        let b = forward(&pair.b, weights, adj)?;
        let diff = &a.embedding - &b.embedding;
        let d2 = diff.dot(&diff);
        total += contrastive_loss(d2.sqrt(), pair.label, margin);
        let slope = loss_slope_sq(d2, pair.label, margin);
        if slope == 0.0 {
            continue;
        }
        let g_a = &diff * (2.0 * slope * scale);
        backward(&a, &g_a, weights, adj, &mut grad);
        backward(&b, &(-&g_a), weights, adj, &mut grad);
    }
    Ok(BatchGradient {
        loss: total * scale,
        grad,
    })
}
