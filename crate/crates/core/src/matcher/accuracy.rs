//! Match decisions, accuracy over labelled pairs and threshold calibration.
//!
//! A pair is declared a match when its distance is strictly below the
//! threshold.

use super::network::{embed, pose_distance, GcnWeights};
use super::pairs::PosePair;
use super::MatcherError;
use crate::geometry::NormalizedPose;
use crate::skeleton::PartitionedAdjacency;

/// Distance between the raw normalized keypoint vectors, invalid joints
/// zeroed. No network involved.
pub fn euclidean_distance(a: &NormalizedPose, b: &NormalizedPose) -> f64 {
    a.features()
        .iter()
        .zip(b.features())
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Embedding distance of every pair.
pub fn gcn_distances(
    pairs: &[&PosePair],
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
) -> Result<Vec<f64>, MatcherError> {
    pairs
        .iter()
        .map(|p| Ok(pose_distance(&embed(&p.a, weights, adj)?, &embed(&p.b, weights, adj)?)))
        .collect()
}

pub fn euclidean_distances(pairs: &[&PosePair]) -> Vec<f64> {
    pairs.iter().map(|p| euclidean_distance(&p.a, &p.b)).collect()
}

/// Fraction of pairs for which `distance < threshold` agrees with the label.
pub fn accuracy_from_distances(distances: &[f64], labels: &[u8], threshold: f64) -> Result<f64, MatcherError> {
    if distances.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    let correct = distances
        .iter()
        .zip(labels)
        .filter(|(&d, &y)| (d < threshold) == (y == 1))
        .count();
    Ok(correct as f64 / distances.len() as f64)
}

pub fn matching_accuracy(
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    pairs: &[&PosePair],
    threshold: f64,
) -> Result<f64, MatcherError> {
    if pairs.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    let d = gcn_distances(pairs, weights, adj)?;
    accuracy_from_distances(&d, &labels(pairs), threshold)
}

pub fn euclidean_accuracy(pairs: &[&PosePair], threshold: f64) -> Result<f64, MatcherError> {
    accuracy_from_distances(&euclidean_distances(pairs), &labels(pairs), threshold)
}

pub fn labels(pairs: &[&PosePair]) -> Vec<u8> {
    pairs.iter().map(|p| p.label).collect()
}

/// Candidate thresholds: 0, the midpoints between consecutive distinct
/// distances, and one value just above the largest distance.
pub fn threshold_grid(distances: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut grid = vec![0.0];
    grid.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    if let Some(&max) = sorted.last() {
        grid.push(max + 1e-9 * max.abs().max(1.0));
    }
    grid
}

/// Grid threshold maximizing accuracy, the smallest one on ties.
/// Returns the threshold and the accuracy it reaches.
pub fn calibrate_from_distances(distances: &[f64], labels: &[u8]) -> Result<(f64, f64), MatcherError> {
    if distances.is_empty() {
        return Err(MatcherError::EmptyDataset);
    }
    // sweep the sorted distances once instead of re-scoring every candidate
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));
    let negatives = labels.iter().filter(|&&y| y == 0).count();
    let mut best = (0.0, negatives as f64 / distances.len() as f64);
    let mut correct = negatives as i64;
    let mut k = 0;
    for t in threshold_grid(distances).into_iter().skip(1) {
        while k < order.len() && distances[order[k]] < t {
            correct += if labels[order[k]] == 1 { 1 } else { -1 };
            k += 1;
        }
        let acc = correct as f64 / distances.len() as f64;
        if acc > best.1 {
            best = (t, acc);
        }
    }
    Ok(best)
}

pub fn calibrate_threshold(
    weights: &GcnWeights,
    adj: &PartitionedAdjacency,
    validation: &[&PosePair],
) -> Result<f64, MatcherError> {
    let d = gcn_distances(validation, weights, adj)?;
    Ok(calibrate_from_distances(&d, &labels(validation))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_threshold_matches_nothing() {
        let d = [0.0, 0.3, 1.2, 0.9];
        let y = [1, 0, 1, 0];
        assert_eq!(accuracy_from_distances(&d, &y, 0.0).unwrap(), 0.5);
        assert!(matches!(accuracy_from_distances(&[], &[], 0.5), Err(MatcherError::EmptyDataset)));
    }

    #[test]
    fn separated_clusters_reach_full_accuracy() {
        let d = [0.05, 0.1, 0.12, 0.8, 0.9];
        let y = [1, 1, 1, 0, 0];
        assert_eq!(accuracy_from_distances(&d, &y, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn calibration_picks_smallest_best_midpoint() {
        let (t, acc) = calibrate_from_distances(&[0.1, 0.9], &[1, 0]).unwrap();
        assert_eq!(t, 0.5);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn calibration_all_positive_takes_top_of_grid() {
        let d = [0.2, 0.4, 1.1];
        let (t, acc) = calibrate_from_distances(&d, &[1, 1, 1]).unwrap();
        assert_eq!(t, *threshold_grid(&d).last().unwrap());
        assert!(t > 1.1);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn random_distances_calibrate_near_class_prior() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d: Vec<f64> = (0..2000).map(|_| rng.random_range(0.0..2.0)).collect();
        let y: Vec<u8> = (0..2000).map(|_| u8::from(rng.random_bool(0.3))).collect();
        let (_, acc) = calibrate_from_distances(&d, &y).unwrap();
        let prior = y.iter().filter(|&&v| v == 0).count() as f64 / 2000.0;
        assert!(acc >= prior && acc < prior + 0.05, "acc {acc} prior {prior}");
    }

    proptest! {
        #[test]
        fn calibration_agrees_with_exhaustive_scoring(
            d in prop::collection::vec(0.0..2.0f64, 1..40),
            seed in prop::collection::vec(0u8..2, 40),
        ) {
            let y = &seed[..d.len()];
            let (t, acc) = calibrate_from_distances(&d, y).unwrap();
            let mut best = (0.0, -1.0);
            for g in threshold_grid(&d) {
                let a = accuracy_from_distances(&d, y, g).unwrap();
                if a > best.1 {
                    best = (g, a);
                }
            }
            prop_assert_eq!(t, best.0);
            prop_assert!((acc - best.1).abs() < 1e-12);
        }
    }
}
