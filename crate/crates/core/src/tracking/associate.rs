//! Greedy one-to-one association between tracks and detections.

use crate::geometry::{iou, BoundingBox};

/// Accepted `(track, detection)` index pairs plus what is left over, both
/// leftover lists ascending.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Greedy matching over `scores[t][d]`. Eligible pairs are visited best
/// score first (`descending` picks the direction), then by lower track
/// index, then lower detection index; a pair is taken when both sides are
/// still free.
pub fn greedy_assign(
    scores: &[Vec<f64>],
    n_detections: usize,
    descending: bool,
    eligible: impl Fn(f64) -> bool,
) -> Assignment {
    let n_tracks = scores.len();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (t, row) in scores.iter().enumerate() {
        for (d, &s) in row.iter().enumerate() {
            if eligible(s) {
                cand.push((s, t, d));
            }
        }
    }
    cand.sort_by(|a, b| {
        let primary = if descending { b.0.total_cmp(&a.0) } else { a.0.total_cmp(&b.0) };
        primary.then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });
    let mut used_t = vec![false; n_tracks];
    let mut used_d = vec![false; n_detections];
    let mut pairs = Vec::new();
    for (_, t, d) in cand {
        if !used_t[t] && !used_d[d] {
            used_t[t] = true;
            used_d[d] = true;
            pairs.push((t, d));
        }
    }
    pairs.sort_unstable();
    Assignment {
        pairs,
        unmatched_tracks: (0..n_tracks).filter(|&t| !used_t[t]).collect(),
        unmatched_detections: (0..n_detections).filter(|&d| !used_d[d]).collect(),
    }
}

pub fn iou_matrix(tracks: &[BoundingBox], detections: &[BoundingBox]) -> Vec<Vec<f64>> {
    tracks
        .iter()
        .map(|t| detections.iter().map(|d| iou(t, d)).collect())
        .collect()
}

/// Spatial-consistency stage: a pair may match only when its IOU
/// strictly exceeds `tau_o`; highest IOU first.
pub fn spatial_match(tracks: &[BoundingBox], detections: &[BoundingBox], tau_o: f64) -> Assignment {
    greedy_assign(&iou_matrix(tracks, detections), detections.len(), true, |v| v > tau_o)
}

/// Pose-matching stage over a precomputed distance matrix: a pair may
/// match only when its distance is strictly below `threshold`; smallest
/// distance first.
pub fn pose_match(distances: &[Vec<f64>], n_detections: usize, threshold: f64) -> Assignment {
    greedy_assign(distances, n_detections, false, |d| d < threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x: f64, y: f64, s: f64) -> BoundingBox {
        BoundingBox::new(x, y, x + s, y + s)
    }

    #[test]
    fn single_pair_thresholding() {
        let t = [square(0.0, 0.0, 10.0)];
        let high = [square(0.5, 0.5, 10.0)];
        let a = spatial_match(&t, &high, 0.3);
        assert_eq!(a.pairs, vec![(0, 0)]);
        let low = [square(8.0, 8.0, 10.0)];
        let a = spatial_match(&t, &low, 0.3);
        assert!(a.pairs.is_empty());
        assert_eq!((a.unmatched_tracks, a.unmatched_detections), (vec![0], vec![0]));
    }

    #[test]
    fn greedy_takes_highest_first() {
        let scores = vec![vec![0.9, 0.4], vec![0.4, 0.8]];
        let a = greedy_assign(&scores, 2, true, |v| v > 0.3);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        // greedy, not optimal: the 0.9 pair blocks a better total
        let scores = vec![vec![0.9, 0.85], vec![0.8, 0.1]];
        let a = greedy_assign(&scores, 2, true, |v| v > 0.3);
        assert_eq!(a.pairs, vec![(0, 0)]);
    }

    #[test]
    fn ties_prefer_lower_indices() {
        let scores = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let a = greedy_assign(&scores, 2, true, |v| v > 0.3);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        let a = pose_match(&[vec![0.2, 0.2]], 2, 1.0);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.unmatched_detections, vec![1]);
    }

    #[test]
    fn empty_inputs() {
        let a = pose_match(&[], 0, 1.0);
        assert_eq!(a, Assignment::default());
        let a = spatial_match(&[], &[square(0.0, 0.0, 1.0)], 0.3);
        assert_eq!(a.unmatched_detections, vec![0]);
    }
}
