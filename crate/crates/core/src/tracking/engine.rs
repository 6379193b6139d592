use std::time::{Duration, Instant};

use super::associate::{iou_matrix, pose_match, spatial_match};
use super::{
    is_keyframe, update_state, Association, AssociationStage, AssociationTrace, FrameResult, Track,
    TrackEntry, TrackError, TrackState, TrackerConfig,
};
use crate::geometry::{bbox_from_pose, mean_confidence, normalize_pose};
use crate::matcher::{pose_distance, Embedding, PoseMatcher};
use crate::providers::sequence_file::{TrackedEntry, TrackedFrame, TrackedSequence};
use crate::providers::{Detection, Detector, Estimator, ObservationSequence, ReplayDetector, ReplayEstimator};

/// Wall-clock spent in each part of the loop.
#[derive(Debug, Clone, Copy, Default)]
pub struct EngineTimings {
    pub estimator: Duration,
    pub detector: Duration,
    pub association: Duration,
    pub matching: Duration,
    pub total: Duration,
}

/// Tracker state for one sequence. Frames must be fed in order.
pub struct TrackerEngine<'m> {
    cfg: TrackerConfig,
    matcher: Option<&'m PoseMatcher>,
    tracks: Vec<Track>,
    next_id: u64,
    pub timings: EngineTimings,
}

impl<'m> TrackerEngine<'m> {
    pub fn new(cfg: TrackerConfig, matcher: Option<&'m PoseMatcher>) -> Result<Self, TrackError> {
        cfg.validate()?;
        if cfg.pose_matching && matcher.is_none() {
            return Err(TrackError::MatcherUnavailable);
        }
        Ok(Self {
            cfg,
            matcher,
            tracks: Vec::new(),
            next_id: 1,
            timings: EngineTimings::default(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    fn match_threshold(&self) -> f64 {
        self.cfg
            .match_threshold
            .or(self.matcher.map(|m| m.threshold))
            .unwrap_or(0.0)
    }

    pub fn step(
        &mut self,
        frame: usize,
        detector: &dyn Detector,
        estimator: &dyn Estimator,
    ) -> Result<FrameResult, TrackError> {
        let started = Instant::now();
        let provider = |source| TrackError::Provider { frame, source };

        // propagate every tracked target through its enlarged box
        let mut estimator_calls = 0;
        let mut just_lost = false;
        for track in self.tracks.iter_mut().filter(|t| t.state == TrackState::Tracked) {
            let Ok(roi) = bbox_from_pose(&track.last_pose) else {
                track.state = TrackState::Lost;
                just_lost = true;
                continue;
            };
            let t0 = Instant::now();
            let pose = estimator.estimate(frame, &roi).map_err(provider)?;
            self.timings.estimator += t0.elapsed();
            estimator_calls += 1;
            match (update_state(&pose, self.cfg.tau_s), bbox_from_pose(&pose)) {
                (TrackState::Tracked, Ok(bbox)) => {
                    track.last_pose = pose;
                    track.last_box = bbox;
                    track.last_seen_frame = frame;
                    track.embedding_cache = None;
                }
                _ => {
                    track.state = TrackState::Lost;
                    just_lost = true;
                }
            }
        }

        let keyframe = is_keyframe(frame, &self.cfg, just_lost);
        let mut associations = Vec::new();
        let mut new_ids = Vec::new();
        let mut trace = None;
        if keyframe {
            let t0 = Instant::now();
            let detections = detector.detect(frame).map_err(provider)?;
            self.timings.detector += t0.elapsed();
            let detections: Vec<Detection> = detections
                .into_iter()
                .filter(|d| mean_confidence(&d.pose) > self.cfg.tau_s && d.bbox.area() > 0.0)
                .collect();
            trace = self.associate(frame, &detections, &mut associations, &mut new_ids)?;
        }

        let max_lost = self.cfg.max_lost();
        let mut terminated_ids = Vec::new();
        self.tracks.retain(|t| {
            let stale = t.state == TrackState::Lost && frame.saturating_sub(t.last_seen_frame) > max_lost;
            if stale {
                terminated_ids.push(t.id);
            }
            !stale
        });

        let entries = self
            .tracks
            .iter()
            .map(|t| TrackEntry {
                id: t.id,
                pose: t.last_pose.clone(),
                bbox: t.last_box,
                state: t.state,
            })
            .collect();
        self.timings.total += started.elapsed();
        Ok(FrameResult {
            frame,
            entries,
            keyframe,
            estimator_calls,
            associations,
            new_ids,
            terminated_ids,
            trace: if self.cfg.record_traces { trace } else { None },
        })
    }

    fn embedding_of(&self, t: usize) -> Option<Embedding> {
        let track = &self.tracks[t];
        if let Some(e) = &track.embedding_cache {
            return Some(e.clone());
        }
        let m = self.matcher?;
        let n = normalize_pose(&track.last_pose, &track.last_box).ok()?;
        m.embed(&n).ok()
    }

    /// Spatial matching over all tracks, then pose matching over the
    /// leftovers. Unmatched detections open new tracks; unmatched tracks
    /// become lost.
    fn associate(
        &mut self,
        frame: usize,
        detections: &[Detection],
        associations: &mut Vec<Association>,
        new_ids: &mut Vec<u64>,
    ) -> Result<Option<AssociationTrace>, TrackError> {
        let t0 = Instant::now();
        let track_boxes: Vec<_> = self.tracks.iter().map(|t| t.last_box).collect();
        let det_boxes: Vec<_> = detections.iter().map(|d| d.bbox).collect();
        let stage1 = spatial_match(&track_boxes, &det_boxes, self.cfg.tau_o);
        let mut matched: Vec<(usize, usize, AssociationStage)> = stage1
            .pairs
            .iter()
            .map(|&(t, d)| (t, d, AssociationStage::Spatial))
            .collect();
        self.timings.association += t0.elapsed();

        let threshold = self.match_threshold();
        let mut distances = Vec::new();
        let mut stage2_pairs = Vec::new();
        let mut leftover_tracks = stage1.unmatched_tracks.clone();
        let mut leftover_dets = stage1.unmatched_detections.clone();
        if self.cfg.pose_matching && !leftover_tracks.is_empty() && !leftover_dets.is_empty() {
            let t1 = Instant::now();
            let matcher = self.matcher.ok_or(TrackError::MatcherUnavailable)?;
            let det_emb: Vec<Option<Embedding>> = leftover_dets
                .iter()
                .map(|&d| {
                    let n = normalize_pose(&detections[d].pose, &detections[d].bbox).ok()?;
                    matcher.embed(&n).ok()
                })
                .collect();
            for &t in &leftover_tracks {
                let emb = self.embedding_of(t);
                if self.tracks[t].embedding_cache.is_none() {
                    self.tracks[t].embedding_cache = emb.clone();
                }
                distances.push(
                    det_emb
                        .iter()
                        .map(|de| match (&emb, de) {
                            (Some(a), Some(b)) => pose_distance(a, b),
                            _ => f64::INFINITY,
                        })
                        .collect::<Vec<f64>>(),
                );
            }
            let stage2 = pose_match(&distances, leftover_dets.len(), threshold);
            for &(a, b) in &stage2.pairs {
                matched.push((leftover_tracks[a], leftover_dets[b], AssociationStage::Pose));
            }
            stage2_pairs = stage2.pairs;
            self.timings.matching += t1.elapsed();
        }

        let trace = self.cfg.record_traces.then(|| AssociationTrace {
            track_ids: self.tracks.iter().map(|t| t.id).collect(),
            iou: iou_matrix(&track_boxes, &det_boxes),
            tau_o: self.cfg.tau_o,
            spatial: stage1.pairs.clone(),
            leftover_tracks: leftover_tracks.clone(),
            leftover_detections: leftover_dets.clone(),
            distances: distances.clone(),
            match_threshold: threshold,
            pose: stage2_pairs.clone(),
        });

        let t2 = Instant::now();
        let mut track_matched = vec![false; self.tracks.len()];
        let mut det_matched = vec![false; detections.len()];
        matched.sort_by_key(|&(t, _, _)| t);
        for &(t, d, stage) in &matched {
            let track = &mut self.tracks[t];
            track.state = TrackState::Tracked;
            track.last_pose = detections[d].pose.clone();
            track.last_box = detections[d].bbox;
            track.last_seen_frame = frame;
            track.embedding_cache = None;
            track_matched[t] = true;
            det_matched[d] = true;
            associations.push(Association {
                track_id: track.id,
                detection: d,
                stage,
            });
        }
        for (t, track) in self.tracks.iter_mut().enumerate() {
            if !track_matched[t] {
                track.state = TrackState::Lost;
            }
        }
        leftover_tracks.retain(|&t| !track_matched[t]);
        leftover_dets.retain(|&d| !det_matched[d]);
        if !(self.cfg.restrict_new_ids && frame > 0) {
            for &d in &leftover_dets {
                let id = self.next_id;
                self.next_id += 1;
                new_ids.push(id);
                self.tracks.push(Track {
                    id,
                    state: TrackState::Tracked,
                    last_pose: detections[d].pose.clone(),
                    last_box: detections[d].bbox,
                    last_seen_frame: frame,
                    embedding_cache: None,
                });
            }
        }
        self.timings.association += t2.elapsed();
        Ok(trace)
    }
}

/// Runs the engine over a whole sequence with replay providers.
pub fn run_replay(
    seq: &ObservationSequence,
    cfg: &TrackerConfig,
    matcher: Option<&PoseMatcher>,
    estimator: &ReplayEstimator<'_>,
) -> Result<(Vec<FrameResult>, EngineTimings), TrackError> {
    let detector = ReplayDetector::new(seq);
    let mut engine = TrackerEngine::new(cfg.clone(), matcher)?;
    let mut out = Vec::with_capacity(seq.len());
    for frame in 0..seq.len() {
        out.push(engine.step(frame, &detector, estimator)?);
    }
    Ok((out, engine.timings))
}

pub fn to_tracked_sequence(seq: &ObservationSequence, results: &[FrameResult]) -> TrackedSequence {
    TrackedSequence {
        seq_id: seq.seq_id.clone(),
        image_size: seq.image_size,
        joint_order: seq.joint_order.clone(),
        frames: results
            .iter()
            .map(|r| TrackedFrame {
                index: r.frame,
                keyframe: r.keyframe,
                entries: r
                    .entries
                    .iter()
                    .map(|e| TrackedEntry {
                        track_id: e.id,
                        state: e.state,
                        pose: e.pose.clone(),
                        bbox: e.bbox,
                    })
                    .collect(),
            })
            .collect(),
    }
}
