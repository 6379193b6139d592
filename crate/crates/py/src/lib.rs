//! Python bindings: sequences, the pose matcher, the tracker and the
//! keypoint-level MOT evaluation.

use std::path::PathBuf;

use keytrack::eval::{self, Counts};
use keytrack::geometry::{self, BoundingBox, Keypoint, Pose};
use keytrack::matcher::{self, weights_file, PairDataset, PoseMatcher, TrainConfig};
use keytrack::providers::sequence_file::{self, TrackedSequence};
use keytrack::providers::synth::SynthConfig;
use keytrack::providers::{self, ObservationSequence, ReplayEstimator};
use keytrack::skeleton::SkeletonTopology;
use keytrack::tracking::{self, KeyframeMode, TrackerConfig};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(keytrack, KeytrackError, PyValueError);

fn err(e: impl std::fmt::Display) -> PyErr {
    KeytrackError::new_err(e.to_string())
}

fn pose_of(keypoints: Vec<[f64; 3]>) -> Pose {
    Pose::new(keypoints.into_iter().map(|[x, y, s]| Keypoint::new(x, y, s)).collect())
}

fn bbox_of(b: [f64; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3])
}

/// Intersection over union of two `[x_min, y_min, x_max, y_max]` boxes.
#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    geometry::iou(&bbox_of(a), &bbox_of(b))
}

/// Box over the confident joints, grown by 20% per side.
#[pyfunction]
fn bbox_from_pose(keypoints: Vec<[f64; 3]>) -> PyResult<[f64; 4]> {
    Ok(geometry::bbox_from_pose(&pose_of(keypoints)).map_err(err)?.to_array())
}

#[pyfunction]
fn mean_confidence(keypoints: Vec<[f64; 3]>) -> f64 {
    geometry::mean_confidence(&pose_of(keypoints))
}

/// Joint coordinates relative to the center of `bbox`, in [-1, 1]; invalid joints
/// come back as `None`.
#[pyfunction]
fn normalize_pose(keypoints: Vec<[f64; 3]>, bbox: [f64; 4]) -> PyResult<Vec<Option<[f64; 2]>>> {
    let n = geometry::normalize_pose(&pose_of(keypoints), &bbox_of(bbox)).map_err(err)?;
    Ok(n.coords.iter().zip(&n.valid).map(|(c, &v)| v.then_some(*c)).collect())
}

#[pyclass(name = "Sequence", module = "keytrack", frozen)]
struct PySequence {
    inner: ObservationSequence,
}

#[pymethods]
impl PySequence {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: providers::load_sequence(&path).map_err(err)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: sequence_file::parse_sequence(text).map_err(err)? })
    }

    /// Generates a synthetic sequence from a generator config given as JSON.
    #[staticmethod]
    fn synth(config_json: &str) -> PyResult<Self> {
        let cfg: SynthConfig = serde_json::from_str(config_json).map_err(err)?;
        Ok(Self { inner: providers::synth_sequence(&cfg).map_err(err)? })
    }

    fn to_json(&self) -> String {
        providers::sequence_to_json(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        providers::save_sequence(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn seq_id(&self) -> &str {
        &self.inner.seq_id
    }

    #[getter]
    fn max_people(&self) -> usize {
        self.inner.max_people()
    }

    /// Ground-truth ids present in each frame.
    fn gt_ids(&self) -> Vec<Vec<Option<u64>>> {
        self.inner.frames.iter().map(|f| f.candidates.iter().map(|c| c.gt_id).collect()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Sequence(seq_id={:?}, frames={})", self.inner.seq_id, self.inner.len())
    }
}

#[pyclass(name = "Matcher", module = "keytrack", frozen)]
struct PyMatcher {
    inner: PoseMatcher,
}

#[pymethods]
impl PyMatcher {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: weights_file::load(&path).map_err(err)? })
    }

    /// Trains on a pair file; `config_json` holds training keys, missing
    /// ones take their defaults. Returns the matcher and the loss curve.
    #[staticmethod]
    #[pyo3(signature = (pairs_path, config_json = "{}"))]
    fn train(pairs_path: PathBuf, config_json: &str) -> PyResult<(Self, Vec<f64>)> {
        let ds = PairDataset::load(&pairs_path).map_err(err)?;
        let cfg: TrainConfig = serde_json::from_str(config_json).map_err(err)?;
        let (m, curve) = matcher::fit_matcher(&ds, &cfg, &SkeletonTopology::posetrack15()).map_err(err)?;
        Ok((Self { inner: m }, curve))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        weights_file::save(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    /// Embedding distance between two poses, each normalized by its own box.
    fn distance(&self, a: Vec<[f64; 3]>, b: Vec<[f64; 3]>) -> PyResult<f64> {
        let na = geometry::normalize_by_own_box(&pose_of(a)).map_err(err)?;
        let nb = geometry::normalize_by_own_box(&pose_of(b)).map_err(err)?;
        self.inner.distance(&na, &nb).map_err(err)
    }

    fn embed(&self, keypoints: Vec<[f64; 3]>) -> PyResult<Vec<f64>> {
        let n = geometry::normalize_by_own_box(&pose_of(keypoints)).map_err(err)?;
        Ok(self.inner.embed(&n).map_err(err)?.as_slice().to_vec())
    }
}

#[pyclass(name = "Tracked", module = "keytrack", frozen)]
struct PyTracked {
    inner: TrackedSequence,
}

#[pymethods]
impl PyTracked {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: sequence_file::load_tracked(&path).map_err(err)? })
    }

    fn to_json(&self) -> String {
        sequence_file::tracked_to_json(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        sequence_file::save_tracked(&self.inner, &path).map_err(err)
    }

    /// Ids of the tracked (not lost) entries in each frame.
    fn track_ids(&self) -> Vec<Vec<u64>> {
        self.inner
            .frames
            .iter()
            .map(|f| f.entries.iter().filter(|e| e.state == tracking::TrackState::Tracked).map(|e| e.track_id).collect())
            .collect()
    }

    fn keyframes(&self) -> Vec<usize> {
        self.inner.frames.iter().filter(|f| f.keyframe).map(|f| f.index).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.frames.len()
    }
}

/// Tracks a sequence with replay providers. Pose matching is used when a
/// matcher is given.
#[pyfunction]
#[pyo3(signature = (sequence, matcher = None, *, keyframe_interval = 5, mode = "hybrid", tau_s = 0.4, tau_o = 0.3, match_threshold = None))]
fn track(
    sequence: &PySequence,
    matcher: Option<&PyMatcher>,
    keyframe_interval: usize,
    mode: &str,
    tau_s: f64,
    tau_o: f64,
    match_threshold: Option<f64>,
) -> PyResult<PyTracked> {
    let cfg = TrackerConfig {
        keyframe_interval,
        mode: mode.parse::<KeyframeMode>().map_err(err)?,
        tau_s,
        tau_o,
        match_threshold,
        pose_matching: matcher.is_some(),
        ..Default::default()
    };
    let seq = &sequence.inner;
    let (results, _) =
        tracking::run_replay(seq, &cfg, matcher.map(|m| &m.inner), &ReplayEstimator::new(seq)).map_err(err)?;
    Ok(PyTracked { inner: tracking::to_tracked_sequence(seq, &results) })
}

fn counts_dict<'py>(py: Python<'py>, c: &Counts) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("gt", c.gt)?;
    d.set_item("matches", c.matches)?;
    d.set_item("misses", c.misses)?;
    d.set_item("false_positives", c.false_positives)?;
    d.set_item("id_switches", c.id_switches)?;
    d.set_item("mota", c.mota())?;
    d.set_item("recall", c.recall())?;
    Ok(d)
}

/// Keypoint-level MOT counts. Returns a dict with the totals plus a
/// `joints` dict of per-joint counts.
#[pyfunction]
#[pyo3(signature = (gt, pred, dist_threshold = eval::DEFAULT_DIST_THRESHOLD))]
fn mota<'py>(py: Python<'py>, gt: &PySequence, pred: &PyTracked, dist_threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    let t = eval::mota(&gt.inner, &pred.inner, dist_threshold).map_err(err)?;
    let out = counts_dict(py, &t.total())?;
    let joints = PyDict::new(py);
    for (name, c) in t.joint_names.iter().zip(&t.per_joint) {
        joints.set_item(name, counts_dict(py, c)?)?;
    }
    out.set_item("joints", joints)?;
    Ok(out)
}

/// Mines pairs from annotated sequences and writes them to `out`; returns
/// `(positive, hard_negative, other_negative)` counts.
#[pyfunction]
fn generate_pairs(sequences: Vec<PyRef<'_, PySequence>>, out: PathBuf) -> PyResult<(usize, usize, usize)> {
    let seqs: Vec<ObservationSequence> = sequences.iter().map(|s| s.inner.clone()).collect();
    let ds = matcher::generate_pairs(&seqs);
    ds.save(&out).map_err(err)?;
    let c = ds.counts();
    Ok((c.positive, c.hard_negative, c.other_negative))
}

#[pymodule]
#[pyo3(name = "keytrack")]
pub fn keytrack_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KeytrackError", m.py().get_type::<KeytrackError>())?;
    m.add_class::<PySequence>()?;
    m.add_class::<PyMatcher>()?;
    m.add_class::<PyTracked>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(bbox_from_pose, m)?)?;
    m.add_function(wrap_pyfunction!(mean_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_pose, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(mota, m)?)?;
    m.add_function(wrap_pyfunction!(generate_pairs, m)?)?;
    Ok(())
}
