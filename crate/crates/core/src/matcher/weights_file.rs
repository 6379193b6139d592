//! Versioned JSON weights file.
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "topology": { "name", "joint_order": [..], "edges": [[a, b], ..] },
//!   "dims": { "joints", "in_channels", "hidden", "embed" },
//!   "activation": "relu",
//!   "margin": f64,
//!   "threshold": f64,
//!   "radii": [f64; joints],
//!   "tensors": [ { "name", "shape": [rows, cols] | [len], "data": [..] }, .. ]
//! }
//! ```
//!
//! Tensors appear in a fixed order (`layer1.w0..w2`, `layer1.bias`,
//! `layer1.edge_importance`, the same for `layer2`, then `head.w`,
//! `head.bias`), each row-major. Floats are written in shortest
//! round-trip form, so save/load is exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Dims, GcnWeights};
use super::{MatcherError, PoseMatcher};
use crate::skeleton::{ReferenceRadii, SkeletonTopology};

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TopologyRecord {
    name: String,
    joint_order: Vec<String>,
    edges: Vec<[usize; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsRecord {
    format_version: u32,
    topology: TopologyRecord,
    dims: Dims,
    activation: String,
    margin: f64,
    threshold: f64,
    radii: Vec<f64>,
    tensors: Vec<TensorRecord>,
}

pub fn to_json(m: &PoseMatcher) -> String {
    let record = WeightsRecord {
        format_version: WEIGHTS_FORMAT_VERSION,
        topology: TopologyRecord {
            name: m.topology.name.clone(),
            joint_order: m.topology.joint_names.clone(),
            edges: m.topology.edges.iter().map(|&(a, b)| [a, b]).collect(),
        },
        dims: m.weights.dims,
        activation: "relu".into(),
        margin: m.margin,
        threshold: m.threshold,
        radii: m.radii.0.clone(),
        tensors: m
            .weights
            .tensors()
            .into_iter()
            .map(|(name, shape, data)| TensorRecord {
                name,
                shape,
                data: data.to_vec(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&record).expect("weights serialize")
}

pub fn from_json(text: &str) -> Result<PoseMatcher, MatcherError> {
    let rec: WeightsRecord = serde_json::from_str(text).map_err(|e| MatcherError::Format(e.to_string()))?;
    if rec.format_version != WEIGHTS_FORMAT_VERSION {
        return Err(MatcherError::Format(format!(
            "unsupported weights version {}",
            rec.format_version
        )));
    }
    if rec.activation != "relu" {
        return Err(MatcherError::Format(format!("unsupported activation '{}'", rec.activation)));
    }
    let topology = SkeletonTopology::new(
        rec.topology.name,
        rec.topology.joint_order,
        rec.topology.edges.iter().map(|e| (e[0], e[1])).collect(),
    )?;
    let mut weights = GcnWeights::zeros(rec.dims);
    let expected: Vec<(String, Vec<usize>)> = weights
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if expected.len() != rec.tensors.len() {
        return Err(MatcherError::Format(format!(
            "expected {} tensors, found {}",
            expected.len(),
            rec.tensors.len()
        )));
    }
    for ((name, shape), t) in expected.iter().zip(&rec.tensors) {
        if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
            return Err(MatcherError::Format(format!(
                "tensor '{}' {:?} does not match expected '{name}' {shape:?}",
                t.name, t.shape
            )));
        }
    }
    for (slot, t) in weights.tensors_mut().into_iter().zip(&rec.tensors) {
        slot.copy_from_slice(&t.data);
    }
    if rec.radii.len() != topology.num_joints() {
        return Err(MatcherError::Format("radii length differs from joint count".into()));
    }
    if !(rec.margin > 0.0 && rec.threshold.is_finite()) {
        return Err(MatcherError::Format("margin must be positive and threshold finite".into()));
    }
    PoseMatcher::new(topology, ReferenceRadii(rec.radii), weights, rec.margin, rec.threshold)
}

pub fn save(m: &PoseMatcher, path: &Path) -> Result<(), MatcherError> {
    fs::write(path, to_json(m)).map_err(|e| MatcherError::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<PoseMatcher, MatcherError> {
    let text = fs::read_to_string(path).map_err(|e| MatcherError::Io(format!("{}: {e}", path.display())))?;
    from_json(&text)
}
