//! Skeleton graph, spatial-configuration partitioning and the normalized
//! per-partition adjacency operators used by the graph convolution.
//!
//! Every root joint `i` samples its neighborhood `B(i)` (itself plus its
//! 1-hop neighbors). Each neighbor `j` gets a partition label from the
//! reference radii (mean distance of a joint to the skeleton gravity
//! center over the training poses):
//!
//! * `0` (root) when `r_j == r_i`
//! * `1` (centripetal) when `r_j < r_i`
//! * `2` (centrifugal) when `r_j > r_i`
//!
//! and weight `1 / Z_i(j)` where `Z_i(j)` counts the members of `B(i)`
//! sharing `j`'s label.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::NormalizedPose;

pub const NUM_PARTITIONS: usize = 3;

const TOPOLOGY_MAGIC: &str = "keytrack-topology";
const TOPOLOGY_VERSION: u32 = 1;

/// Canonical 15-joint order shared by sequence files, weights files and
/// the default topology.
pub const DEFAULT_JOINT_ORDER: [&str; 15] = [
    "head_top",
    "neck",
    "nose",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// The bundled default topology file.
pub const DEFAULT_TOPOLOGY_TEXT: &str = include_str!("../data/posetrack15.topology");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("pose has no valid joints")]
    EmptyPose,
    #[error("joint {0} is invalid in every training pose")]
    NoValidSamples(usize),
    #[error("joint {j} is not in the neighborhood of joint {i}")]
    NotNeighbors { i: usize, j: usize },
    #[error("expected {expected} joints, got {got}")]
    JointCount { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Unordered pairs, stored with the smaller index first.
    pub edges: Vec<(usize, usize)>,
}

impl SkeletonTopology {
    pub fn new(
        name: impl Into<String>,
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
    ) -> Result<Self, GraphError> {
        let topo = Self {
            name: name.into(),
            joint_names,
            edges: edges
                .into_iter()
                .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
                .collect(),
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn posetrack15() -> Self {
        Self::parse(DEFAULT_TOPOLOGY_TEXT).expect("bundled topology is valid")
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.num_joints();
        if n == 0 {
            return Err(GraphError::InvalidTopology("no joints".into()));
        }
        let names: BTreeSet<&str> = self.joint_names.iter().map(String::as_str).collect();
        if names.len() != n {
            return Err(GraphError::InvalidTopology("duplicate joint names".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(GraphError::InvalidTopology(format!(
                    "edge ({a}, {b}) references a joint outside 0..{n}"
                )));
            }
            if a == b {
                return Err(GraphError::InvalidTopology(format!("self-loop on joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(GraphError::InvalidTopology(format!("duplicate edge ({a}, {b})")));
            }
        }
        // connectivity
        let adj = self.neighbor_lists();
        let mut visited = vec![false; n];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !visited[u] {
                    visited[u] = true;
                    stack.push(u);
                }
            }
        }
        if let Some(i) = visited.iter().position(|v| !v) {
            return Err(GraphError::InvalidTopology(format!(
                "graph is disconnected, joint {i} unreachable"
            )));
        }
        Ok(())
    }

    /// 1-hop neighbors of every joint, in ascending index order.
    pub fn neighbor_lists(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.num_joints()];
        for &(a, b) in &self.edges {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// `B(i)`: the root itself plus its 1-hop neighbors, ascending.
    pub fn neighborhood(&self, i: usize) -> Vec<usize> {
        let mut b: BTreeSet<usize> = self.neighbor_lists()[i].iter().copied().collect();
        b.insert(i);
        b.into_iter().collect()
    }

    /// Parses the line-oriented topology format:
    ///
    /// ```text
    /// # comment
    /// keytrack-topology 1
    /// name <identifier>
    /// joint <name>            (one per joint, in order)
    /// edge <name> <name>      (one per undirected edge)
    /// ```
    pub fn parse(text: &str) -> Result<Self, GraphError> {
        let mut header = false;
        let mut name = None;
        let mut joints: Vec<String> = Vec::new();
        let mut edge_names: Vec<(usize, String, String)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| GraphError::Parse { line: line_no, msg };
            if !header {
                if tokens.len() != 2 || tokens[0] != TOPOLOGY_MAGIC {
                    return Err(err(format!("expected '{TOPOLOGY_MAGIC} <version>' header")));
                }
                let version: u32 = tokens[1]
                    .parse()
                    .map_err(|_| err(format!("bad version '{}'", tokens[1])))?;
                if version != TOPOLOGY_VERSION {
                    return Err(err(format!("unsupported topology version {version}")));
                }
                header = true;
                continue;
            }
            match (tokens[0], tokens.len()) {
                ("name", 2) => name = Some(tokens[1].to_string()),
                ("joint", 2) => joints.push(tokens[1].to_string()),
                ("edge", 3) => edge_names.push((line_no, tokens[1].into(), tokens[2].into())),
                _ => return Err(err(format!("unrecognized line '{line}'"))),
            }
        }
        if !header {
            return Err(GraphError::Parse {
                line: 0,
                msg: "empty topology file".into(),
            });
        }
        let lookup = |line: usize, n: &str| {
            joints.iter().position(|j| j == n).ok_or_else(|| GraphError::Parse {
                line,
                msg: format!("unknown joint '{n}'"),
            })
        };
        let edges = edge_names
            .iter()
            .map(|(line, a, b)| Ok((lookup(*line, a)?, lookup(*line, b)?)))
            .collect::<Result<Vec<_>, GraphError>>()?;
        Self::new(name.unwrap_or_else(|| "unnamed".into()), joints, edges)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{TOPOLOGY_MAGIC} {TOPOLOGY_VERSION}\nname {}\n", self.name);
        for j in &self.joint_names {
            let _ = writeln!(out, "joint {j}");
        }
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "edge {} {}", self.joint_names[a], self.joint_names[b]);
        }
        out
    }
}

/// Mean of the valid joint coordinates.
pub fn gravity_center(pose: &NormalizedPose) -> Result<[f64; 2], GraphError> {
    let mut sum = [0.0, 0.0];
    let mut n = 0usize;
    for (c, _) in pose.coords.iter().zip(&pose.valid).filter(|(_, v)| **v) {
        sum[0] += c[0];
        sum[1] += c[1];
        n += 1;
    }
    if n == 0 {
        return Err(GraphError::EmptyPose);
    }
    Ok([sum[0] / n as f64, sum[1] / n as f64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRadii(pub Vec<f64>);

impl ReferenceRadii {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-joint mean distance to the pose gravity center. Poses in which a
/// joint is invalid are skipped for that joint; poses with no valid joint
/// at all are skipped entirely.
pub fn compute_reference_radii<'a, I>(
    poses: I,
    topology: &SkeletonTopology,
) -> Result<ReferenceRadii, GraphError>
where
    I: IntoIterator<Item = &'a NormalizedPose>,
{
    let n = topology.num_joints();
    let mut sums = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for pose in poses {
        if pose.len() != n {
            return Err(GraphError::JointCount {
                expected: n,
                got: pose.len(),
            });
        }
        let Ok(g) = gravity_center(pose) else {
            continue;
        };
        for (i, (c, &v)) in pose.coords.iter().zip(&pose.valid).enumerate() {
            if v {
                sums[i] += (c[0] - g[0]).hypot(c[1] - g[1]);
                counts[i] += 1;
            }
        }
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(GraphError::NoValidSamples(i));
    }
    Ok(ReferenceRadii(
        sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
    ))
}

/// Partition class of neighbor `j` around root `i`.
pub fn partition_label(
    topology: &SkeletonTopology,
    i: usize,
    j: usize,
    radii: &ReferenceRadii,
) -> Result<usize, GraphError> {
    if i != j && !topology.edges.contains(&(i.min(j), i.max(j))) {
        return Err(GraphError::NotNeighbors { i, j });
    }
    Ok(label_from_radii(radii.0[i], radii.0[j]))
}

fn label_from_radii(r_root: f64, r_neighbor: f64) -> usize {
    if r_neighbor == r_root {
        0
    } else if r_neighbor < r_root {
        1
    } else {
        2
    }
}

/// Three `J x J` operators; `ops[c][[i, j]]` is `1 / Z_i(j)` when neighbor
/// `j` of root `i` falls in partition `c`, zero otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedAdjacency {
    pub ops: [Array2<f64>; NUM_PARTITIONS],
}

impl PartitionedAdjacency {
    pub fn num_joints(&self) -> usize {
        self.ops[0].nrows()
    }

    /// Reorders joints: new joint `k` is old joint `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        let ops = std::array::from_fn(|c| {
            Array2::from_shape_fn((n, n), |(a, b)| self.ops[c][[perm[a], perm[b]]])
        });
        Self { ops }
    }
}

pub fn build_partitioned_adjacency(
    topology: &SkeletonTopology,
    radii: &ReferenceRadii,
) -> Result<PartitionedAdjacency, GraphError> {
    let n = topology.num_joints();
    if radii.len() != n {
        return Err(GraphError::JointCount {
            expected: n,
            got: radii.len(),
        });
    }
    let mut ops: [Array2<f64>; NUM_PARTITIONS] = std::array::from_fn(|_| Array2::zeros((n, n)));
    for i in 0..n {
        let hood = topology.neighborhood(i);
        let labels = hood
            .iter()
            .map(|&j| partition_label(topology, i, j, radii))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sizes = [0usize; NUM_PARTITIONS];
        for &l in &labels {
            sizes[l] += 1;
        }
        for (&j, &l) in hood.iter().zip(&labels) {
            ops[l][[i, j]] = 1.0 / sizes[l] as f64;
        }
    }
    Ok(PartitionedAdjacency { ops })
}
