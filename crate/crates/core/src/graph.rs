//! Human-centred star graph and its symmetric normalized adjacency.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Matrix;
use crate::perception::{Detection, NodeFeature};
use crate::world::ObjectKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Replace raw pixel distances by `exp(-d / affinity_scale)`.
    pub edge_affinity: bool,
    pub affinity_scale: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            edge_affinity: false,
            affinity_scale: 100.0,
        }
    }
}

/// Node 0 is the human; every other node has exactly one edge, to node 0.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub kinds: Vec<ObjectKind>,
    /// (m + 1) x 2F node feature matrix.
    pub features: Matrix,
    /// `weights[j - 1]` is the weight of edge (0, j).
    pub weights: Vec<f64>,
    pub pose_available: bool,
}

impl SceneGraph {
    pub fn node_count(&self) -> usize {
        self.kinds.len()
    }

    /// Edge list `(0, j, w)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().enumerate().map(|(i, &w)| (0, i + 1, w))
    }

    /// Dense adjacency A without self-loops.
    pub fn adjacency(&self) -> Matrix {
        let n = self.node_count();
        let mut a = Matrix::zeros(n, n);
        for (i, j, w) in self.edges() {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }
}

/// Builds the star graph over one frame's detections. `features[k]` belongs to
/// `detections[k]`; the human detection becomes node 0 whatever its position.
pub fn build_star_graph(
    detections: &[Detection],
    features: &[NodeFeature],
    keypoints_present: bool,
    cfg: &GraphConfig,
) -> Result<SceneGraph> {
    if detections.len() != features.len() {
        return Err(Error::LengthMismatch(detections.len(), features.len()));
    }
    let hub = detections
        .iter()
        .position(|d| d.kind == ObjectKind::Human)
        .ok_or(Error::MissingHuman)?;
    let cols = features[hub].0.len();
    let order: Vec<usize> = std::iter::once(hub)
        .chain((0..detections.len()).filter(|&k| k != hub && detections[k].kind != ObjectKind::Human))
        .collect();
    let mut x = Matrix::zeros(order.len(), cols);
    for (row, &k) in order.iter().enumerate() {
        if features[k].0.len() != cols {
            return Err(Error::DimensionMismatch {
                context: "node feature",
                expected: cols,
                actual: features[k].0.len(),
            });
        }
        x.row_mut(row).copy_from_slice(&features[k].0);
    }
    let centre = detections[hub].bbox_center;
    let weights = order[1..]
        .iter()
        .map(|&k| {
            let d = detections[k].bbox_center.dist(centre);
            if cfg.edge_affinity {
                (-d / cfg.affinity_scale).exp()
            } else {
                d
            }
        })
        .collect();
    Ok(SceneGraph {
        kinds: order.iter().map(|&k| detections[k].kind).collect(),
        features: x,
        weights,
        pose_available: keypoints_present,
    })
}

/// `D'^{-1/2} (A + I) D'^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency(pub Matrix);

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }
}

pub fn normalize_adjacency(graph: &SceneGraph) -> NormalizedAdjacency {
    normalize_star(&graph.weights)
}

/// Normalized adjacency of a star with the given hub-edge weights.
pub fn normalize_star(weights: &[f64]) -> NormalizedAdjacency {
    let n = weights.len() + 1;
    let mut deg = vec![1.0; n];
    for (j, &w) in weights.iter().enumerate() {
        deg[0] += w;
        deg[j + 1] += w;
    }
    let inv: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = inv[i] * inv[i];
    }
    for (j, &w) in weights.iter().enumerate() {
        let v = inv[0] * w * inv[j + 1];
        a[(0, j + 1)] = v;
        a[(j + 1, 0)] = v;
    }
    NormalizedAdjacency(a)
}
