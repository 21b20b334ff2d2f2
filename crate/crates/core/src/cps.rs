//! The physical graph: node locations, distances, and the (node, lag) token
//! coordinate system shared by the encoder and the attention prior.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Mask;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("duplicate node id {0}")]
    DuplicateNode(usize),
    #[error("node ids must be 0..{expected} without gaps, found {found}")]
    NonDenseIds { expected: usize, found: usize },
    #[error("edge ({from}, {to}) references a node outside 0..{nodes}")]
    DanglingEdge { from: usize, to: usize, nodes: usize },
    #[error("node {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("lag {lag} out of range for T_max = {t_max}")]
    LagOutOfRange { lag: usize, t_max: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    /// Planar location in meters.
    pub location: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    /// Road length in meters.
    pub length: f64,
}

/// A (node, lag) slot; lag 0 is the current decision step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TokenIndex {
    pub node: usize,
    pub lag: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CpsGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    distances: Vec<f64>,
}

impl CpsGraph {
    /// Validates ids and precomputes the Euclidean distance table.
    pub fn new(mut nodes: Vec<Node>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        nodes.sort_by_key(|n| n.id);
        for (k, w) in nodes.windows(2).enumerate() {
            if w[0].id == w[1].id {
                return Err(GraphError::DuplicateNode(w[0].id));
            }
            if w[1].id != k + 1 {
                return Err(GraphError::NonDenseIds {
                    expected: nodes.len(),
                    found: w[1].id,
                });
            }
        }
        if nodes[0].id != 0 {
            return Err(GraphError::NonDenseIds {
                expected: nodes.len(),
                found: nodes[0].id,
            });
        }
        let n = nodes.len();
        if let Some(e) = edges.iter().find(|e| e.from >= n || e.to >= n) {
            return Err(GraphError::DanglingEdge {
                from: e.from,
                to: e.to,
                nodes: n,
            });
        }
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let [xi, yi] = nodes[i].location;
                let [xj, yj] = nodes[j].location;
                distances[i * n + j] = (xi - xj).hypot(yi - yj);
            }
        }
        Ok(Self {
            nodes,
            edges,
            distances,
        })
    }

    /// `rows × cols` lattice with `spacing` meters between neighbours and
    /// bidirectional edges; node id = `row * cols + col`.
    pub fn grid(rows: usize, cols: usize, spacing: f64) -> Result<Self, GraphError> {
        let mut nodes = Vec::with_capacity(rows * cols);
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let id = r * cols + c;
                nodes.push(Node {
                    id,
                    location: [c as f64 * spacing, r as f64 * spacing],
                });
                if c + 1 < cols {
                    edges.push(Edge { from: id, to: id + 1, length: spacing });
                    edges.push(Edge { from: id + 1, to: id, length: spacing });
                }
                if r + 1 < rows {
                    edges.push(Edge { from: id, to: id + cols, length: spacing });
                    edges.push(Edge { from: id + cols, to: id, length: spacing });
                }
            }
        }
        Self::new(nodes, edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn location(&self, i: usize) -> [f64; 2] {
        self.nodes[i].location
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.nodes.len() + j]
    }

    pub fn token_count(&self, t_max: usize) -> usize {
        t_max * self.nodes.len()
    }

    /// Lag-major flat index: `lag * |V| + node`.
    pub fn token_index(&self, node: usize, lag: usize, t_max: usize) -> Result<usize, GraphError> {
        token_index(self.nodes.len(), node, lag, t_max)
    }

    /// Same graph with every location shifted by `offset`.
    pub fn translated(&self, offset: [f64; 2]) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id,
                location: [n.location[0] + offset[0], n.location[1] + offset[1]],
            })
            .collect();
        Self::new(nodes, self.edges.clone()).expect("translation keeps ids valid")
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, GraphError> {
        let n = self.nodes.len();
        let nodes = self
            .nodes
            .iter()
            .map(|node| Node {
                id: perm[node.id],
                location: node.location,
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|e| {
                if e.from >= n || e.to >= n {
                    *e
                } else {
                    Edge { from: perm[e.from], to: perm[e.to], length: e.length }
                }
            })
            .collect();
        Self::new(nodes, edges)
    }
}

pub fn token_index(num_nodes: usize, node: usize, lag: usize, t_max: usize) -> Result<usize, GraphError> {
    if node >= num_nodes {
        return Err(GraphError::NodeOutOfRange { node, nodes: num_nodes });
    }
    if lag >= t_max {
        return Err(GraphError::LagOutOfRange { lag, t_max });
    }
    Ok(lag * num_nodes + node)
}

/// Inverse of [`token_index`].
pub fn token_coords(num_nodes: usize, index: usize) -> TokenIndex {
    TokenIndex {
        node: index % num_nodes,
        lag: index / num_nodes,
    }
}

/// Whether a key at lag `key_lag` lies strictly in the future of a query
/// at lag `query_lag` (larger lag means further in the past).
pub fn is_future(query_lag: usize, key_lag: usize) -> bool {
    key_lag < query_lag
}

/// Token-pair mask over the lag-major layout; `true` marks a key token
/// that is strictly later than its query token.
pub fn causal_mask(num_nodes: usize, t_max: usize) -> Mask {
    let n = num_nodes * t_max;
    Mask::from_fn(n, n, |q, k| is_future(q / num_nodes, k / num_nodes))
}
