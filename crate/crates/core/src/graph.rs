//! Directed interaction topology and its algebraic operators.
//!
//! An edge `(j, i)` means "agent `j` influences agent `i`": `j` is the tail,
//! `i` the head. The position of an edge in the list is its global index;
//! incidence columns, weight vectors and output files all use it.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("state dimension must be at least 1")]
    ZeroStateDim,
    #[error("edge {index} references node {node}, but the graph has {num_nodes} nodes")]
    NodeOutOfRange {
        index: usize,
        node: usize,
        num_nodes: usize,
    },
    #[error("edge {index} is a self-loop on node {node}")]
    SelfLoop { index: usize, node: usize },
    #[error("edge {index} duplicates edge {first}")]
    DuplicateEdge { index: usize, first: usize },
    #[error("expected {expected} edge weights, got {got}")]
    WeightLength { expected: usize, got: usize },
    #[error("expected a state of length {expected}, got {got}")]
    StateLength { expected: usize, got: usize },
}

/// A directed edge, zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_nodes: usize,
    state_dim: usize,
    edges: Vec<Edge>,
}

impl Graph {
    /// Builds a graph from zero-based `(tail, head)` pairs.
    pub fn new(
        num_nodes: usize,
        edges: &[(usize, usize)],
        state_dim: usize,
    ) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::NoNodes);
        }
        if state_dim == 0 {
            return Err(GraphError::ZeroStateDim);
        }
        let mut out: Vec<Edge> = Vec::with_capacity(edges.len());
        for (index, &(tail, head)) in edges.iter().enumerate() {
            for node in [tail, head] {
                if node >= num_nodes {
                    return Err(GraphError::NodeOutOfRange {
                        index,
                        node,
                        num_nodes,
                    });
                }
            }
            if tail == head {
                return Err(GraphError::SelfLoop { index, node: tail });
            }
            let edge = Edge { tail, head };
            if let Some(first) = out.iter().position(|e| *e == edge) {
                return Err(GraphError::DuplicateEdge { index, first });
            }
            out.push(edge);
        }
        Ok(Self {
            num_nodes,
            state_dim,
            edges: out,
        })
    }

    /// Builds a graph from one-based `(j, i)` pairs, the convention used in
    /// configuration files.
    pub fn from_one_based(
        num_nodes: usize,
        edges: &[(usize, usize)],
        state_dim: usize,
    ) -> Result<Self, GraphError> {
        let mut zero_based = Vec::with_capacity(edges.len());
        for (index, &(j, i)) in edges.iter().enumerate() {
            if j == 0 || i == 0 {
                return Err(GraphError::NodeOutOfRange {
                    index,
                    node: 0,
                    num_nodes,
                });
            }
            zero_based.push((j - 1, i - 1));
        }
        Self::new(num_nodes, &zero_based, state_dim)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    /// Length of the stacked ensemble state, `d * N`.
    pub fn ensemble_dim(&self) -> usize {
        self.state_dim * self.num_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges as one-based `(j, i)` pairs.
    pub fn one_based_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .map(|e| (e.tail + 1, e.head + 1))
            .collect()
    }

    pub fn incidence(&self) -> IncidenceSet {
        let (n, m) = (self.num_nodes, self.edges.len());
        let mut d_in = DMatrix::zeros(n, m);
        let mut d_out = DMatrix::zeros(n, m);
        for (k, e) in self.edges.iter().enumerate() {
            d_in[(e.head, k)] = 1.0;
            d_out[(e.tail, k)] = 1.0;
        }
        let signed = &d_in - &d_out;
        IncidenceSet {
            signed,
            d_in,
            d_out,
        }
    }

    /// Weighted in-Laplacian `D_in diag(w) Dᵀ`.
    pub fn in_laplacian(&self, weights: &DVector<f64>) -> Result<DMatrix<f64>, GraphError> {
        self.check_weights(weights.len())?;
        let inc = self.incidence();
        let mut scaled = inc.d_in.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= weights[k];
        }
        Ok(scaled * inc.signed.transpose())
    }

    /// Applies `(L_in(w) ⊗ I_d) x` edge by edge, without forming either matrix.
    pub fn apply_in_laplacian(
        &self,
        weights: &[f64],
        x: &DVector<f64>,
    ) -> Result<DVector<f64>, GraphError> {
        self.check_weights(weights.len())?;
        if x.len() != self.ensemble_dim() {
            return Err(GraphError::StateLength {
                expected: self.ensemble_dim(),
                got: x.len(),
            });
        }
        let d = self.state_dim;
        let mut out = DVector::zeros(x.len());
        for (e, &w) in self.edges.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            for c in 0..d {
                out[e.head * d + c] += w * (x[e.head * d + c] - x[e.tail * d + c]);
            }
        }
        Ok(out)
    }

    pub(crate) fn check_weights(&self, len: usize) -> Result<(), GraphError> {
        if len != self.edges.len() {
            return Err(GraphError::WeightLength {
                expected: self.edges.len(),
                got: len,
            });
        }
        Ok(())
    }
}

/// Signed incidence `D`, in-degree `D_in` and out-degree `D_out` matrices,
/// each `N × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSet {
    pub signed: DMatrix<f64>,
    pub d_in: DMatrix<f64>,
    pub d_out: DMatrix<f64>,
}
