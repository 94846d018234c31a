//! The interaction policy `u(s)` and the edge weights it induces.
//!
//! A policy is stored as its values on a uniform grid over `[δ, Δ]` and read
//! as the piecewise-linear interpolant of those values. The weight of an
//! edge at distance `α` is the running integral
//!
//! ```text
//! w(α) = ∫_δ^α u(s) ds,   saturating at α = Δ and vanishing below δ.
//! ```
//!
//! Because the interpolant is piecewise linear, the integral is computed
//! exactly: whole cells contribute their trapezoid, and the cell holding `α`
//! contributes the exact area of its linear piece up to `α`.

use nalgebra::DVector;
use thiserror::Error;

use crate::graph::{Graph, GraphError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("invalid grid support: need 0 <= delta < Delta < inf, got [{delta}, {upper}]")]
    Support { delta: f64, upper: f64 },
    #[error("grid needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("expected {expected} policy values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("policy value at node {index} is not finite")]
    NonFinite { index: usize },
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("policies live on different grids")]
    GridMismatch,
    #[error("state has length {got}, graph expects {expected}")]
    StateLength { expected: usize, got: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Uniform grid `s_0 = δ, …, s_{M-1} = Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SGrid {
    delta: f64,
    upper: f64,
    num_points: usize,
}

impl SGrid {
    pub fn new(delta: f64, upper: f64, num_points: usize) -> Result<Self, PolicyError> {
        if !(delta >= 0.0 && delta < upper && upper.is_finite()) {
            return Err(PolicyError::Support { delta, upper });
        }
        if num_points < 2 {
            return Err(PolicyError::TooFewPoints(num_points));
        }
        Ok(Self {
            delta,
            upper,
            num_points,
        })
    }

    /// Lower end of the support, `δ`.
    pub fn lower(&self) -> f64 {
        self.delta
    }

    /// Upper end of the support, `Δ`.
    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn len(&self) -> usize {
        self.num_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn width(&self) -> f64 {
        self.upper - self.delta
    }

    pub fn spacing(&self) -> f64 {
        self.width() / (self.num_points - 1) as f64
    }

    pub fn node(&self, q: usize) -> f64 {
        if q + 1 == self.num_points {
            self.upper
        } else {
            self.delta + q as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.num_points).map(|q| self.node(q)).collect()
    }

    /// Trapezoid weight of node `q`: `h/2` at the ends, `h` inside.
    pub fn quadrature_weight(&self, q: usize) -> f64 {
        let h = self.spacing();
        if q == 0 || q + 1 == self.num_points {
            0.5 * h
        } else {
            h
        }
    }

    /// Locates `s ∈ [δ, Δ]` as `(cell, offset)` with `s = s_cell + offset`,
    /// `cell <= M - 2` and `0 <= offset <= h`.
    fn locate(&self, s: f64) -> (usize, f64) {
        let h = self.spacing();
        let raw = ((s - self.delta) / h).floor();
        let cell = if raw < 0.0 {
            0
        } else {
            (raw as usize).min(self.num_points - 2)
        };
        let offset = (s - self.node(cell)).clamp(0.0, h);
        (cell, offset)
    }

    /// Trapezoid inner product `Σ_q ω_q a_q b_q`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(q, (x, y))| self.quadrature_weight(q) * x * y)
            .sum()
    }

    /// Trapezoid-weighted L² norm, so thresholds keep their meaning under refinement.
    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Discrete indicator `[s_q < α]` consistent with the piecewise-linear
    /// reading of a policy: node `q` gets `(1/ω_q) ∫_δ^{min(α, Δ)} φ_q(s) ds`,
    /// where `φ_q` is the hat function of node `q`.
    ///
    /// Returns `(full, fractional)`: nodes `0..full` have value 1, the two
    /// entries of `fractional` are the nodes bracketing `α`, and all other
    /// nodes are 0. When `α >= Δ`, `full == M` and `fractional` is unused.
    pub fn indicator_fractions(&self, alpha: f64) -> (usize, [(usize, f64); 2]) {
        let m = self.num_points;
        if alpha <= self.delta {
            return (0, [(0, 0.0), (0, 0.0)]);
        }
        if alpha >= self.upper {
            return (m, [(0, 0.0), (0, 0.0)]);
        }
        let h = self.spacing();
        let (p, offset) = self.locate(alpha);
        let theta = offset / h;
        // left half of node p's hat is fully below alpha unless p is the first node
        let left = if p == 0 { 0.0 } else { 0.5 * h };
        let below_p = left + h * (theta - 0.5 * theta * theta);
        let below_next = 0.5 * h * theta * theta;
        (
            p,
            [
                (p, below_p / self.quadrature_weight(p)),
                (p + 1, below_next / self.quadrature_weight(p + 1)),
            ],
        )
    }
}

/// A policy sampled on an [`SGrid`], interpreted as piecewise linear.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    grid: SGrid,
    values: Vec<f64>,
    /// `cumulative[q] = ∫_δ^{s_q} u`.
    cumulative: Vec<f64>,
}

impl PolicyGrid {
    pub fn new(grid: SGrid, values: Vec<f64>) -> Result<Self, PolicyError> {
        if values.len() != grid.len() {
            return Err(PolicyError::Length {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite { index });
        }
        let h = grid.spacing();
        let mut cumulative = Vec::with_capacity(values.len());
        cumulative.push(0.0);
        for q in 1..values.len() {
            let prev = cumulative[q - 1];
            cumulative.push(prev + 0.5 * h * (values[q - 1] + values[q]));
        }
        Ok(Self {
            grid,
            values,
            cumulative,
        })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: SGrid, mut f: impl FnMut(f64) -> f64) -> Result<Self, PolicyError> {
        Self::new(grid, grid.nodes().into_iter().map(&mut f).collect())
    }

    pub fn constant(grid: SGrid, c: f64) -> Result<Self, PolicyError> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &SGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `self + step * direction`, on the same grid.
    pub fn axpy(&self, step: f64, direction: &[f64]) -> Result<Self, PolicyError> {
        if direction.len() != self.values.len() {
            return Err(PolicyError::Length {
                expected: self.values.len(),
                got: direction.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(direction)
            .map(|(u, d)| u + step * d)
            .collect();
        Self::new(self.grid, values)
    }

    /// `self - other` node by node.
    pub fn difference(&self, other: &PolicyGrid) -> Result<Vec<f64>, PolicyError> {
        if self.grid != other.grid {
            return Err(PolicyError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect())
    }

    /// Piecewise-linear interpolation with constant extrapolation outside `[δ, Δ]`.
    pub fn eval(&self, s: f64) -> f64 {
        if s <= self.grid.lower() {
            return self.values[0];
        }
        if s >= self.grid.upper() {
            return self.values[self.values.len() - 1];
        }
        let (p, offset) = self.grid.locate(s);
        let theta = offset / self.grid.spacing();
        self.values[p] + theta * (self.values[p + 1] - self.values[p])
    }

    /// `∫_δ^α u(s) ds` with the integrand cut off outside `[δ, Δ]`.
    pub fn weight(&self, alpha: f64) -> Result<f64, PolicyError> {
        if alpha < 0.0 || alpha.is_nan() {
            return Err(PolicyError::NegativeDistance(alpha));
        }
        Ok(self.weight_unchecked(alpha))
    }

    pub(crate) fn weight_unchecked(&self, alpha: f64) -> f64 {
        if alpha <= self.grid.lower() {
            return 0.0;
        }
        if alpha >= self.grid.upper() {
            return self.cumulative[self.cumulative.len() - 1];
        }
        let (p, offset) = self.grid.locate(alpha);
        let slope = (self.values[p + 1] - self.values[p]) / self.grid.spacing();
        self.cumulative[p] + offset * (self.values[p] + 0.5 * slope * offset)
    }

    /// `dw/dα`: equals `u(α)` inside `(δ, Δ)`, zero where the weight is flat.
    pub fn weight_slope(&self, alpha: f64) -> f64 {
        if alpha <= self.grid.lower() || alpha >= self.grid.upper() {
            0.0
        } else {
            self.eval(alpha)
        }
    }

    /// Per-edge weights at ensemble state `x`, in edge-list order.
    pub fn edge_weights(&self, x: &DVector<f64>, graph: &Graph) -> Result<Vec<f64>, PolicyError> {
        Ok(edge_distances(x, graph)?
            .into_iter()
            .map(|a| self.weight_unchecked(a))
            .collect())
    }
}

/// `α_k(x) = ‖x_i − x_j‖` for each edge `k = (j, i)`.
pub fn edge_distances(x: &DVector<f64>, graph: &Graph) -> Result<Vec<f64>, PolicyError> {
    if x.len() != graph.ensemble_dim() {
        return Err(PolicyError::StateLength {
            expected: graph.ensemble_dim(),
            got: x.len(),
        });
    }
    let d = graph.state_dim();
    Ok(graph
        .edges()
        .iter()
        .map(|e| {
            (0..d)
                .map(|c| {
                    let diff = x[e.head * d + c] - x[e.tail * d + c];
                    diff * diff
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}
