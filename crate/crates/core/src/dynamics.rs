//! Ensemble dynamics: goal-reaching control plus weighted consensus.
//!
//! ```text
//! ẋ = h(x) − (L_in(w(α(x))) ⊗ I_d) x
//! ```
//!
//! The Kronecker product is never formed; the interaction term is applied
//! edge by edge. Alternative but algebraically equal forms of the same drift
//! live in [`forms`] and are used as cross-checks.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::policy::{PolicyError, PolicyGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("state has length {got}, expected {expected}")]
    StateLength { expected: usize, got: usize },
    #[error("invalid horizon: {0}")]
    Horizon(String),
    #[error("goal gain must be positive, got {0}")]
    Gain(f64),
    #[error("activation threshold must be positive, got {0}")]
    Epsilon(f64),
    #[error("state became non-finite at t = {time} (step {step})")]
    Blowup { time: f64, step: usize },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Time grid `t0, t0 + dt, …, tf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Horizon {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
}

impl Horizon {
    pub fn new(t0: f64, tf: f64, dt: f64) -> Result<Self, DynamicsError> {
        let h = Self { t0, tf, dt };
        h.steps()?;
        Ok(h)
    }

    /// Number of steps; `(tf − t0)/dt` must be an integer to within 1e-9.
    pub fn steps(&self) -> Result<usize, DynamicsError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(DynamicsError::Horizon(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t0.is_finite() && self.tf.is_finite()) || self.tf < self.t0 {
            return Err(DynamicsError::Horizon(format!(
                "need finite t0 <= tf, got [{}, {}]",
                self.t0, self.tf
            )));
        }
        let ratio = (self.tf - self.t0) / self.dt;
        let n = ratio.round();
        if (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(DynamicsError::Horizon(format!(
                "dt = {} does not divide tf - t0 = {}",
                self.dt,
                self.tf - self.t0
            )));
        }
        Ok(n as usize)
    }

    pub fn duration(&self) -> f64 {
        self.tf - self.t0
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    /// Same interval with the step halved.
    pub fn refined(&self) -> Self {
        Self {
            dt: 0.5 * self.dt,
            ..*self
        }
    }
}

/// A uniformly sampled ensemble trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: Horizon,
    states: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn new(horizon: Horizon, states: Vec<DVector<f64>>) -> Result<Self, DynamicsError> {
        let steps = horizon.steps()?;
        if states.len() != steps + 1 {
            return Err(DynamicsError::Horizon(format!(
                "expected {} states, got {}",
                steps + 1,
                states.len()
            )));
        }
        let dim = states[0].len();
        for (step, s) in states.iter().enumerate() {
            if s.len() != dim {
                return Err(DynamicsError::StateLength {
                    expected: dim,
                    got: s.len(),
                });
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::Blowup {
                    time: horizon.time(step),
                    step,
                });
            }
        }
        Ok(Self { horizon, states })
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn time(&self, step: usize) -> f64 {
        self.horizon.time(step)
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &DVector<f64> {
        &self.states[self.states.len() - 1]
    }

    /// Linear interpolation between stored samples at `t0 + (step + frac)·dt`.
    pub fn interpolate(&self, step: usize, frac: f64) -> DVector<f64> {
        if frac == 0.0 || step + 1 >= self.states.len() {
            return self.states[step.min(self.states.len() - 1)].clone();
        }
        &self.states[step] * (1.0 - frac) + &self.states[step + 1] * frac
    }

    /// Every other sample; inverse of running on [`Horizon::refined`].
    pub fn coarsened(&self) -> Result<Self, DynamicsError> {
        let h = Horizon {
            dt: 2.0 * self.horizon.dt,
            ..self.horizon
        };
        Self::new(h, self.states.iter().step_by(2).cloned().collect())
    }
}

/// Parameters of the saturated goal regulator
/// `h_i = k tanh(‖x̃_i‖/k) x̃_i/‖x̃_i‖` with `x̃_i = x_{i,g} − x_i`.
///
/// The regulator acts on agent `i` only while `‖x̃_i‖³ < ε`; the default
/// `ε = ∞` keeps it active everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct GoalSpec {
    goals: DVector<f64>,
    state_dim: usize,
    gain: f64,
    epsilon: f64,
}

impl GoalSpec {
    pub fn new(
        goals: DVector<f64>,
        state_dim: usize,
        gain: f64,
        epsilon: f64,
    ) -> Result<Self, DynamicsError> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(DynamicsError::Gain(gain));
        }
        if !(epsilon > 0.0) {
            return Err(DynamicsError::Epsilon(epsilon));
        }
        if state_dim == 0 || !goals.len().is_multiple_of(state_dim) {
            return Err(DynamicsError::StateLength {
                expected: state_dim,
                got: goals.len(),
            });
        }
        Ok(Self {
            goals,
            state_dim,
            gain,
            epsilon,
        })
    }

    /// Regulator active everywhere.
    pub fn always_active(
        goals: DVector<f64>,
        state_dim: usize,
        gain: f64,
    ) -> Result<Self, DynamicsError> {
        Self::new(goals, state_dim, gain, f64::INFINITY)
    }

    pub fn goals(&self) -> &DVector<f64> {
        &self.goals
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn is_active(&self, dist: f64) -> bool {
        dist.powi(3) < self.epsilon
    }

    fn check(&self, x: &DVector<f64>) -> Result<(), DynamicsError> {
        if x.len() != self.goals.len() {
            return Err(DynamicsError::StateLength {
                expected: self.goals.len(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Block-diagonal matrix with `d × d` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiagonal {
    pub blocks: Vec<DMatrix<f64>>,
}

impl BlockDiagonal {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let d = self.blocks.first().map_or(0, |b| b.nrows());
        let n = d * self.blocks.len();
        let mut out = DMatrix::zeros(n, n);
        for (i, b) in self.blocks.iter().enumerate() {
            out.view_mut((i * d, i * d), (d, d)).copy_from(b);
        }
        out
    }

    /// `Aᵀ v`.
    pub fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let d = self.blocks.first().map_or(0, |b| b.nrows());
        let mut out = DVector::zeros(v.len());
        for (i, b) in self.blocks.iter().enumerate() {
            let r = b.tr_mul(&v.rows(i * d, d));
            out.rows_mut(i * d, d).copy_from(&r);
        }
        out
    }
}

pub fn goal_control(x: &DVector<f64>, spec: &GoalSpec) -> Result<DVector<f64>, DynamicsError> {
    spec.check(x)?;
    Ok(goal_control_unchecked(x, spec))
}

pub(crate) fn goal_control_unchecked(x: &DVector<f64>, spec: &GoalSpec) -> DVector<f64> {
    let d = spec.state_dim;
    let k = spec.gain;
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() / d {
        let err = spec.goals.rows(i * d, d) - x.rows(i * d, d);
        let r = err.norm();
        if r == 0.0 || !spec.is_active(r) {
            continue;
        }
        let scale = k * (r / k).tanh() / r;
        out.rows_mut(i * d, d).copy_from(&(err * scale));
    }
    out
}

/// `∂h/∂x`, with respect to the positions themselves (not the goal errors).
pub fn goal_control_jacobian(
    x: &DVector<f64>,
    spec: &GoalSpec,
) -> Result<BlockDiagonal, DynamicsError> {
    spec.check(x)?;
    Ok(goal_control_jacobian_unchecked(x, spec))
}

pub(crate) fn goal_control_jacobian_unchecked(x: &DVector<f64>, spec: &GoalSpec) -> BlockDiagonal {
    let d = spec.state_dim;
    let k = spec.gain;
    let eye = DMatrix::<f64>::identity(d, d);
    let blocks = (0..x.len() / d)
        .map(|i| {
            let err = spec.goals.rows(i * d, d) - x.rows(i * d, d);
            let r = err.norm();
            if !spec.is_active(r) {
                // branch value as written for the inactive regulator
                return -&eye;
            }
            if r < 1e-8 {
                // limit of the expression below as r -> 0
                return -&eye;
            }
            let th = (r / k).tanh();
            let sech2 = 1.0 - th * th;
            let outer = &err * err.transpose() / (r * r);
            let radial = k * th / r;
            // derivative w.r.t. the goal error; x enters with a minus sign
            -(outer.clone() * sech2 + (&eye - outer) * radial)
        })
        .collect();
    BlockDiagonal { blocks }
}

/// Validates dimensions shared by the graph, the goal spec and a state.
pub(crate) fn check_model(
    x: &DVector<f64>,
    graph: &Graph,
    spec: &GoalSpec,
) -> Result<(), DynamicsError> {
    if x.len() != graph.ensemble_dim() {
        return Err(DynamicsError::StateLength {
            expected: graph.ensemble_dim(),
            got: x.len(),
        });
    }
    if spec.state_dim != graph.state_dim() {
        return Err(DynamicsError::StateLength {
            expected: graph.state_dim(),
            got: spec.state_dim,
        });
    }
    spec.check(x)
}

/// `h(x) − (L_in(w) ⊗ I_d) x` with `w` the policy's edge weights at `x`.
pub fn drift(
    x: &DVector<f64>,
    policy: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
) -> Result<DVector<f64>, DynamicsError> {
    check_model(x, graph, spec)?;
    Ok(drift_unchecked(x, policy, graph, spec))
}

pub(crate) fn drift_unchecked(
    x: &DVector<f64>,
    policy: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
) -> DVector<f64> {
    let d = graph.state_dim();
    let mut out = goal_control_unchecked(x, spec);
    for e in graph.edges() {
        let (hi, ti) = (e.head * d, e.tail * d);
        let mut sq = 0.0;
        for c in 0..d {
            let z = x[hi + c] - x[ti + c];
            sq += z * z;
        }
        let w = policy.weight_unchecked(sq.sqrt());
        if w == 0.0 {
            continue;
        }
        for c in 0..d {
            out[hi + c] -= w * (x[hi + c] - x[ti + c]);
        }
    }
    out
}

/// One classical Runge–Kutta step of `ẏ = f(t, y)`.
pub fn rk4_step<F>(f: &mut F, t: f64, y: &DVector<f64>, dt: f64) -> DVector<f64>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let half = 0.5 * dt;
    let k1 = f(t, y);
    let k2 = f(t + half, &(y + &k1 * half));
    let k3 = f(t + half, &(y + &k2 * half));
    let k4 = f(t + dt, &(y + &k3 * dt));
    y + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

/// Integrates the drift with fixed-step RK4 from `x0` at `horizon.t0`.
pub fn simulate(
    x0: &DVector<f64>,
    policy: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
    horizon: Horizon,
) -> Result<Trajectory, DynamicsError> {
    check_model(x0, graph, spec)?;
    let steps = horizon.steps()?;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    let mut f = |_t: f64, y: &DVector<f64>| drift_unchecked(y, policy, graph, spec);
    for n in 0..steps {
        let next = rk4_step(&mut f, horizon.time(n), &states[n], horizon.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Blowup {
                time: horizon.time(n + 1),
                step: n + 1,
            });
        }
        states.push(next);
    }
    Trajectory::new(horizon, states)
}

/// Equivalent algebraic forms of the drift, kept separate from the hot path.
pub mod forms {
    use super::*;

    /// Per-node sum `ẋ_i = h_i + Σ_{k=(j,i)} w_k (x_j − x_i)`.
    pub fn node_sum(
        x: &DVector<f64>,
        policy: &PolicyGrid,
        graph: &Graph,
        spec: &GoalSpec,
    ) -> Result<DVector<f64>, DynamicsError> {
        check_model(x, graph, spec)?;
        let d = graph.state_dim();
        let w = policy.edge_weights(x, graph)?;
        let h = goal_control_unchecked(x, spec);
        let mut out = DVector::zeros(x.len());
        for i in 0..graph.num_nodes() {
            let mut acc = h.rows(i * d, d).into_owned();
            for (k, e) in graph.edges().iter().enumerate() {
                if e.head == i {
                    acc += (x.rows(e.tail * d, d) - x.rows(i * d, d)) * w[k];
                }
            }
            out.rows_mut(i * d, d).copy_from(&acc);
        }
        Ok(out)
    }

    /// Dense Laplacian form `h − (L_in(w) ⊗ I_d) x` with the Kronecker product built.
    pub fn laplacian(
        x: &DVector<f64>,
        policy: &PolicyGrid,
        graph: &Graph,
        spec: &GoalSpec,
    ) -> Result<DVector<f64>, DynamicsError> {
        check_model(x, graph, spec)?;
        let d = graph.state_dim();
        let w = DVector::from_vec(policy.edge_weights(x, graph)?);
        let l = graph.in_laplacian(&w)?;
        let kron = l.kronecker(&DMatrix::<f64>::identity(d, d));
        Ok(goal_control_unchecked(x, spec) - kron * x)
    }

    /// Hadamard-interchanged form
    /// `h − (D_in ⊗ I_d) [diag((D ⊗ I_d)ᵀ x) (w ⊗ 𝟙_d)]`.
    pub fn hadamard(
        x: &DVector<f64>,
        policy: &PolicyGrid,
        graph: &Graph,
        spec: &GoalSpec,
    ) -> Result<DVector<f64>, DynamicsError> {
        check_model(x, graph, spec)?;
        let d = graph.state_dim();
        let inc = graph.incidence();
        let eye = DMatrix::<f64>::identity(d, d);
        let d_blk = inc.signed.kronecker(&eye);
        let d_in_blk = inc.d_in.kronecker(&eye);
        let w = policy.edge_weights(x, graph)?;
        let ones = DVector::from_element(d, 1.0);
        let w_blk = DVector::from_vec(w).kronecker(&ones);
        let edge_diffs = d_blk.tr_mul(x);
        let scaled = edge_diffs.component_mul(&w_blk);
        Ok(goal_control_unchecked(x, spec) - d_in_blk * scaled)
    }

    /// Scalar-state form `h − D_in diag(Dᵀ x) w`; only defined for `d = 1`.
    pub fn scalar_states(
        x: &DVector<f64>,
        policy: &PolicyGrid,
        graph: &Graph,
        spec: &GoalSpec,
    ) -> Result<DVector<f64>, DynamicsError> {
        check_model(x, graph, spec)?;
        if graph.state_dim() != 1 {
            return Err(DynamicsError::StateLength {
                expected: 1,
                got: graph.state_dim(),
            });
        }
        let inc = graph.incidence();
        let w = DVector::from_vec(policy.edge_weights(x, graph)?);
        let diag = DMatrix::from_diagonal(&inc.signed.tr_mul(x));
        Ok(goal_control_unchecked(x, spec) - inc.d_in * diag * w)
    }
}
