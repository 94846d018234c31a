use serde::{Deserialize, Serialize};

use super::costate::{backward_pass, step_adjoint, time_weight, CostateTrajectory};
use super::{IocError, IocProblem};
use crate::dynamics::Trajectory;
use crate::policy::PolicyGrid;

/// Backtracking parameters: trial steps `initial_step · shrink^n` for
/// `n = 0..=max_backtracks`, accepted when
/// `J(u − ℓ g) <= J(u) − sufficient_decrease · ℓ · ‖g‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArmijoParams {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub max_iter: usize,
    /// Stop once the grid-weighted L² norm of the gradient is at most this.
    pub grad_tol: f64,
    pub armijo: ArmijoParams,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
            armijo: ArmijoParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTol,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub learned: PolicyGrid,
    /// `J` at every iterate, starting with the initial policy.
    pub cost_history: Vec<f64>,
    /// Gradient norm at every iterate.
    pub grad_norm_history: Vec<f64>,
    /// Accepted updates.
    pub iterations: usize,
    pub termination: Termination,
    pub step_history: Vec<f64>,
    /// Forward and co-state trajectories of the learned policy.
    pub trajectory: Trajectory,
    pub costate: CostateTrajectory,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_history.last().expect("cost history is never empty")
    }

    pub fn final_grad_norm(&self) -> f64 {
        *self
            .grad_norm_history
            .last()
            .expect("gradient history is never empty")
    }
}

/// Gradient of `J` at the grid nodes, in the trapezoid inner product:
///
/// ```text
/// g(s_q) = u(s_q) − u_o(s_q) + ∫ Σ_{k=(j,i)} λ_iᵀ (x_i − x_j) 𝟙[s_q < α_k] dτ
/// ```
///
/// The time integral is taken over the RK4 stages of the forward pass, with
/// the stage co-states of the discrete adjoint (see [`backward_pass`]), and
/// the indicator is read through the piecewise-linear policy: the two nodes
/// bracketing `α_k` get the fraction of their hat function below `α_k`.
/// With both, `⟨g, μ⟩` is the exact directional derivative of
/// [`total_cost`](super::total_cost) along any grid perturbation `μ`.
pub fn gradient_ju(
    prob: &IocProblem,
    p: &PolicyGrid,
    fwd: &Trajectory,
    cst: &CostateTrajectory,
) -> Result<Vec<f64>, IocError> {
    prob.check_policy(p)?;
    if fwd.len() != cst.len() || fwd.len() != prob.demo().len() {
        return Err(IocError::Mismatch(
            "state and co-state trajectories have different lengths".into(),
        ));
    }
    let (graph, spec, demo) = (prob.graph(), prob.goal(), prob.demo());
    let grid = prob.grid();
    let m = grid.len();
    let d = graph.state_dim();
    let dt = fwd.horizon().dt;
    let last = fwd.len() - 1;

    // `tail[q]` collects contributions that apply to every node below q,
    // summed from the top so nodes above every edge length stay exact; the
    // fractional nodes go straight into `direct`.
    let mut tail = vec![0.0; m + 1];
    let mut direct = vec![0.0; m];
    for n in 0..last {
        let residual = &fwd.states()[n + 1] - &demo.states()[n + 1];
        let adj = residual * time_weight(n + 1, last, dt) - &cst.lambdas[n + 1];
        let step = step_adjoint(&fwd.states()[n], &adj, dt, p, graph, spec);
        for (y, bar_k) in &step.stages {
            for e in graph.edges() {
                let (hi, ti) = (e.head * d, e.tail * d);
                let mut sq = 0.0;
                let mut c = 0.0;
                for r in 0..d {
                    let z = y[hi + r] - y[ti + r];
                    sq += z * z;
                    c -= bar_k[hi + r] * z;
                }
                let alpha = sq.sqrt();
                if c == 0.0 || alpha <= grid.lower() {
                    continue;
                }
                let (full, frac) = grid.indicator_fractions(alpha);
                tail[full.min(m)] += c;
                if full < m {
                    for (q, v) in frac {
                        direct[q] += c * v;
                    }
                }
            }
        }
    }
    let mut running = 0.0;
    let mut grad = p.difference(prob.nominal())?;
    for q in (0..m).rev() {
        running += tail[q + 1];
        grad[q] += running + direct[q];
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct ArmijoStep {
    pub step: f64,
    pub policy: PolicyGrid,
    pub cost: f64,
    pub trajectory: Option<Trajectory>,
}

/// Backtracking line search along `−grad`. A zero gradient returns the
/// policy unchanged with step 0. Trial steps whose simulation diverges count
/// as rejected.
pub fn armijo_step(
    prob: &IocProblem,
    p: &PolicyGrid,
    grad: &[f64],
    cost: f64,
    params: &ArmijoParams,
) -> Result<ArmijoStep, IocError> {
    let g2 = prob.grid().inner(grad, grad);
    if g2 == 0.0 {
        return Ok(ArmijoStep {
            step: 0.0,
            policy: p.clone(),
            cost,
            trajectory: None,
        });
    }
    let mut step = params.initial_step;
    for _ in 0..=params.max_backtracks {
        let trial = p.axpy(-step, grad)?;
        match prob.evaluate(&trial) {
            Ok((j, fwd)) if j <= cost - params.sufficient_decrease * step * g2 => {
                return Ok(ArmijoStep {
                    step,
                    policy: trial,
                    cost: j,
                    trajectory: Some(fwd),
                });
            }
            Ok(_) | Err(IocError::Dynamics(_)) => {}
            Err(e) => return Err(e),
        }
        step *= params.shrink;
    }
    Err(IocError::LineSearch {
        tries: params.max_backtracks + 1,
    })
}

/// Gradient descent with Armijo steps, starting from `u_init`.
///
/// A failed line search ends the run with [`Termination::LineSearchFail`]
/// and the last accepted policy; only a divergent simulation of `u_init`
/// itself is an error.
pub fn learn(
    prob: &IocProblem,
    u_init: &PolicyGrid,
    settings: &SolverSettings,
) -> Result<SolveReport, IocError> {
    let mut policy = u_init.clone();
    let (mut cost, mut fwd) = prob.evaluate(&policy)?;
    let mut cost_history = vec![cost];
    let mut grad_norm_history = Vec::new();
    let mut step_history = Vec::new();
    let mut iterations = 0;
    loop {
        let cst = backward_pass(prob, &policy, &fwd)?;
        let grad = gradient_ju(prob, &policy, &fwd, &cst)?;
        let gnorm = prob.grid().norm(&grad);
        grad_norm_history.push(gnorm);
        log::debug!("iter {iterations}: J = {cost:.6e}, |g| = {gnorm:.3e}");

        let done = if gnorm <= settings.grad_tol {
            Some(Termination::GradientTol)
        } else if iterations >= settings.max_iter {
            Some(Termination::MaxIter)
        } else {
            None
        };
        if let Some(termination) = done {
            return Ok(SolveReport {
                learned: policy,
                cost_history,
                grad_norm_history,
                iterations,
                termination,
                step_history,
                trajectory: fwd,
                costate: cst,
            });
        }

        match armijo_step(prob, &policy, &grad, cost, &settings.armijo) {
            Ok(accepted) => {
                policy = accepted.policy;
                cost = accepted.cost;
                fwd = accepted
                    .trajectory
                    .expect("a nonzero gradient always yields a trial trajectory");
                step_history.push(accepted.step);
                cost_history.push(cost);
                iterations += 1;
            }
            Err(IocError::LineSearch { .. }) => {
                return Ok(SolveReport {
                    learned: policy,
                    cost_history,
                    grad_norm_history,
                    iterations,
                    termination: Termination::LineSearchFail,
                    step_history,
                    trajectory: fwd,
                    costate: cst,
                });
            }
            Err(e) => return Err(e),
        }
    }
}

/// Smallest second derivative of the Hamiltonian density with respect to
/// `u(s)` over the grid.
///
/// The dynamics are linear in `u`, so only the regularizer
/// `½(u − u_o)²/(t_f − t_0)` curves; the value is `1/(t_f − t_0)` at every
/// node and for every policy.
pub fn hessian_check(prob: &IocProblem, p: &PolicyGrid) -> Result<f64, IocError> {
    prob.check_policy(p)?;
    let duration = prob.demo().horizon().duration();
    if duration <= 0.0 {
        return Err(IocError::Mismatch(
            "second-order check needs a positive horizon".into(),
        ));
    }
    Ok(1.0 / duration)
}
