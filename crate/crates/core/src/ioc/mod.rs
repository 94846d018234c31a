//! Inverse optimal control: recover the interaction policy `u(s)` that makes
//! the simulated ensemble reproduce a demonstration.
//!
//! The objective is
//!
//! ```text
//! J(u) = ∫ ½‖x(τ) − x̂(τ)‖² dτ + ½ ∫ (u(s) − u_o(s))² ds + ½‖x(t_f) − x̂(t_f)‖²
//! ```
//!
//! which is the double integral over time and distance with the running
//! term normalized by `Δ − δ` and the regularizer by `t_f − t_0`; each term
//! is constant in one of the two variables and collapses to a single
//! integral. Both integrals use the trapezoid rule on their grids.
//!
//! Its gradient comes from a co-state `λ` propagated backward in time from
//! `λ(t_f) = −(x(t_f) − x̂(t_f))`. The co-state used by the solver is the
//! exact adjoint of the RK4 forward pass, so the gradient agrees with finite
//! differences of the discretized cost to rounding error.

mod costate;
mod solver;

pub use costate::{
    backward_pass, costate_rhs, dalpha_dx, integrate_costate, CostateTrajectory,
    DistanceJacobian, COINCIDENT_TOL,
};
pub use solver::{
    armijo_step, gradient_ju, hessian_check, learn, ArmijoParams, ArmijoStep, SolveReport,
    SolverSettings, Termination,
};

use thiserror::Error;

use crate::dynamics::{simulate, DynamicsError, GoalSpec, Trajectory};
use crate::graph::Graph;
use crate::policy::{PolicyError, PolicyGrid, SGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IocError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("inconsistent problem: {0}")]
    Mismatch(String),
    #[error("line search found no acceptable step after {tries} trials")]
    LineSearch { tries: usize },
}

/// A demonstration together with everything needed to fit a policy to it.
#[derive(Debug, Clone)]
pub struct IocProblem {
    graph: Graph,
    demo: Trajectory,
    goal: GoalSpec,
    nominal: PolicyGrid,
}

impl IocProblem {
    pub fn new(
        graph: Graph,
        demo: Trajectory,
        goal: GoalSpec,
        nominal: PolicyGrid,
    ) -> Result<Self, IocError> {
        if demo.dim() != graph.ensemble_dim() {
            return Err(IocError::Mismatch(format!(
                "demonstration has {} coordinates, graph needs {}",
                demo.dim(),
                graph.ensemble_dim()
            )));
        }
        if goal.goals().len() != graph.ensemble_dim() || goal.state_dim() != graph.state_dim() {
            return Err(IocError::Mismatch(
                "goal positions do not match the graph".into(),
            ));
        }
        Ok(Self {
            graph,
            demo,
            goal,
            nominal,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn demo(&self) -> &Trajectory {
        &self.demo
    }

    pub fn goal(&self) -> &GoalSpec {
        &self.goal
    }

    pub fn nominal(&self) -> &PolicyGrid {
        &self.nominal
    }

    pub fn grid(&self) -> &SGrid {
        self.nominal.grid()
    }

    fn check_policy(&self, p: &PolicyGrid) -> Result<(), IocError> {
        if p.grid() != self.grid() {
            return Err(PolicyError::GridMismatch.into());
        }
        Ok(())
    }

    /// Forward pass from the demonstration's initial state.
    pub fn simulate(&self, p: &PolicyGrid) -> Result<Trajectory, IocError> {
        self.check_policy(p)?;
        Ok(simulate(
            self.demo.initial(),
            p,
            &self.graph,
            &self.goal,
            self.demo.horizon(),
        )?)
    }

    /// Cost of `p` given its forward trajectory.
    pub fn cost_of(&self, p: &PolicyGrid, fwd: &Trajectory) -> Result<f64, IocError> {
        self.check_policy(p)?;
        if fwd.horizon() != self.demo.horizon() {
            return Err(IocError::Mismatch(
                "forward trajectory and demonstration use different time grids".into(),
            ));
        }
        let dt = self.demo.horizon().dt;
        let last = fwd.len() - 1;
        let mut running = 0.0;
        for (n, (x, xh)) in fwd.states().iter().zip(self.demo.states()).enumerate() {
            let w = if n == 0 || n == last { 0.5 * dt } else { dt };
            running += w * 0.5 * (x - xh).norm_squared();
        }
        if last == 0 {
            running = 0.0;
        }
        let diff = p.difference(&self.nominal)?;
        let regularizer = 0.5 * self.grid().inner(&diff, &diff);
        let terminal = 0.5 * (fwd.last() - self.demo.last()).norm_squared();
        Ok(running + regularizer + terminal)
    }

    /// Simulates `p` and returns its cost with the forward trajectory.
    pub fn evaluate(&self, p: &PolicyGrid) -> Result<(f64, Trajectory), IocError> {
        let fwd = self.simulate(p)?;
        let j = self.cost_of(p, &fwd)?;
        Ok((j, fwd))
    }
}

/// `J(p)`; see the module docs for the exact discretization.
pub fn total_cost(prob: &IocProblem, p: &PolicyGrid) -> Result<f64, IocError> {
    prob.evaluate(p).map(|(j, _)| j)
}
