//! The eight-agent formation example used to exercise the solver.
//!
//! Agents start and end at random points of `[-2, 2]²`, interact over a
//! fixed directed edge set, and follow the quadratic policy
//! `û(s) = 3(s − d)²`; the solver starts from the straight line
//! `u_o(s) = 3(s − d)`. Here `d = 0.3` is the preferred spacing between
//! neighbours.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{simulate, DynamicsError, GoalSpec, Horizon, Trajectory};
use crate::graph::Graph;
use crate::ioc::{IocError, IocProblem};
use crate::policy::{PolicyError, PolicyGrid, SGrid};

/// One-based `(j, i)` pairs of the example graph.
pub const EDGES: [(usize, usize); 7] = [(1, 3), (2, 5), (3, 8), (4, 5), (4, 6), (6, 7), (7, 8)];
pub const NUM_AGENTS: usize = 8;
pub const STATE_DIM: usize = 2;
pub const SEPARATION: f64 = 0.3;
pub const S_MIN: f64 = 0.15;
pub const S_MAX: f64 = 3.02;
pub const GRID_POINTS: usize = 256;
pub const GAIN: f64 = 1.0;
pub const T0: f64 = 0.0;
pub const TF: f64 = 10.0;
pub const DT: f64 = 0.01;
pub const POSITION_RANGE: (f64, f64) = (-2.0, 2.0);
pub const DEFAULT_SEED: u64 = 2024;

/// `3(s − d)²`.
pub fn quadratic_policy(grid: SGrid, separation: f64) -> Result<PolicyGrid, PolicyError> {
    PolicyGrid::from_fn(grid, |s| 3.0 * (s - separation).powi(2))
}

/// `3(s − d)`.
pub fn linear_policy(grid: SGrid, separation: f64) -> Result<PolicyGrid, PolicyError> {
    PolicyGrid::from_fn(grid, |s| 3.0 * (s - separation))
}

/// Initial and goal positions drawn uniformly from `[low, high)` per
/// coordinate: all initial coordinates first, then all goal coordinates.
pub fn random_positions(
    num_agents: usize,
    state_dim: usize,
    (low, high): (f64, f64),
    seed: u64,
) -> (DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_agents * state_dim;
    let initial = DVector::from_fn(n, |_, _| rng.gen_range(low..high));
    let goals = DVector::from_fn(n, |_, _| rng.gen_range(low..high));
    (initial, goals)
}

#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub graph: Graph,
    pub grid: SGrid,
    pub goal: GoalSpec,
    pub initial: DVector<f64>,
    pub horizon: Horizon,
    pub true_policy: PolicyGrid,
    pub nominal: PolicyGrid,
}

impl CaseStudy {
    /// Default parameters with positions drawn from `seed`.
    pub fn with_seed(seed: u64) -> Self {
        let (initial, goals) = random_positions(NUM_AGENTS, STATE_DIM, POSITION_RANGE, seed);
        let graph = Graph::from_one_based(NUM_AGENTS, &EDGES, STATE_DIM).expect("valid edge set");
        let grid = SGrid::new(S_MIN, S_MAX, GRID_POINTS).expect("valid grid");
        Self {
            graph,
            grid,
            goal: GoalSpec::always_active(goals, STATE_DIM, GAIN).expect("valid goal spec"),
            initial,
            horizon: Horizon::new(T0, TF, DT).expect("valid horizon"),
            true_policy: quadratic_policy(grid, SEPARATION).expect("finite policy"),
            nominal: linear_policy(grid, SEPARATION).expect("finite policy"),
        }
    }

    /// Same experiment with the step and grid spacing halved.
    pub fn refined(&self) -> Result<Self, PolicyError> {
        let grid = SGrid::new(
            self.grid.lower(),
            self.grid.upper(),
            2 * self.grid.len() - 1,
        )?;
        let resample = |p: &PolicyGrid| PolicyGrid::from_fn(grid, |s| p.eval(s));
        Ok(Self {
            graph: self.graph.clone(),
            grid,
            goal: self.goal.clone(),
            initial: self.initial.clone(),
            horizon: self.horizon.refined(),
            true_policy: resample(&self.true_policy)?,
            nominal: resample(&self.nominal)?,
        })
    }

    /// The demonstration: the ensemble driven by the true policy.
    pub fn generate_demo(&self) -> Result<Trajectory, DynamicsError> {
        generate_demo(&self.initial, &self.true_policy, &self.graph, &self.goal, self.horizon)
    }

    pub fn problem(&self, demo: Trajectory) -> Result<IocProblem, IocError> {
        IocProblem::new(
            self.graph.clone(),
            demo,
            self.goal.clone(),
            self.nominal.clone(),
        )
    }
}

impl Default for CaseStudy {
    fn default() -> Self {
        Self::with_seed(DEFAULT_SEED)
    }
}

/// Records the ensemble under `true_policy`; this is the ground truth the
/// solver fits.
pub fn generate_demo(
    initial: &DVector<f64>,
    true_policy: &PolicyGrid,
    graph: &Graph,
    goal: &GoalSpec,
    horizon: Horizon,
) -> Result<Trajectory, DynamicsError> {
    simulate(initial, true_policy, graph, goal, horizon)
}
