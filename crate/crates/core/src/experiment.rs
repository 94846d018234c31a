//! Config-driven experiment pipeline: generate a demonstration, learn a
//! policy from it, and compare the result against the ground truth.
//!
//! Every stage reads and writes plain files in one output directory:
//!
//! | stage   | writes |
//! |---------|--------|
//! | `demo`  | `demo_trajectory.csv`, `true_weights.csv`, `config.resolved.json` |
//! | `learn` | `report.json`, `learned_policy.csv`, `learned_weights.csv`, `costate.csv`, `cost_history.csv` |
//! | `eval`  | `metrics.json`, `compare_policy.csv`, `compare_weights.csv`, `compare_trajectory.csv` |

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::case_study as cs;
use crate::dynamics::{simulate, DynamicsError, GoalSpec, Horizon, Trajectory};
use crate::graph::Graph;
use crate::io::{self, IoError, Table};
use crate::ioc::{learn, IocError, IocProblem, SolveReport, SolverSettings, Termination};
use crate::policy::{edge_distances, PolicyError, PolicyGrid, SGrid};

pub const DEMO_TRAJECTORY: &str = "demo_trajectory.csv";
pub const TRUE_WEIGHTS: &str = "true_weights.csv";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const REPORT: &str = "report.json";
pub const LEARNED_POLICY: &str = "learned_policy.csv";
pub const LEARNED_WEIGHTS: &str = "learned_weights.csv";
pub const COSTATE: &str = "costate.csv";
pub const COST_HISTORY: &str = "cost_history.csv";
pub const METRICS: &str = "metrics.json";
pub const COMPARE_POLICY: &str = "compare_policy.csv";
pub const COMPARE_WEIGHTS: &str = "compare_weights.csv";
pub const COMPARE_TRAJECTORY: &str = "compare_trajectory.csv";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(#[from] IoError),
}

impl ExperimentError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Config(e.to_string())
}

impl From<DynamicsError> for ExperimentError {
    fn from(e: DynamicsError) -> Self {
        match e {
            DynamicsError::Blowup { .. } => Self::Numeric(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<IocError> for ExperimentError {
    fn from(e: IocError) -> Self {
        match e {
            IocError::Dynamics(d) => d.into(),
            IocError::LineSearch { .. } => Self::Numeric(e.to_string()),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<PolicyError> for ExperimentError {
    fn from(e: PolicyError) -> Self {
        Self::Config(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub num_nodes: usize,
    pub state_dim: usize,
    /// One-based `[j, i]` pairs: agent `j` influences agent `i`.
    pub edges: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub t0: f64,
    pub tf: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub delta: f64,
    #[serde(rename = "Delta")]
    pub upper: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Regulator on everywhere.
    Always,
    /// Regulator on while `‖x̃_i‖³ < epsilon`.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalConfig {
    pub gain: f64,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Positions {
    Random {
        #[serde(default)]
        seed: Option<u64>,
        low: f64,
        high: f64,
    },
    /// One `[x_1, …, x_d]` row per agent.
    Explicit {
        initial: Vec<Vec<f64>>,
        goals: Vec<Vec<f64>>,
        /// Seed the positions were drawn from, when they were.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

/// The whole experiment as one JSON document. Missing sections fall back to
/// the eight-agent case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub horizon: HorizonConfig,
    pub s_grid: GridConfig,
    pub separation: f64,
    pub goal: GoalConfig,
    /// `quadratic_3(s-d)^2`, `linear_3(s-d)`, `constant:<c>` or a CSV path.
    pub true_policy: String,
    pub nominal_policy: String,
    pub positions: Positions,
    pub solver: SolverSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            graph: GraphConfig {
                num_nodes: cs::NUM_AGENTS,
                state_dim: cs::STATE_DIM,
                edges: cs::EDGES.iter().map(|&(j, i)| [j, i]).collect(),
            },
            horizon: HorizonConfig {
                t0: cs::T0,
                tf: cs::TF,
                dt: cs::DT,
            },
            s_grid: GridConfig {
                delta: cs::S_MIN,
                upper: cs::S_MAX,
                points: cs::GRID_POINTS,
            },
            separation: cs::SEPARATION,
            goal: GoalConfig {
                gain: cs::GAIN,
                activation: Activation::Always,
                epsilon: None,
            },
            true_policy: "quadratic_3(s-d)^2".into(),
            nominal_policy: "linear_3(s-d)".into(),
            positions: Positions::Random {
                seed: Some(cs::DEFAULT_SEED),
                low: cs::POSITION_RANGE.0,
                high: cs::POSITION_RANGE.1,
            },
            solver: SolverSettings::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| IoError::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Replaces the seed of random positions.
    pub fn with_seed(mut self, seed: u64) -> Result<Self, ExperimentError> {
        match &mut self.positions {
            Positions::Random { seed: s, .. } => *s = Some(seed),
            Positions::Explicit { .. } => {
                return Err(config_err("a seed was given but positions are explicit"))
            }
        }
        Ok(self)
    }
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub graph: Graph,
    pub grid: SGrid,
    pub horizon: Horizon,
    pub goal: GoalSpec,
    pub initial: DVector<f64>,
    pub true_policy: PolicyGrid,
    pub nominal: PolicyGrid,
    pub solver: SolverSettings,
    /// The config with random positions expanded.
    pub resolved: ExperimentConfig,
}

impl Experiment {
    /// Validates `cfg`; relative policy CSV paths are taken from `base_dir`.
    pub fn new(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self, ExperimentError> {
        let g = &cfg.graph;
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|&[j, i]| (j, i)).collect();
        let graph = Graph::from_one_based(g.num_nodes, &edges, g.state_dim).map_err(config_err)?;
        let h = cfg.horizon;
        let horizon = Horizon::new(h.t0, h.tf, h.dt).map_err(config_err)?;
        horizon.steps().map_err(config_err)?;
        let grid = SGrid::new(cfg.s_grid.delta, cfg.s_grid.upper, cfg.s_grid.points)
            .map_err(config_err)?;
        if !cfg.separation.is_finite() {
            return Err(config_err("separation must be finite"));
        }

        let n = graph.ensemble_dim();
        let (initial, goals, positions) = match &cfg.positions {
            Positions::Random { seed, low, high } => {
                let seed = seed.ok_or_else(|| config_err("random positions need a seed"))?;
                if !(low < high) || !low.is_finite() || !high.is_finite() {
                    return Err(config_err(format!(
                        "position range [{low}, {high}) is empty"
                    )));
                }
                let (x0, xg) =
                    cs::random_positions(g.num_nodes, g.state_dim, (*low, *high), seed);
                let rows = |v: &DVector<f64>| {
                    v.as_slice()
                        .chunks(g.state_dim)
                        .map(<[f64]>::to_vec)
                        .collect()
                };
                let explicit = Positions::Explicit {
                    initial: rows(&x0),
                    goals: rows(&xg),
                    seed: Some(seed),
                };
                (x0, xg, explicit)
            }
            Positions::Explicit { initial, goals, .. } => {
                let flat = |name: &str, rows: &[Vec<f64>]| {
                    if rows.len() != g.num_nodes || rows.iter().any(|r| r.len() != g.state_dim) {
                        return Err(config_err(format!(
                            "{name} positions must be {} rows of {} coordinates",
                            g.num_nodes, g.state_dim
                        )));
                    }
                    let v: Vec<f64> = rows.concat();
                    if v.iter().any(|c| !c.is_finite()) {
                        return Err(config_err(format!("{name} positions must be finite")));
                    }
                    Ok(DVector::from_vec(v))
                };
                let x0 = flat("initial", initial)?;
                let xg = flat("goal", goals)?;
                (x0, xg, cfg.positions.clone())
            }
        };
        debug_assert_eq!(initial.len(), n);

        let epsilon = match cfg.goal.activation {
            Activation::Always => f64::INFINITY,
            Activation::Threshold => cfg
                .goal
                .epsilon
                .ok_or_else(|| config_err("threshold activation needs an epsilon"))?,
        };
        let goal = GoalSpec::new(goals, g.state_dim, cfg.goal.gain, epsilon).map_err(config_err)?;

        let true_policy = parse_policy(&cfg.true_policy, grid, cfg.separation, base_dir)?;
        let nominal = parse_policy(&cfg.nominal_policy, grid, cfg.separation, base_dir)?;

        let s = &cfg.solver;
        let a = &s.armijo;
        if !(s.grad_tol >= 0.0)
            || !(a.initial_step > 0.0)
            || !(a.shrink > 0.0 && a.shrink < 1.0)
            || !(a.sufficient_decrease > 0.0 && a.sufficient_decrease < 1.0)
        {
            return Err(config_err(
                "solver needs grad_tol >= 0, initial_step > 0, shrink and sufficient_decrease in (0, 1)",
            ));
        }

        let mut resolved = cfg.clone();
        resolved.positions = positions;
        resolved.output_dir = None;
        Ok(Self {
            graph,
            grid,
            horizon,
            goal,
            initial,
            true_policy,
            nominal,
            solver: cfg.solver,
            resolved,
        })
    }

    pub fn generate_demo(&self) -> Result<Trajectory, ExperimentError> {
        Ok(simulate(
            &self.initial,
            &self.true_policy,
            &self.graph,
            &self.goal,
            self.horizon,
        )?)
    }

    pub fn problem(&self, demo: Trajectory) -> Result<IocProblem, ExperimentError> {
        Ok(IocProblem::new(
            self.graph.clone(),
            demo,
            self.goal.clone(),
            self.nominal.clone(),
        )?)
    }

    fn write_states(&self, path: &Path, traj: &Trajectory) -> Result<(), IoError> {
        io::write_trajectory(path, traj, self.graph.num_nodes(), self.graph.state_dim())
    }

    /// Writes the demonstration, its edge weights and the resolved config.
    pub fn run_demo(&self, out: &Path) -> Result<Trajectory, ExperimentError> {
        create_dir(out)?;
        let demo = self.generate_demo()?;
        self.write_states(&out.join(DEMO_TRAJECTORY), &demo)?;
        io::weight_table(&self.true_policy, &demo, &self.graph)?.write(&out.join(TRUE_WEIGHTS))?;
        io::write_json(&out.join(RESOLVED_CONFIG), &self.resolved)?;
        log::info!("demo: {} samples written to {}", demo.len(), out.display());
        Ok(demo)
    }

    pub fn load_demo(&self, out: &Path) -> Result<Trajectory, ExperimentError> {
        let demo = io::read_trajectory_on(&out.join(DEMO_TRAJECTORY), self.horizon)?;
        if demo.dim() != self.graph.ensemble_dim() {
            return Err(config_err(format!(
                "demonstration has {} coordinates, config needs {}",
                demo.dim(),
                self.graph.ensemble_dim()
            )));
        }
        Ok(demo)
    }

    /// Fits a policy to the stored demonstration, starting from the nominal.
    pub fn run_learn(&self, out: &Path) -> Result<SolveReport, ExperimentError> {
        let demo = self.load_demo(out)?;
        let prob = self.problem(demo)?;
        let report = learn(&prob, &self.nominal, &self.solver)?;
        log::info!(
            "learn: {:?} after {} iterations, J = {:.6e}",
            report.termination,
            report.iterations,
            report.final_cost()
        );

        io::write_policy(&out.join(LEARNED_POLICY), &report.learned)?;
        io::weight_table(&report.learned, &report.trajectory, &self.graph)?
            .write(&out.join(LEARNED_WEIGHTS))?;
        io::write_states(
            &out.join(COSTATE),
            "l",
            self.horizon,
            &report.costate.lambdas,
            self.graph.num_nodes(),
            self.graph.state_dim(),
        )?;
        let mut history = Table::new(
            ["iteration", "cost", "grad_norm", "step"]
                .map(String::from)
                .to_vec(),
        );
        for (it, (cost, grad)) in report
            .cost_history
            .iter()
            .zip(&report.grad_norm_history)
            .enumerate()
        {
            let step = if it == 0 { 0.0 } else { report.step_history[it - 1] };
            history.rows.push(vec![it as f64, *cost, *grad, step]);
        }
        history.write(&out.join(COST_HISTORY))?;
        io::write_json(&out.join(REPORT), &ReportSummary::from(&report))?;
        Ok(report)
    }

    /// Compares a learned policy with the truth on the stored demonstration.
    pub fn run_eval(&self, out: &Path) -> Result<Metrics, ExperimentError> {
        let demo = self.load_demo(out)?;
        let learned = io::read_policy(&out.join(LEARNED_POLICY))?;
        if learned.grid() != &self.grid {
            return Err(config_err(
                "learned policy grid does not match the configured s-grid",
            ));
        }
        let prob = self.problem(demo)?;
        let (metrics, tables) = evaluate(&prob, &learned, &self.true_policy)?;
        tables.policy.write(&out.join(COMPARE_POLICY))?;
        tables.weights.write(&out.join(COMPARE_WEIGHTS))?;
        tables.trajectory.write(&out.join(COMPARE_TRAJECTORY))?;
        io::write_json(&out.join(METRICS), &metrics)?;
        log::info!(
            "eval: traj_mse = {:.3e}, weight_mse = {:.3e}, policy_rmse_visited = {:.3e}",
            metrics.traj_mse,
            metrics.weight_mse,
            metrics.policy_rmse_visited
        );
        Ok(metrics)
    }

    pub fn run_all(&self, out: &Path) -> Result<(SolveReport, Metrics), ExperimentError> {
        self.run_demo(out)?;
        let report = self.run_learn(out)?;
        let metrics = self.run_eval(out)?;
        Ok((report, metrics))
    }
}

fn create_dir(out: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(out).map_err(|source| {
        IoError::File {
            path: out.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Resolves a policy spec on `grid`.
pub fn parse_policy(
    spec: &str,
    grid: SGrid,
    separation: f64,
    base_dir: &Path,
) -> Result<PolicyGrid, ExperimentError> {
    let spec = spec.trim();
    let policy = match spec {
        "quadratic_3(s-d)^2" => cs::quadratic_policy(grid, separation)?,
        "linear_3(s-d)" => cs::linear_policy(grid, separation)?,
        _ => {
            if let Some(c) = spec.strip_prefix("constant:") {
                let c: f64 = c
                    .trim()
                    .parse()
                    .map_err(|_| config_err(format!("bad constant policy '{spec}'")))?;
                PolicyGrid::constant(grid, c)?
            } else if spec.ends_with(".csv") {
                let path = base_dir.join(spec);
                let p = io::read_policy(&path)?;
                if p.grid() != &grid {
                    return Err(config_err(format!(
                        "{}: policy grid does not match the configured s-grid",
                        path.display()
                    )));
                }
                p
            } else {
                return Err(config_err(format!("unknown policy '{spec}'")));
            }
        }
    };
    Ok(policy)
}

/// Scalars of a [`SolveReport`]; the arrays go to CSV sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub termination: Termination,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    pub cost_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub step_history: Vec<f64>,
    pub learned_policy: String,
    pub learned_weights: String,
    pub costate: String,
}

impl From<&SolveReport> for ReportSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            termination: r.termination,
            iterations: r.iterations,
            initial_cost: r.cost_history[0],
            final_cost: r.final_cost(),
            final_grad_norm: r.final_grad_norm(),
            cost_history: r.cost_history.clone(),
            grad_norm_history: r.grad_norm_history.clone(),
            step_history: r.step_history.clone(),
            learned_policy: LEARNED_POLICY.into(),
            learned_weights: LEARNED_WEIGHTS.into(),
            costate: COSTATE.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean over samples and coordinates of `(x − x̂)²`.
    pub traj_mse: f64,
    /// Mean over samples and edges of `(w − ŵ)²`, each weight taken along
    /// its own trajectory.
    pub weight_mse: f64,
    /// RMS of `u − û` over the grid nodes inside the visited range.
    pub policy_rmse_visited: f64,
    pub final_cost: f64,
    /// Smallest and largest edge length along the demonstration.
    pub visited_min: f64,
    pub visited_max: f64,
    pub visited_nodes: usize,
    /// `max |û|` over the visited nodes.
    pub true_policy_max_visited: f64,
}

/// Aligned comparison tables written by [`Experiment::run_eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub policy: Table,
    pub weights: Table,
    pub trajectory: Table,
}

/// `[min, max]` of all edge lengths over the samples of `traj`.
pub fn visited_range(traj: &Trajectory, graph: &Graph) -> Option<(f64, f64)> {
    let mut range: Option<(f64, f64)> = None;
    for x in traj.states() {
        for a in edge_distances(x, graph).expect("dimensions checked by the problem") {
            range = Some(match range {
                None => (a, a),
                Some((lo, hi)) => (lo.min(a), hi.max(a)),
            });
        }
    }
    range
}

/// Metrics and comparison tables of `learned` against `truth` on `prob`.
pub fn evaluate(
    prob: &IocProblem,
    learned: &PolicyGrid,
    truth: &PolicyGrid,
) -> Result<(Metrics, Comparison), ExperimentError> {
    let graph = prob.graph();
    let demo = prob.demo();
    let horizon = demo.horizon();
    let (final_cost, fwd) = prob.evaluate(learned)?;
    let final_cost = final_cost.max(0.0);

    let mut trajectory = Table::new(
        io::state_header("x", graph.num_nodes(), graph.state_dim())
            .into_iter()
            .chain(io::state_header("xhat", graph.num_nodes(), graph.state_dim()).into_iter().skip(1))
            .collect(),
    );
    let mut sq = 0.0;
    let mut count = 0usize;
    for (n, (x, xh)) in fwd.states().iter().zip(demo.states()).enumerate() {
        sq += (x - xh).norm_squared();
        count += x.len();
        let mut row = vec![horizon.time(n)];
        row.extend(x.iter());
        row.extend(xh.iter());
        trajectory.rows.push(row);
    }
    let traj_mse = if count == 0 { 0.0 } else { sq / count as f64 };

    let mut header = vec!["t".to_string()];
    for (j, i) in graph.one_based_edges() {
        header.push(format!("w{j}_{i}"));
        header.push(format!("what{j}_{i}"));
    }
    let mut weights = Table::new(header);
    let mut sq = 0.0;
    let mut count = 0usize;
    for (n, (x, xh)) in fwd.states().iter().zip(demo.states()).enumerate() {
        let w = learned.edge_weights(x, graph)?;
        let wh = truth.edge_weights(xh, graph)?;
        let mut row = vec![horizon.time(n)];
        for (a, b) in w.iter().zip(&wh) {
            sq += (a - b).powi(2);
            count += 1;
            row.push(*a);
            row.push(*b);
        }
        weights.rows.push(row);
    }
    let weight_mse = if count == 0 { 0.0 } else { sq / count as f64 };

    let grid = prob.grid();
    let (visited_min, visited_max) = visited_range(demo, graph).unwrap_or((0.0, 0.0));
    let mut policy = Table::new(
        ["s", "u_learned", "u_true", "u_nominal", "visited"]
            .map(String::from)
            .to_vec(),
    );
    let mut sq = 0.0;
    let mut visited_nodes = 0usize;
    let mut true_policy_max_visited = 0.0f64;
    for q in 0..grid.len() {
        let s = grid.node(q);
        let (u, uh) = (learned.values()[q], truth.values()[q]);
        let visited = graph.num_edges() > 0 && s >= visited_min && s <= visited_max;
        if visited {
            sq += (u - uh).powi(2);
            visited_nodes += 1;
            true_policy_max_visited = true_policy_max_visited.max(uh.abs());
        }
        policy.rows.push(vec![
            s,
            u,
            uh,
            prob.nominal().values()[q],
            if visited { 1.0 } else { 0.0 },
        ]);
    }
    let policy_rmse_visited = if visited_nodes == 0 {
        0.0
    } else {
        (sq / visited_nodes as f64).sqrt()
    };

    Ok((
        Metrics {
            traj_mse,
            weight_mse,
            policy_rmse_visited,
            final_cost,
            visited_min,
            visited_max,
            visited_nodes,
            true_policy_max_visited,
        },
        Comparison {
            policy,
            weights,
            trajectory,
        },
    ))
}
