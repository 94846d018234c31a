#![allow(dead_code)]

use consensus_ioc::dynamics::{simulate, GoalSpec, Horizon};
use consensus_ioc::graph::Graph;
use consensus_ioc::ioc::IocProblem;
use consensus_ioc::policy::{PolicyGrid, SGrid};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub prob: IocProblem,
    pub truth: PolicyGrid,
    /// A policy away from both the truth and the nominal.
    pub current: PolicyGrid,
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Graph {
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    loop {
        let chosen: Vec<_> = pairs.iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        if !chosen.is_empty() {
            return Graph::new(n, &chosen, d).unwrap();
        }
    }
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(lo..hi))
}

/// `N ∈ {2, 3}`, `d ∈ {1, 2}`, `t_f ≤ 2`, `M ≤ 64`, positions spread so the
/// edge lengths cross the grid.
pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let n = rng.gen_range(2..=3);
    let d = rng.gen_range(1..=2);
    let graph = random_graph(rng, n, d);
    let grid = SGrid::new(
        rng.gen_range(0.05..0.3),
        rng.gen_range(1.5..3.0),
        rng.gen_range(8..=64),
    )
    .unwrap();
    let tf = [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)];
    let horizon = Horizon::new(0.0, tf, 0.02).unwrap();
    let x0 = random_vec(rng, n * d, -1.2, 1.2);
    let goals = random_vec(rng, n * d, -1.2, 1.2);
    let spec = GoalSpec::always_active(goals, d, rng.gen_range(0.5..2.0)).unwrap();

    let (a, c) = (rng.gen_range(0.5..3.0), rng.gen_range(0.2..0.6));
    let truth = PolicyGrid::from_fn(grid, |s| a * (s - c).powi(2)).unwrap();
    let b = rng.gen_range(0.5..3.0);
    let nominal = PolicyGrid::from_fn(grid, |s| b * (s - c)).unwrap();
    let current =
        PolicyGrid::from_fn(grid, |s| 0.5 * (a * (s - c).powi(2) + b * (s - c)) + rng.gen_range(-0.3..0.3))
            .unwrap();

    let demo = simulate(&x0, &truth, &graph, &spec, horizon).unwrap();
    let prob = IocProblem::new(graph, demo, spec, nominal).unwrap();
    Instance {
        prob,
        truth,
        current,
    }
}

/// Random direction on the grid with unit trapezoid norm.
pub fn random_direction(rng: &mut ChaCha8Rng, grid: &SGrid) -> Vec<f64> {
    let v: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = grid.norm(&v);
    v.into_iter().map(|x| x / norm).collect()
}
