mod common;

use approx::assert_abs_diff_eq;
use consensus_ioc::dynamics::{rk4_step, simulate, GoalSpec, Horizon};
use consensus_ioc::graph::Graph;
use consensus_ioc::policy::{PolicyGrid, SGrid};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn rk4_reproduces_exponential_decay() {
    let rate = 1.3;
    let mut f = |_t: f64, y: &DVector<f64>| y * -rate;
    let dt = 0.01;
    let mut y = DVector::from_vec(vec![1.0, -2.0]);
    for n in 0..200 {
        y = rk4_step(&mut f, n as f64 * dt, &y, dt);
    }
    let decay = (-rate * 2.0f64).exp();
    assert_abs_diff_eq!(y[0], decay, epsilon = 1e-6);
    assert_abs_diff_eq!(y[1], -2.0 * decay, epsilon = 1e-6);
}

#[test]
fn balanced_graph_without_goals_conserves_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d) = (4, 2);
    let pairs = [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)];
    let both: Vec<_> = pairs.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
    let graph = Graph::new(n, &both, d).unwrap();
    let grid = SGrid::new(0.1, 4.0, 40).unwrap();
    let policy = PolicyGrid::from_fn(grid, |s| 1.0 + (s - 1.0).powi(2)).unwrap();
    // a threshold no distance can satisfy switches the regulator off
    let spec = GoalSpec::new(DVector::zeros(n * d), d, 1.0, 1e-300).unwrap();
    let x0 = common::random_vec(&mut rng, n * d, -1.5, 1.5);
    let traj = simulate(&x0, &policy, &graph, &spec, Horizon::new(0.0, 3.0, 0.01).unwrap())
        .unwrap();
    let mean = |x: &DVector<f64>| -> Vec<f64> {
        (0..d).map(|c| (0..n).map(|i| x[i * d + c]).sum::<f64>() / n as f64).collect()
    };
    let m0 = mean(traj.initial());
    for x in traj.states() {
        for (a, b) in mean(x).iter().zip(&m0) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
