//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use consensus_ioc::case_study::CaseStudy;
use consensus_ioc::dynamics::{drift, forms, simulate, GoalSpec, Horizon};
use consensus_ioc::experiment::{evaluate, Metrics};
use consensus_ioc::ioc::{
    backward_pass, gradient_ju, hessian_check, learn, total_cost, IocProblem, SolveReport,
    SolverSettings,
};
use consensus_ioc::policy::{PolicyGrid, SGrid};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
/// Final state and initial co-state of one resolution.
type Endpoints = (DVector<f64>, DVector<f64>);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = 0.0f64;
    let mut count = 0;
    for _ in 0..20 {
        let inst = common::random_instance(&mut rng);
        let prob = &inst.prob;
        let p = &inst.current;
        let fwd = prob.simulate(p).map_err(|e| e.to_string())?;
        let cst = backward_pass(prob, p, &fwd).map_err(|e| e.to_string())?;
        let grad = gradient_ju(prob, p, &fwd, &cst).map_err(|e| e.to_string())?;
        let grid = *prob.grid();
        for _ in 0..10 {
            let mu = common::random_direction(&mut rng, &grid);
            let eps = 1e-5;
            let jp = total_cost(prob, &p.axpy(eps, &mu).unwrap()).map_err(|e| e.to_string())?;
            let jm = total_cost(prob, &p.axpy(-eps, &mu).unwrap()).map_err(|e| e.to_string())?;
            let fd = (jp - jm) / (2.0 * eps);
            let an = grid.inner(&grad, &mu);
            worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-12));
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-3 && secs <= 60.0,
        format!("{count} directions, worst relative error {worst:.2e}, {secs:.1} s"),
    )
}

fn form_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cs = CaseStudy::default();
    let mut worst = 0.0f64;
    let mut worst_scalar = 0.0f64;
    for trial in 0..100 {
        let x = common::random_vec(&mut rng, cs.graph.ensemble_dim(), -2.0, 2.0);
        let f = drift(&x, &cs.true_policy, &cs.graph, &cs.goal).unwrap();
        for g in [
            forms::node_sum(&x, &cs.true_policy, &cs.graph, &cs.goal).unwrap(),
            forms::laplacian(&x, &cs.true_policy, &cs.graph, &cs.goal).unwrap(),
            forms::hadamard(&x, &cs.true_policy, &cs.graph, &cs.goal).unwrap(),
        ] {
            worst = worst.max((&f - g).amax());
        }

        let n = 2 + trial % 4;
        let graph = common::random_graph(&mut rng, n, 1);
        let goal = GoalSpec::always_active(common::random_vec(&mut rng, n, -2.0, 2.0), 1, 1.0)
            .unwrap();
        let x = common::random_vec(&mut rng, n, -2.0, 2.0);
        let f = drift(&x, &cs.true_policy, &graph, &goal).unwrap();
        for g in [
            forms::node_sum(&x, &cs.true_policy, &graph, &goal).unwrap(),
            forms::laplacian(&x, &cs.true_policy, &graph, &goal).unwrap(),
            forms::hadamard(&x, &cs.true_policy, &graph, &goal).unwrap(),
            forms::scalar_states(&x, &cs.true_policy, &graph, &goal).unwrap(),
        ] {
            worst_scalar = worst_scalar.max((&f - g).amax());
        }
    }
    check(
        worst <= 1e-12 && worst_scalar <= 1e-12,
        format!("100 states, max deviation {worst:.1e} (d = 2), {worst_scalar:.1e} (d = 1)"),
    )
}

fn stationarity() -> Outcome {
    let cs = CaseStudy::default();
    let demo = simulate(&cs.initial, &cs.nominal, &cs.graph, &cs.goal, cs.horizon)
        .map_err(|e| e.to_string())?;
    let prob = cs.problem(demo).map_err(|e| e.to_string())?;
    let report =
        learn(&prob, &cs.nominal, &SolverSettings::default()).map_err(|e| e.to_string())?;
    check(
        report.iterations == 0 && report.final_grad_norm() <= 1e-6,
        format!(
            "{:?} after {} iterations, |J_u| = {:.1e}",
            report.termination,
            report.iterations,
            report.final_grad_norm()
        ),
    )
}

struct Recovery {
    report: SolveReport,
    metrics: Metrics,
    /// Nodes above the visited range, and how many kept the nominal value.
    beyond: usize,
    beyond_kept: usize,
    secs: f64,
}

fn recover(cs: &CaseStudy) -> Result<Recovery, String> {
    let start = Instant::now();
    let demo = cs.generate_demo().map_err(|e| e.to_string())?;
    let prob = cs.problem(demo).map_err(|e| e.to_string())?;
    let report =
        learn(&prob, &cs.nominal, &SolverSettings::default()).map_err(|e| e.to_string())?;
    let (metrics, _) =
        evaluate(&prob, &report.learned, &cs.true_policy).map_err(|e| e.to_string())?;
    let grid = prob.grid();
    let (mut beyond, mut beyond_kept) = (0, 0);
    for q in 0..grid.len() {
        if grid.node(q) > metrics.visited_max {
            beyond += 1;
            if report.learned.values()[q] == cs.nominal.values()[q] {
                beyond_kept += 1;
            }
        }
    }
    Ok(Recovery {
        report,
        metrics,
        beyond,
        beyond_kept,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn describe(r: &Recovery) -> String {
    let h = &r.report.cost_history;
    format!(
        "{:?} after {} iterations in {:.0} s; J {:.4e} -> {:.4e} (ratio {:.3}); \
         visited s in [{:.3}, {:.3}]; policy rmse {:.3} vs 5% of max|u_true| = {:.3}; \
         weight mse {:.3e}; {} of {} nodes above the visited range unchanged",
        r.report.termination,
        r.report.iterations,
        r.secs,
        h[0],
        r.report.final_cost(),
        r.report.final_cost() / h[0],
        r.metrics.visited_min,
        r.metrics.visited_max,
        r.metrics.policy_rmse_visited,
        0.05 * r.metrics.true_policy_max_visited,
        r.metrics.weight_mse,
        r.beyond_kept,
        r.beyond,
    )
}

fn case_study_recovery() -> Outcome {
    let base = CaseStudy::default();
    let oracle = recover(&base.refined().map_err(|e| e.to_string())?)?;
    println!("  oracle run at half step and grid spacing: {}", describe(&oracle));
    let r = recover(&base)?;
    let h = &r.report.cost_history;
    let decreasing = h.windows(2).all(|w| w[1] < w[0]);
    let parts = [
        ("a", decreasing && r.report.final_cost() <= 0.01 * h[0]),
        (
            "b",
            r.metrics.policy_rmse_visited <= 0.05 * r.metrics.true_policy_max_visited,
        ),
        ("c", r.beyond_kept == r.beyond),
        ("d", r.metrics.weight_mse <= 1e-3),
    ];
    let failed: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let detail = format!(
        "{}; {}",
        describe(&r),
        if failed.is_empty() {
            "all parts met".to_string()
        } else {
            format!("unmet parts: {}", failed.join(", "))
        }
    );
    check(failed.is_empty() && r.report.iterations <= 500 && r.secs <= 600.0, detail)
}

fn second_order() -> Outcome {
    let cs = CaseStudy::default();
    let demo = cs.generate_demo().map_err(|e| e.to_string())?;
    let prob = cs.problem(demo).map_err(|e| e.to_string())?;
    let expected = 1.0 / (cs.horizon.tf - cs.horizon.t0);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut values = Vec::new();
    for _ in 0..10 {
        let p = PolicyGrid::from_fn(cs.grid, |_| rng.gen_range(-10.0..10.0)).unwrap();
        values.push(hessian_check(&prob, &p).map_err(|e| e.to_string())?);
    }
    check(
        values.iter().all(|&v| v == expected && v > 0.0),
        format!("10 policies, all {}", values[0]),
    )
}

fn integrator_orders() -> Outcome {
    // Linear policies on a grid wider than every edge length keep the
    // weights smooth, so the nominal orders are visible.
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let (n, d) = (3, 2);
    let graph = common::random_graph(&mut rng, n, d);
    let grid = SGrid::new(0.01, 10.0, 64).unwrap();
    let truth = PolicyGrid::from_fn(grid, |s| 1.0 + 0.5 * s).unwrap();
    let nominal = PolicyGrid::from_fn(grid, |s| 0.3 + 1.2 * s).unwrap();
    let goal = GoalSpec::always_active(common::random_vec(&mut rng, n * d, -1.5, 1.5), d, 1.0)
        .unwrap();
    let x0 = common::random_vec(&mut rng, n * d, -1.5, 1.5);
    let solve = |dt: f64| -> Result<Endpoints, String> {
        let h = Horizon::new(0.0, 2.0, dt).map_err(|e| e.to_string())?;
        let demo = simulate(&x0, &truth, &graph, &goal, h).map_err(|e| e.to_string())?;
        let prob = IocProblem::new(graph.clone(), demo, goal.clone(), nominal.clone())
            .map_err(|e| e.to_string())?;
        let fwd = prob.simulate(&nominal).map_err(|e| e.to_string())?;
        let cst = backward_pass(&prob, &nominal, &fwd).map_err(|e| e.to_string())?;
        Ok((fwd.last().clone(), cst.lambdas[0].clone()))
    };
    let runs = [solve(0.1)?, solve(0.05)?, solve(0.025)?];
    let ratio = |pick: fn(&Endpoints) -> &DVector<f64>| {
        (pick(&runs[0]) - pick(&runs[1])).norm() / (pick(&runs[1]) - pick(&runs[2])).norm()
    };
    let forward = ratio(|r| &r.0);
    let backward = ratio(|r| &r.1);
    check(
        forward >= 12.0 && backward >= 3.5,
        format!("step-halving ratios: forward {forward:.2}, backward {backward:.2}"),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<std::path::PathBuf, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_consensus-ioc"))
            .env("RUST_LOG", "warn")
            .args(["all", "--seed", "2024", "--out"])
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("`all` exited with {status}"));
        }
        Ok(out)
    };
    let (a, b) = (run("a")?, run("b")?);
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let read = |dir: &Path, name: &std::ffi::OsStr| std::fs::read(dir.join(name)).ok();
    let differing: Vec<String> = names
        .iter()
        .filter(|n| read(&a, n) != read(&b, n))
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    check(
        differing.is_empty() && names.len() == 12,
        if differing.is_empty() {
            format!("{} files byte-identical", names.len())
        } else {
            format!("differing: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("gradient oracle", gradient_oracle),
        ("dynamics-form equivalence", form_equivalence),
        ("stationarity at truth", stationarity),
        ("case-study recovery", case_study_recovery),
        ("second-order condition", second_order),
        ("integrator orders", integrator_orders),
        ("determinism", determinism),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} ({name}): {tag}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
