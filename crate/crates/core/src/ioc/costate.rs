use log::warn;
use nalgebra::{DMatrix, DVector};

use super::{IocError, IocProblem};
use crate::dynamics::{
    check_model, drift_unchecked, goal_control_jacobian_unchecked, DynamicsError, GoalSpec,
    Trajectory,
};
use crate::graph::Graph;
use crate::policy::PolicyGrid;

/// Edges shorter than this have no defined direction.
pub const COINCIDENT_TOL: f64 = 1e-9;

/// Co-state samples on the forward trajectory's time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub lambdas: Vec<DVector<f64>>,
}

impl CostateTrajectory {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// `∂α/∂x` as an `m × dN` matrix, plus the edges whose endpoints coincide
/// (those rows are left at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceJacobian {
    pub matrix: DMatrix<f64>,
    pub degenerate: Vec<usize>,
}

pub fn dalpha_dx(x: &DVector<f64>, graph: &Graph) -> Result<DistanceJacobian, DynamicsError> {
    if x.len() != graph.ensemble_dim() {
        return Err(DynamicsError::StateLength {
            expected: graph.ensemble_dim(),
            got: x.len(),
        });
    }
    let d = graph.state_dim();
    let mut matrix = DMatrix::zeros(graph.num_edges(), x.len());
    let mut degenerate = Vec::new();
    for (k, e) in graph.edges().iter().enumerate() {
        let z = x.rows(e.head * d, d) - x.rows(e.tail * d, d);
        let a = z.norm();
        if a < COINCIDENT_TOL {
            warn!("edge {k}: endpoints coincide, using a zero distance gradient");
            degenerate.push(k);
            continue;
        }
        for c in 0..d {
            matrix[(k, e.head * d + c)] = z[c] / a;
            matrix[(k, e.tail * d + c)] = -z[c] / a;
        }
    }
    Ok(DistanceJacobian { matrix, degenerate })
}

/// Right-hand side of the co-state equation,
///
/// ```text
/// λ̇ = (x − x̂) − (∂h/∂x)ᵀ λ + Σ_{k=(j,i)} (e_i − e_j) ⊗ A_k λ_i,
/// A_k = w_k I + u(α_k) z_k z_kᵀ / α_k,   z_k = x_i − x_j,
/// ```
///
/// where the second part of `A_k` comes from differentiating the weight
/// through the distance (`dw/dα = u(α)` inside `(δ, Δ)`, zero outside).
/// Equivalently `λ̇ = (x − x̂) − (∂f/∂x)ᵀ λ` for the drift `f`.
pub fn costate_rhs(
    lambda: &DVector<f64>,
    x: &DVector<f64>,
    x_hat: &DVector<f64>,
    p: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
) -> Result<DVector<f64>, DynamicsError> {
    check_model(x, graph, spec)?;
    for v in [lambda, x_hat] {
        if v.len() != x.len() {
            return Err(DynamicsError::StateLength {
                expected: x.len(),
                got: v.len(),
            });
        }
    }
    Ok((x - x_hat) - drift_vjp(lambda, x, p, graph, spec))
}

/// `(∂f/∂x)ᵀ b` for the drift `f` at `x`.
pub(crate) fn drift_vjp(
    b: &DVector<f64>,
    x: &DVector<f64>,
    p: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
) -> DVector<f64> {
    let d = graph.state_dim();
    let mut out = goal_control_jacobian_unchecked(x, spec).tr_mul(b);
    let mut z = vec![0.0; d];
    for e in graph.edges() {
        let (hi, ti) = (e.head * d, e.tail * d);
        let mut sq = 0.0;
        let mut proj = 0.0;
        for c in 0..d {
            z[c] = x[hi + c] - x[ti + c];
            sq += z[c] * z[c];
            proj += z[c] * b[hi + c];
        }
        let a = sq.sqrt();
        let w = p.weight_unchecked(a);
        let radial = if a < COINCIDENT_TOL {
            0.0
        } else {
            p.weight_slope(a) * proj / a
        };
        for c in 0..d {
            let v = w * b[hi + c] + radial * z[c];
            out[hi + c] -= v;
            out[ti + c] += v;
        }
    }
    out
}

/// Reverse sweep through one RK4 step `x_{n+1} = Φ(x_n)`.
pub(crate) struct StepAdjoint {
    /// `(∂Φ/∂x_n)ᵀ a`.
    pub through: DVector<f64>,
    /// Stage states `y_s` paired with the adjoints of their slopes `k_s = f(y_s)`.
    pub stages: [(DVector<f64>, DVector<f64>); 4],
}

pub(crate) fn step_adjoint(
    x: &DVector<f64>,
    a: &DVector<f64>,
    dt: f64,
    p: &PolicyGrid,
    graph: &Graph,
    spec: &GoalSpec,
) -> StepAdjoint {
    let f = |y: &DVector<f64>| drift_unchecked(y, p, graph, spec);
    let vjp = |b: &DVector<f64>, y: &DVector<f64>| drift_vjp(b, y, p, graph, spec);
    // stage states exactly as the forward step forms them
    let y1 = x.clone();
    let k1 = f(&y1);
    let y2 = x + &k1 * (0.5 * dt);
    let k2 = f(&y2);
    let y3 = x + &k2 * (0.5 * dt);
    let k3 = f(&y3);
    let y4 = x + &k3 * dt;

    let bk4 = a * (dt / 6.0);
    let by4 = vjp(&bk4, &y4);
    let bk3 = a * (dt / 3.0) + &by4 * dt;
    let by3 = vjp(&bk3, &y3);
    let bk2 = a * (dt / 3.0) + &by3 * (0.5 * dt);
    let by2 = vjp(&bk2, &y2);
    let bk1 = a * (dt / 6.0) + &by2 * (0.5 * dt);
    let by1 = vjp(&bk1, &y1);
    let through = a + by1 + by2 + by3 + by4;
    StepAdjoint {
        through,
        stages: [(y1, bk1), (y2, bk2), (y3, bk3), (y4, bk4)],
    }
}

fn check_forward(prob: &IocProblem, fwd: &Trajectory) -> Result<(), IocError> {
    if fwd.horizon() != prob.demo().horizon() || fwd.dim() != prob.demo().dim() {
        return Err(IocError::Mismatch(
            "forward trajectory does not match the demonstration grid".into(),
        ));
    }
    check_model(fwd.initial(), prob.graph(), prob.goal())?;
    Ok(())
}

/// Trapezoid weight of time sample `n` out of `0..=last`.
pub(crate) fn time_weight(n: usize, last: usize, dt: f64) -> f64 {
    if last == 0 {
        0.0
    } else if n == 0 || n == last {
        0.5 * dt
    } else {
        dt
    }
}

/// Co-state of the discretized problem.
///
/// `λ_n` is minus the gradient, with respect to `x_n`, of everything the cost
/// accumulates after sample `n`: later running-cost samples and the terminal
/// cost, propagated through the RK4 steps of the forward pass. Hence
/// `λ_N = −(x(t_f) − x̂(t_f))` exactly, and the sequence approximates the
/// solution of [`costate_rhs`] backward in time (see [`integrate_costate`]).
/// Being the exact adjoint of the discrete cost, it makes [`gradient_ju`]
/// the exact gradient of [`total_cost`].
///
/// [`gradient_ju`]: super::gradient_ju
/// [`total_cost`]: super::total_cost
pub fn backward_pass(
    prob: &IocProblem,
    p: &PolicyGrid,
    fwd: &Trajectory,
) -> Result<CostateTrajectory, IocError> {
    check_forward(prob, fwd)?;
    let (graph, spec, demo) = (prob.graph(), prob.goal(), prob.demo());
    let dt = fwd.horizon().dt;
    let last = fwd.len() - 1;
    let mut lambdas = vec![DVector::zeros(fwd.dim()); last + 1];
    let residual = |n: usize| &fwd.states()[n] - &demo.states()[n];
    lambdas[last] = -residual(last);
    // gradient of the remaining cost with respect to x_{n+1}
    let mut adj = residual(last) * (1.0 + time_weight(last, last, dt));
    for n in (0..last).rev() {
        let step = step_adjoint(&fwd.states()[n], &adj, dt, p, graph, spec);
        if step.through.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Blowup {
                time: fwd.time(n),
                step: n,
            }
            .into());
        }
        adj = &step.through + residual(n) * time_weight(n, last, dt);
        lambdas[n] = -step.through;
    }
    Ok(CostateTrajectory { lambdas })
}

/// Integrates [`costate_rhs`] backward from `λ(t_f) = −(x(t_f) − x̂(t_f))` with
/// classical RK4, reading forward and demonstration states at the half steps
/// by linear interpolation. An independent, second-order route to the
/// co-state used to cross-check [`backward_pass`].
pub fn integrate_costate(
    prob: &IocProblem,
    p: &PolicyGrid,
    fwd: &Trajectory,
) -> Result<CostateTrajectory, IocError> {
    check_forward(prob, fwd)?;
    let (graph, spec, demo) = (prob.graph(), prob.goal(), prob.demo());
    let dt = fwd.horizon().dt;
    let steps = fwd.len() - 1;
    let mut lambdas = vec![DVector::zeros(fwd.dim()); steps + 1];
    lambdas[steps] = -(fwd.last() - demo.last());
    let rhs = |lam: &DVector<f64>, x: &DVector<f64>, xh: &DVector<f64>| {
        (x - xh) - drift_vjp(lam, x, p, graph, spec)
    };
    for n in (1..=steps).rev() {
        let lam = &lambdas[n];
        let x_mid = fwd.interpolate(n - 1, 0.5);
        let xh_mid = demo.interpolate(n - 1, 0.5);
        let h = -dt;
        let k1 = rhs(lam, &fwd.states()[n], &demo.states()[n]);
        let k2 = rhs(&(lam + &k1 * (0.5 * h)), &x_mid, &xh_mid);
        let k3 = rhs(&(lam + &k2 * (0.5 * h)), &x_mid, &xh_mid);
        let k4 = rhs(&(lam + &k3 * h), &fwd.states()[n - 1], &demo.states()[n - 1]);
        let next = lam + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Blowup {
                time: fwd.time(n - 1),
                step: n - 1,
            }
            .into());
        }
        lambdas[n - 1] = next;
    }
    Ok(CostateTrajectory { lambdas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::drift;
    use crate::policy::SGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, r: f64) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.gen_range(-r..r))
    }

    fn random_policy(rng: &mut ChaCha8Rng, grid: SGrid) -> PolicyGrid {
        let base: f64 = rng.gen_range(0.5..2.0);
        PolicyGrid::from_fn(grid, |s| base * (s - 0.3).powi(2) + rng.gen_range(-0.3..0.3)).unwrap()
    }

    #[test]
    fn distance_jacobian_one_dimensional() {
        let g = Graph::from_one_based(2, &[(1, 2)], 1).unwrap();
        let j = dalpha_dx(&DVector::from_vec(vec![0.0, 1.0]), &g).unwrap();
        assert_eq!(j.matrix, DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]));
        assert!(j.degenerate.is_empty());
    }

    #[test]
    fn coincident_pair_gives_zero_row() {
        let g = Graph::from_one_based(3, &[(1, 2), (2, 3)], 2).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0, 2.0, 0.0]);
        let j = dalpha_dx(&x, &g).unwrap();
        assert_eq!(j.degenerate, vec![0]);
        assert_eq!(j.matrix.row(0).amax(), 0.0);
        assert!(j.matrix.row(1).amax() > 0.0);
    }

    #[test]
    fn distance_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Graph::from_one_based(4, &[(1, 2), (3, 2), (4, 1), (2, 4)], 3).unwrap();
        for _ in 0..20 {
            let x = random_vec(&mut rng, 12, 2.0);
            let j = dalpha_dx(&x, &g).unwrap().matrix;
            let step = 1e-6;
            for c in 0..12 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[c] += step;
                xm[c] -= step;
                let ap = crate::policy::edge_distances(&xp, &g).unwrap();
                let am = crate::policy::edge_distances(&xm, &g).unwrap();
                for k in 0..4 {
                    assert!(((ap[k] - am[k]) / (2.0 * step) - j[(k, c)]).abs() <= 1e-6);
                }
            }
        }
    }

    // Dense matrix expression of the co-state right-hand side, assembled from
    // incidence matrices and the distance Jacobian.
    fn dense_rhs(
        lambda: &DVector<f64>,
        x: &DVector<f64>,
        x_hat: &DVector<f64>,
        p: &PolicyGrid,
        g: &Graph,
        spec: &GoalSpec,
    ) -> DVector<f64> {
        let d = g.state_dim();
        let eye = DMatrix::<f64>::identity(d, d);
        let inc = g.incidence();
        let d_blk = inc.signed.kronecker(&eye);
        let d_in_blk = inc.d_in.kronecker(&eye);
        let alpha = crate::policy::edge_distances(x, g).unwrap();
        let w: Vec<f64> = alpha.iter().map(|a| p.weight(*a).unwrap()).collect();
        let rho: Vec<f64> = alpha.iter().map(|a| p.weight_slope(*a)).collect();
        let w_blk = DMatrix::from_diagonal(&DVector::from_vec(w)).kronecker(&eye);
        let ones = DMatrix::from_element(d, 1, 1.0);
        let rho_blk = DMatrix::from_diagonal(&DVector::from_vec(rho)).kronecker(&ones);
        let diag_z = DMatrix::from_diagonal(&d_blk.tr_mul(x));
        let da = dalpha_dx(x, g).unwrap().matrix;
        let jh = goal_control_jacobian_unchecked(x, spec).to_dense();
        let laplacian_part = &d_in_blk * w_blk * d_blk.transpose();
        let slope_part = &d_in_blk * diag_z * rho_blk * da;
        (x - x_hat) - jh.tr_mul(lambda)
            + laplacian_part.tr_mul(lambda)
            + slope_part.tr_mul(lambda)
    }

    #[test]
    fn rhs_matches_dense_form_and_hamiltonian_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = SGrid::new(0.15, 3.02, 48).unwrap();
        for d in 1..=2 {
            let g = Graph::new(3, &[(0, 1), (1, 2), (2, 0), (0, 2)], d).unwrap();
            for _ in 0..10 {
                let p = random_policy(&mut rng, grid);
                let spec = GoalSpec::always_active(random_vec(&mut rng, 3 * d, 2.0), d, 1.3).unwrap();
                let x = random_vec(&mut rng, 3 * d, 1.5);
                let xh = random_vec(&mut rng, 3 * d, 1.5);
                let lam = random_vec(&mut rng, 3 * d, 1.0);
                let rhs = costate_rhs(&lam, &x, &xh, &p, &g, &spec).unwrap();
                assert!((&rhs - dense_rhs(&lam, &x, &xh, &p, &g, &spec)).amax() < 1e-12);

                // λ̇ = ∇ₓ[½‖x − x̂‖² − λᵀ f(x)]
                let phi = |y: &DVector<f64>| {
                    0.5 * (y - &xh).norm_squared() - lam.dot(&drift(y, &p, &g, &spec).unwrap())
                };
                let step = 1e-6;
                for c in 0..x.len() {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[c] += step;
                    xm[c] -= step;
                    let fd = (phi(&xp) - phi(&xm)) / (2.0 * step);
                    assert!((fd - rhs[c]).abs() <= 1e-4, "coord {c}: {fd} vs {}", rhs[c]);
                }
            }
        }
    }

    #[test]
    fn rhs_zero_cases() {
        let grid = SGrid::new(0.15, 3.02, 32).unwrap();
        let g = Graph::from_one_based(3, &[(1, 2), (2, 3)], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = GoalSpec::always_active(random_vec(&mut rng, 6, 2.0), 2, 1.0).unwrap();
        let x = random_vec(&mut rng, 6, 2.0);
        let p = random_policy(&mut rng, grid);
        let zero = DVector::zeros(6);
        assert_eq!(costate_rhs(&zero, &x, &x, &p, &g, &spec).unwrap(), zero);

        // without interaction only the goal term survives
        let none = PolicyGrid::constant(grid, 0.0).unwrap();
        let lam = random_vec(&mut rng, 6, 1.0);
        let xh = random_vec(&mut rng, 6, 1.0);
        let expected = (&x - &xh) - goal_control_jacobian_unchecked(&x, &spec).tr_mul(&lam);
        assert_eq!(costate_rhs(&lam, &x, &xh, &none, &g, &spec).unwrap(), expected);
    }
}
