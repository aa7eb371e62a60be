//! Certified inner solves: produce x with L_ρ(x, λ; θ) ≤ g_ρ(λ; θ) + α
//! without ever evaluating the (uncomputable) dual value g_ρ.
//!
//! Two stopping rules provide the certificate:
//!
//! * fixed budget — run accelerated projected gradient for
//!   T = ⌈√(2·L_k·D_X²/α) − 1⌉ iterations; the standard accelerated bound
//!   `L_ρ(x_T) − g_ρ ≤ 2·L_k·‖x₀ − x*‖²/(T+1)²` then guarantees the gap is
//!   at most α on a compact X with diameter D_X;
//! * gradient mapping — for η = 1/L_k and p = Π_X(x − η∇L_ρ(x)), the value
//!   `L_k·D_X·‖x − p‖ + (L_k/2)·‖x − p‖²` upper-bounds L_ρ(p) − g_ρ, so the
//!   solve can stop as soon as it drops below α.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{
    check_dim, check_finite, Decision, MisspecifiedProblem, Multiplier, Objective, ParamVector,
    Penalty, ProblemAt, SimpleSet,
};

/// Iteration cap for adaptive solves on a non-compact X (strong convexity
/// certificate); compact solves are capped by the budget T instead.
const WHOLE_SPACE_ITER_CAP: usize = 4_000_000;

/// Outcome of a certified inner solve.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Decision,
    pub iterations: usize,
    /// The suboptimality bound this result certifies; at most the requested α.
    pub certified_gap: f64,
    /// Smoothness constant L_k used for the step size.
    pub lipschitz_used: f64,
}

/// Solver knobs. Function-value momentum restarts are disabled by default;
/// they can speed up adaptive solves but void the fixed-budget certificate,
/// so with restarts on the gradient-mapping rule must fire before the budget
/// runs out.
#[derive(Debug, Clone, Copy, Default)]
pub struct SolverOptions {
    pub restart: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum StopRule {
    Budget,
    Adaptive,
}

/// Upper bound on the gradient Lipschitz constant of x ↦ L_ρ(x, λ; θ),
/// valid for every λ: L_k = σ_max(Q(θ)) + ρ·σ_max(A(θ))².
pub fn smoothness_constant(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    theta: &ParamVector,
) -> Result<f64> {
    let at = p.at(theta)?;
    smoothness_at(&at, cfg)
}

pub(crate) fn smoothness_at(at: &ProblemAt<'_>, cfg: &Penalty) -> Result<f64> {
    let objective_part = match &at.q {
        Some(q) => largest_singular_value(q),
        None => match &at.problem.objective {
            Objective::Plugin(plugin) => plugin.smoothness(&at.theta).ok_or_else(|| {
                Error::Config("plugin objective must supply a smoothness constant".into())
            })?,
            Objective::Quadratic(_) => unreachable!(),
        },
    };
    let a_norm = largest_singular_value(&at.a);
    Ok(objective_part + cfg.rho * a_norm * a_norm)
}

fn largest_singular_value(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Iteration budget certifying a gap of `alpha` from any start in a set of
/// diameter `d_x`: smallest T with 2·L·D²/(T+1)² ≤ α.
pub fn iteration_budget(lipschitz: f64, d_x: f64, alpha: f64) -> usize {
    let t = (2.0 * lipschitz * d_x * d_x / alpha).sqrt() - 1.0;
    (t.ceil().max(1.0)) as usize
}

/// Step 1 with the fixed-budget certificate.
pub fn solve_subproblem(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    alpha: f64,
    warm_start: &Decision,
) -> Result<InnerResult> {
    solve_inner(p, cfg, lam, theta, alpha, warm_start, StopRule::Budget, SolverOptions::default())
}

/// Step 1 with early stopping on the gradient-mapping certificate; never
/// exceeds the fixed budget of [`solve_subproblem`].
pub fn solve_subproblem_adaptive(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    alpha: f64,
    warm_start: &Decision,
) -> Result<InnerResult> {
    solve_inner(p, cfg, lam, theta, alpha, warm_start, StopRule::Adaptive, SolverOptions::default())
}

/// [`solve_subproblem_adaptive`] with explicit options.
pub fn solve_subproblem_adaptive_with(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    alpha: f64,
    warm_start: &Decision,
    options: SolverOptions,
) -> Result<InnerResult> {
    solve_inner(p, cfg, lam, theta, alpha, warm_start, StopRule::Adaptive, options)
}

#[allow(clippy::too_many_arguments)]
fn solve_inner(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    alpha: f64,
    warm_start: &Decision,
    rule: StopRule,
    options: SolverOptions,
) -> Result<InnerResult> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be a positive real, got {alpha}")));
    }
    check_dim("lambda", lam.len(), p.n_constraints())?;
    check_dim("warm start", warm_start.len(), p.decision_dim())?;
    check_finite("lambda", lam)?;

    let at = p.at(theta)?;
    let lipschitz = smoothness_at(&at, cfg)?;
    let rho = cfg.rho;
    let n = p.decision_dim();
    let m = p.n_constraints();

    // Strong-convexity fallback for a non-compact X: certify via
    // ‖∇L_ρ(x)‖²/(2μ) with μ = λ_min(Q(θ)).
    let whole_space = matches!(p.set, SimpleSet::WholeSpace { .. });
    let (d_x, budget, strong_mu) = if whole_space {
        if rule == StopRule::Budget {
            return Err(Error::Config(
                "X is the whole space: no finite diameter for the budget certificate; \
                 use the adaptive rule with a strongly convex objective"
                    .into(),
            ));
        }
        let mu = match &at.q {
            Some(q) => q.clone().symmetric_eigen().eigenvalues.min(),
            None => {
                return Err(Error::Config(
                    "adaptive solve on the whole space requires the quadratic family".into(),
                ))
            }
        };
        if mu <= 0.0 {
            return Err(Error::Config(format!(
                "adaptive solve on the whole space requires lambda_min(Q) > 0, got {mu:.3e}"
            )));
        }
        (0.0, WHOLE_SPACE_ITER_CAP, Some(mu))
    } else {
        let d = p.set.diameter().expect("compact kinds have a diameter");
        (d, iteration_budget(lipschitz, d, alpha), None)
    };

    let eta = 1.0 / lipschitz;
    let mut ws_m = DVector::zeros(m);
    let mut grad = DVector::zeros(n);

    let mut x = p.set.project(warm_start)?;
    let mut value = at.aug_lagrangian(rho, &x, lam);
    if !value.is_finite() {
        return Err(Error::Numerical(
            "augmented Lagrangian non-finite at the warm start".into(),
        ));
    }
    let mut best_x = x.clone();
    let mut best_value = value;

    if rule == StopRule::Adaptive {
        let (bound, projected) =
            mapping_bound(&at, rho, lam, &x, eta, lipschitz, d_x, strong_mu, &mut ws_m, &mut grad)?;
        if bound <= alpha {
            let proj_value = at.aug_lagrangian(rho, &projected, lam);
            let x_out = if proj_value < best_value { projected } else { best_x };
            return Ok(InnerResult {
                x: x_out,
                iterations: 0,
                certified_gap: bound,
                lipschitz_used: lipschitz,
            });
        }
    }

    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut iterations = 0;
    for j in 1..=budget {
        iterations = j;
        at.grad_x_into(rho, &y, lam, &mut ws_m, &mut grad);
        let stepped = &y - &grad * eta;
        let x_new = p.set.project(&stepped)?;
        let new_value = at.aug_lagrangian(rho, &x_new, lam);
        if !new_value.is_finite() || x_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "inner solve diverged at iteration {j} (value {new_value})"
            )));
        }
        if new_value < best_value {
            best_value = new_value;
            best_x.copy_from(&x_new);
        }

        if rule == StopRule::Adaptive {
            let (bound, projected) = mapping_bound(
                &at, rho, lam, &x_new, eta, lipschitz, d_x, strong_mu, &mut ws_m, &mut grad,
            )?;
            if bound <= alpha {
                let proj_value = at.aug_lagrangian(rho, &projected, lam);
                let x_out = if proj_value < best_value { projected } else { best_x };
                return Ok(InnerResult {
                    x: x_out,
                    iterations: j,
                    certified_gap: bound,
                    lipschitz_used: lipschitz,
                });
            }
        }

        let restarted = options.restart && new_value > value;
        if restarted {
            t = 1.0;
            y.copy_from(&x_new);
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            // y = x_new + beta (x_new − x)
            y.copy_from(&x_new);
            y.axpy(-beta, &x, 1.0 + beta);
            t = t_next;
        }
        x = x_new;
        value = new_value;
    }

    finish_at_budget(rule, options, whole_space, best_x, iterations, lipschitz, d_x, budget, alpha)
}

/// Suboptimality bound from one projected-gradient step at `z`, together with
/// the projected point the bound certifies.
#[allow(clippy::too_many_arguments)]
fn mapping_bound(
    at: &ProblemAt<'_>,
    rho: f64,
    lam: &Multiplier,
    z: &Decision,
    eta: f64,
    lipschitz: f64,
    d_x: f64,
    strong_mu: Option<f64>,
    ws_m: &mut DVector<f64>,
    grad: &mut DVector<f64>,
) -> Result<(f64, Decision)> {
    at.grad_x_into(rho, z, lam, ws_m, grad);
    let stepped = z - &*grad * eta;
    let projected = at.problem.set.project(&stepped)?;
    let step_norm = (z - &projected).norm();
    let bound = if let Some(mu) = strong_mu {
        // Whole space: the projection is the identity, so step_norm = η‖∇‖.
        let grad_norm = step_norm / eta;
        grad_norm * grad_norm / (2.0 * mu)
    } else {
        lipschitz * d_x * step_norm + 0.5 * lipschitz * step_norm * step_norm
    };
    Ok((bound, projected))
}

#[allow(clippy::too_many_arguments)]
fn finish_at_budget(
    rule: StopRule,
    options: SolverOptions,
    whole_space: bool,
    best_x: Decision,
    iterations: usize,
    lipschitz: f64,
    d_x: f64,
    budget: usize,
    alpha: f64,
) -> Result<InnerResult> {
    match rule {
        StopRule::Budget => {
            // Budget certificate for x_T transfers to the best tracked point.
            let gap = (2.0 * lipschitz * d_x * d_x / ((budget as f64 + 1.0) * (budget as f64 + 1.0)))
                .min(alpha);
            Ok(InnerResult {
                x: best_x,
                iterations,
                certified_gap: gap,
                lipschitz_used: lipschitz,
            })
        }
        StopRule::Adaptive => {
            if options.restart || whole_space {
                // Restarts void the accelerated telescope, and the whole-space
                // cap is not a certificate.
                Err(Error::Certification(format!(
                    "gradient-mapping rule did not certify alpha = {alpha:.3e} within {budget} iterations"
                )))
            } else {
                let gap = (2.0 * lipschitz * d_x * d_x
                    / ((budget as f64 + 1.0) * (budget as f64 + 1.0)))
                    .min(alpha);
                Ok(InnerResult {
                    x: best_x,
                    iterations,
                    certified_gap: gap,
                    lipschitz_used: lipschitz,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::oracle::inner_minimum_oracle;
    use crate::problem::{
        AffineConstraints, Certificates, MisspecifiedProblem, Objective, QuadraticFamily, ThetaBox,
    };
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vec1(a: f64) -> DVector<f64> {
        DVector::from_vec(vec![a])
    }

    fn toy_problem(set: SimpleSet) -> MisspecifiedProblem {
        let quad = QuadraticFamily::constant(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::zeros(1),
            1,
        )
        .unwrap();
        let constraints = AffineConstraints::new(
            DMatrix::zeros(1, 1),
            vec![DMatrix::zeros(1, 1)],
            vec1(-1.0),
            vec![DVector::zeros(1)],
        )
        .unwrap();
        MisspecifiedProblem::new(
            Objective::Quadratic(quad),
            constraints,
            set,
            ThetaBox::new(vec![0.0], vec![0.0]).unwrap(),
            Certificates::new(0.0, 0.0, 1.0, 0.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn smoothness_arithmetic() {
        let quad = QuadraticFamily::constant(
            DMatrix::<f64>::identity(2, 2) * 2.0,
            DVector::zeros(2),
            1,
        )
        .unwrap();
        let constraints = AffineConstraints::new(
            DMatrix::identity(2, 2),
            vec![DMatrix::zeros(2, 2)],
            DVector::zeros(2),
            vec![DVector::zeros(2)],
        )
        .unwrap();
        let p = MisspecifiedProblem::new(
            Objective::Quadratic(quad),
            constraints,
            SimpleSet::unit_box(2, 1.0),
            ThetaBox::new(vec![0.0], vec![0.0]).unwrap(),
            Certificates::new(0.0, 0.0, 1.0, 0.0).unwrap(),
        )
        .unwrap();
        let cfg = Penalty::new(3.0).unwrap();
        let l = smoothness_constant(&p, &cfg, &vec1(0.0)).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
    }

    #[test]
    fn smoothness_reduces_to_objective_without_constraints() {
        let p = toy_problem(SimpleSet::unit_box(1, 10.0));
        let cfg = Penalty::new(7.0).unwrap();
        let l = smoothness_constant(&p, &cfg, &vec1(0.0)).unwrap();
        assert!((l - 2.0).abs() < 1e-12, "A = 0 leaves sigma_max(Q)");
    }

    #[test]
    fn smoothness_upper_bounds_numerical_hessian() {
        let fixture = crate::benchmark::random_qp(3, 2, 2, 8).unwrap();
        let p = &fixture.problem;
        let cfg = Penalty::new(2.0).unwrap();
        let theta = DVector::from_vec(vec![0.2, -0.7]);
        let l_k = smoothness_constant(p, &cfg, &theta).unwrap();
        let at = p.at(&theta).unwrap();
        let lam = DVector::from_vec(vec![0.4, 1.1]);
        let step = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut ws = DVector::zeros(2);
        let mut gp = DVector::zeros(3);
        let mut gm = DVector::zeros(3);
        let mut probed = 0;
        while probed < 100 {
            let x = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let h = at.constraint(&x);
            // Second derivatives jump at the penalty kinks; probe away from them.
            if (0..2).any(|j| (lam[j] / cfg.rho + h[j]).abs() < 10.0 * step) {
                continue;
            }
            probed += 1;
            let mut hess = DMatrix::zeros(3, 3);
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                at.grad_x_into(cfg.rho, &xp, &lam, &mut ws, &mut gp);
                at.grad_x_into(cfg.rho, &xm, &lam, &mut ws, &mut gm);
                let col = (&gp - &gm) / (2.0 * step);
                hess.set_column(j, &col);
            }
            let sym = (&hess + hess.transpose()) * 0.5;
            let max_eig = sym.symmetric_eigen().eigenvalues.max();
            assert!(
                max_eig <= l_k * (1.0 + 1e-6) + 1e-6,
                "hessian eigenvalue {max_eig} exceeds smoothness bound {l_k}"
            );
        }
    }

    #[test]
    fn budget_solve_reaches_analytic_minimum() {
        let p = toy_problem(SimpleSet::unit_box(1, 10.0));
        let cfg = Penalty::new(1.0).unwrap();
        let result =
            solve_subproblem(&p, &cfg, &vec1(0.0), &vec1(0.0), 1e-8, &vec1(5.0)).unwrap();
        assert!(result.x[0].abs() <= 1e-4);
        let value = p.at(&vec1(0.0)).unwrap().aug_lagrangian(1.0, &result.x, &vec1(0.0));
        assert!(value <= 1e-8);
        assert!(result.certified_gap <= 1e-8);
    }

    #[test]
    fn huge_alpha_degenerates_to_one_step() {
        let p = toy_problem(SimpleSet::unit_box(1, 10.0));
        let cfg = Penalty::new(1.0).unwrap();
        let l = smoothness_constant(&p, &cfg, &vec1(0.0)).unwrap();
        let d = p.set.diameter().unwrap();
        let alpha = l * d * d;
        let result = solve_subproblem(&p, &cfg, &vec1(0.0), &vec1(0.0), alpha, &vec1(5.0)).unwrap();
        assert_eq!(result.iterations, 1);
        assert!(result.certified_gap <= alpha);
        // Still a certified result: one projected-gradient step from x₀ = 5
        // with η = 1/2 lands at 0, the exact minimizer.
        assert!(result.x[0].abs() < 1e-12);
    }

    #[test]
    fn budget_certificate_sound_against_oracle() {
        let fixture = crate::benchmark::random_qp(2, 1, 1, 33).unwrap();
        let p = &fixture.problem;
        let cfg = Penalty::new(1.0).unwrap();
        let lam = vec1(0.7);
        let theta = vec1(0.3);
        let alpha = 1e-10;
        let result = solve_subproblem(p, &cfg, &lam, &theta, alpha, &DVector::zeros(2)).unwrap();
        let value = p.at(&theta).unwrap().aug_lagrangian(cfg.rho, &result.x, &lam);
        let (_, oracle_min) = inner_minimum_oracle(p, &cfg, &lam, &theta).unwrap();
        assert!(
            value - oracle_min <= alpha,
            "gap {} exceeds alpha {alpha}",
            value - oracle_min
        );
    }

    #[test]
    fn adaptive_stops_immediately_at_minimizer() {
        let p = toy_problem(SimpleSet::unit_box(1, 10.0));
        let cfg = Penalty::new(1.0).unwrap();
        let result =
            solve_subproblem_adaptive(&p, &cfg, &vec1(0.0), &vec1(0.0), 1e-10, &vec1(0.0)).unwrap();
        assert_eq!(result.iterations, 0);
        assert_eq!(result.x[0], 0.0);
    }

    #[test]
    fn adaptive_certificate_sound_against_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in [1u64, 2, 3, 4, 5] {
            let fixture = crate::benchmark::random_qp(3, 2, 2, seed).unwrap();
            let p = &fixture.problem;
            let cfg = Penalty::new(1.0).unwrap();
            let lam = DVector::from_fn(2, |_, _| rng.random::<f64>() * 2.0);
            let theta = DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5);
            let alpha = 10f64.powf(-2.0 - 6.0 * rng.random::<f64>());
            let warm = DVector::from_fn(3, |_, _| rng.random::<f64>() * 4.0 - 2.0);
            let result = solve_subproblem_adaptive(p, &cfg, &lam, &theta, alpha, &warm).unwrap();
            assert!(result.certified_gap <= alpha);
            assert!(p.set.contains(&result.x, 1e-12), "iterate left the feasible set");
            let value = p.at(&theta).unwrap().aug_lagrangian(cfg.rho, &result.x, &lam);
            let (_, oracle_min) = inner_minimum_oracle(p, &cfg, &lam, &theta).unwrap();
            assert!(
                value - oracle_min <= result.certified_gap + 1e-12,
                "true gap {} exceeds certified {}",
                value - oracle_min,
                result.certified_gap
            );
        }
    }

    #[test]
    fn returned_value_monotone_versus_first_step() {
        let fixture = crate::benchmark::random_qp(3, 2, 2, 21).unwrap();
        let p = &fixture.problem;
        let cfg = Penalty::new(1.0).unwrap();
        let lam = DVector::from_vec(vec![0.5, 0.2]);
        let theta = DVector::from_vec(vec![0.1, 0.4]);
        let at = p.at(&theta).unwrap();
        let warm = DVector::from_vec(vec![1.9, -1.7, 0.3]);
        let l = smoothness_constant(p, &cfg, &theta).unwrap();
        let mut ws = DVector::zeros(2);
        let mut grad = DVector::zeros(3);
        at.grad_x_into(cfg.rho, &warm, &lam, &mut ws, &mut grad);
        let first_step = p.set.project(&(&warm - &grad * (1.0 / l))).unwrap();
        let first_value = at.aug_lagrangian(cfg.rho, &first_step, &lam);
        for alpha in [1e-2, 1e-5, 1e-8] {
            let result = solve_subproblem_adaptive(p, &cfg, &lam, &theta, alpha, &warm).unwrap();
            let value = at.aug_lagrangian(cfg.rho, &result.x, &lam);
            assert!(value <= first_value + 1e-12);
        }
    }

    #[test]
    fn whole_space_requires_adaptive_rule() {
        let p = toy_problem(SimpleSet::WholeSpace { dim: 1 });
        let cfg = Penalty::new(1.0).unwrap();
        let budget = solve_subproblem(&p, &cfg, &vec1(0.0), &vec1(0.0), 1e-6, &vec1(1.0));
        assert!(matches!(budget, Err(Error::Config(_))));
        let adaptive =
            solve_subproblem_adaptive(&p, &cfg, &vec1(0.0), &vec1(0.0), 1e-9, &vec1(1.0)).unwrap();
        assert!(adaptive.x[0].abs() < 1e-4);
        let value = p.at(&vec1(0.0)).unwrap().aug_lagrangian(1.0, &adaptive.x, &vec1(0.0));
        assert!(value <= 1e-9, "strong-convexity certificate holds: {value}");
    }

    #[test]
    fn restart_option_still_certifies() {
        let fixture = crate::benchmark::random_qp(3, 2, 2, 63).unwrap();
        let p = &fixture.problem;
        let cfg = Penalty::new(1.0).unwrap();
        let lam = DVector::from_vec(vec![0.3, 0.9]);
        let theta = DVector::from_vec(vec![-0.2, 0.2]);
        let warm = DVector::zeros(3);
        let result = solve_subproblem_adaptive_with(
            p,
            &cfg,
            &lam,
            &theta,
            1e-9,
            &warm,
            SolverOptions { restart: true },
        )
        .unwrap();
        assert!(result.certified_gap <= 1e-9);
        let value = p.at(&theta).unwrap().aug_lagrangian(cfg.rho, &result.x, &lam);
        let (_, oracle_min) = inner_minimum_oracle(p, &cfg, &lam, &theta).unwrap();
        assert!(value - oracle_min <= result.certified_gap + 1e-12);
    }
}
