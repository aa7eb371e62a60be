//! Outer loop: interleaves revealed parameter estimates, certified inner
//! solves and multiplier ascent steps, maintaining ergodic averages and a
//! per-iteration trace.
//!
//! Iteration k (for k = 0, 1, …, K−1):
//!
//! 1. θ_k from the learning sequence (only index k is consulted);
//! 2. x_k with L_ρ(x_k, λ_k; θ_k) ≤ g_ρ(λ_k; θ_k) + α_k, warm-started at x_{k−1};
//! 3. λ_{k+1} = λ_k + ρ·∇_λ L_ρ(x_k, λ_k; θ_k).
//!
//! λ₀ = 0 is fixed: the rate constants are derived under that initialization.

use std::io::{self, Write};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inner_solver::{self, SolverOptions};
use crate::learning::LearningSequence;
use crate::problem::{
    multiplier_update, Decision, MisspecifiedProblem, Multiplier, ParamVector, Penalty,
};
use crate::schedule::InexactnessSchedule;

/// Which certificate the inner solves use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerRule {
    /// Fixed iteration budget from the diameter bound.
    FixedBudget,
    /// Early stop on the gradient-mapping bound, capped by the same budget.
    Adaptive,
}

/// Driver knobs.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Keep per-iteration iterate snapshots in the trace. The envelope checks
    /// need them; switch off for long memory-lean runs.
    pub retain_iterates: bool,
    pub inner_rule: InnerRule,
    pub solver: SolverOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            retain_iterates: true,
            inner_rule: InnerRule::Adaptive,
            solver: SolverOptions::default(),
        }
    }
}

/// Outer-iteration state after completing iterations 0..k (so `k` counts
/// completed iterations): `x` = x_{k−1}, `lam` = λ_k, `x_bar` = mean of
/// x₀..x_{k−1}, `lam_bar` = mean of λ₁..λ_k, `theta` = θ_{k−1}, `alpha` = α_{k−1}.
#[derive(Debug, Clone, PartialEq)]
pub struct AlState {
    pub k: usize,
    pub x: Decision,
    pub lam: Multiplier,
    pub x_bar: Decision,
    pub lam_bar: Multiplier,
    pub theta: ParamVector,
    pub alpha: f64,
}

/// Dense per-iteration iterate snapshot (stored when retention is on).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterateSnapshot {
    /// x_k
    pub x: Vec<f64>,
    /// λ_{k+1}
    pub lam: Vec<f64>,
    /// x̄_k = (1/(k+1)) Σ_{i=0}^{k} x_i
    pub x_bar: Vec<f64>,
    /// λ̄_{k+1} = (1/(k+1)) Σ_{i=1}^{k+1} λ_i
    pub lam_bar: Vec<f64>,
    /// θ_k
    pub theta: Vec<f64>,
}

/// One outer iteration record. `lambda_norm` is ‖λ_{k+1}‖; the error bound is
/// the certificate envelope q^k·‖θ₀−θ*‖ for the θ_k used at this iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub alpha: f64,
    pub theta_error_bound: f64,
    pub inner_iterations: usize,
    pub certified_gap: f64,
    pub lambda_norm: f64,
    pub theta_projected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterates: Option<IterateSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub rho: f64,
    pub schedule: InexactnessSchedule,
    pub certificate_q: f64,
    pub certificate_gap: f64,
    pub retain_iterates: bool,
    pub inner_rule: InnerRule,
    pub restart: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { at: usize, reason: String },
}

/// Append-only run trace: one record per completed outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub meta: RunMeta,
    pub records: Vec<IterationRecord>,
    pub status: RunStatus,
}

impl RunTrace {
    pub fn is_complete(&self) -> bool {
        matches!(self.status, RunStatus::Completed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Iterate snapshot at record `k`, or an error when retention was off.
    pub fn snapshot(&self, k: usize) -> Result<&IterateSnapshot> {
        self.records
            .get(k)
            .and_then(|r| r.iterates.as_ref())
            .ok_or_else(|| {
                Error::Config(format!(
                    "trace does not retain iterates at k = {k}; rerun with retention"
                ))
            })
    }
}

/// Per-iteration diagnostics that require the θ* fixture; computed by the
/// analysis checks, kept separate so the trace itself stays append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub infeasibility: Option<f64>,
    pub primal_gap: Option<f64>,
    pub dual_gap_lo: Option<f64>,
    pub dual_gap_hi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsTable {
    pub rows: Vec<Diagnostics>,
}

/// Result of a run. The trace status records mid-run aborts (the partial
/// trace is preserved); configuration errors are rejected before iteration 0
/// through `Err`.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: AlState,
    pub trace: RunTrace,
}

impl RunOutcome {
    pub fn is_complete(&self) -> bool {
        self.trace.is_complete()
    }
}

/// Runs `horizon` outer iterations with default options.
pub fn run(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    seq: &LearningSequence,
    sched: &InexactnessSchedule,
    horizon: usize,
) -> Result<RunOutcome> {
    run_with(p, cfg, seq, sched, horizon, RunOptions::default())
}

pub fn run_with(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    seq: &LearningSequence,
    sched: &InexactnessSchedule,
    horizon: usize,
    options: RunOptions,
) -> Result<RunOutcome> {
    if horizon < 1 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    sched.validate()?;
    if seq.param_dim() != p.param_dim() {
        return Err(Error::Dimension(format!(
            "learning sequence dimension {} does not match problem d = {}",
            seq.param_dim(),
            p.param_dim()
        )));
    }
    let n = p.decision_dim();
    let m = p.n_constraints();
    let cert = seq.certificate();
    let meta = RunMeta {
        n,
        m,
        d: p.param_dim(),
        rho: cfg.rho,
        schedule: *sched,
        certificate_q: cert.q,
        certificate_gap: cert.initial_gap,
        retain_iterates: options.retain_iterates,
        inner_rule: options.inner_rule,
        restart: options.solver.restart,
    };

    let x_init = p.set.project(&DVector::zeros(n))?;
    let mut state = AlState {
        k: 0,
        x: x_init,
        lam: DVector::zeros(m),
        x_bar: DVector::zeros(n),
        lam_bar: DVector::zeros(m),
        theta: DVector::zeros(p.param_dim()),
        alpha: f64::NAN,
    };
    let mut trace = RunTrace {
        meta,
        records: Vec::with_capacity(horizon),
        status: RunStatus::Completed,
    };
    advance(p, cfg, seq, sched, &mut state, &mut trace, horizon, options);
    Ok(RunOutcome { state, trace })
}

/// Continues a completed run for `extra` iterations. The result is
/// bit-identical to a single run of `state.k + extra` iterations.
pub fn resume(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    seq: &LearningSequence,
    sched: &InexactnessSchedule,
    state: &AlState,
    trace: &RunTrace,
    extra: usize,
) -> Result<RunOutcome> {
    if !trace.is_complete() {
        return Err(Error::Config("cannot resume an aborted run".into()));
    }
    if trace.records.len() != state.k {
        return Err(Error::Config(format!(
            "state k = {} does not match trace length {}",
            state.k,
            trace.records.len()
        )));
    }
    let cert = seq.certificate();
    let options = RunOptions {
        retain_iterates: trace.meta.retain_iterates,
        inner_rule: trace.meta.inner_rule,
        solver: SolverOptions { restart: trace.meta.restart },
    };
    let expected = RunMeta {
        n: p.decision_dim(),
        m: p.n_constraints(),
        d: p.param_dim(),
        rho: cfg.rho,
        schedule: *sched,
        certificate_q: cert.q,
        certificate_gap: cert.initial_gap,
        retain_iterates: options.retain_iterates,
        inner_rule: options.inner_rule,
        restart: options.solver.restart,
    };
    if expected != trace.meta {
        return Err(Error::Config(
            "resume configuration does not match the original run".into(),
        ));
    }
    let mut state = state.clone();
    let mut trace = trace.clone();
    if extra > 0 {
        let upto = state.k + extra;
        advance(p, cfg, seq, sched, &mut state, &mut trace, upto, options);
    }
    Ok(RunOutcome { state, trace })
}

fn advance(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    seq: &LearningSequence,
    sched: &InexactnessSchedule,
    state: &mut AlState,
    trace: &mut RunTrace,
    upto: usize,
    options: RunOptions,
) {
    let cert = seq.certificate();
    let mut grad = DVector::zeros(p.n_constraints());
    while state.k < upto {
        let k = state.k;
        let estimate = seq.estimate(k);
        let alpha = sched.alpha(k);
        let solve = match options.inner_rule {
            InnerRule::FixedBudget => {
                inner_solver::solve_subproblem(p, cfg, &state.lam, &estimate.theta, alpha, &state.x)
            }
            InnerRule::Adaptive => inner_solver::solve_subproblem_adaptive_with(
                p,
                cfg,
                &state.lam,
                &estimate.theta,
                alpha,
                &state.x,
                options.solver,
            ),
        };
        let inner = match solve {
            Ok(inner) => inner,
            Err(err) => {
                trace.status = RunStatus::Aborted { at: k, reason: err.to_string() };
                return;
            }
        };

        let at = match p.at(&estimate.theta) {
            Ok(at) => at,
            Err(err) => {
                trace.status = RunStatus::Aborted { at: k, reason: err.to_string() };
                return;
            }
        };
        at.grad_lambda_into(cfg.rho, &inner.x, &state.lam, &mut grad);
        let lam_next = multiplier_update(&state.lam, cfg, &grad);

        // Running ergodic averages: x̄ over x_0..x_k, λ̄ over λ_1..λ_{k+1}.
        if k == 0 {
            state.x_bar.copy_from(&inner.x);
            state.lam_bar.copy_from(&lam_next);
        } else {
            let w = 1.0 / (k as f64 + 1.0);
            state.x_bar.axpy(w, &inner.x, 1.0 - w);
            state.lam_bar.axpy(w, &lam_next, 1.0 - w);
        }

        let record = IterationRecord {
            k,
            alpha,
            theta_error_bound: cert.q.powi(k as i32) * cert.initial_gap,
            inner_iterations: inner.iterations,
            certified_gap: inner.certified_gap,
            lambda_norm: lam_next.norm(),
            theta_projected: estimate.projected,
            iterates: options.retain_iterates.then(|| IterateSnapshot {
                x: inner.x.as_slice().to_vec(),
                lam: lam_next.as_slice().to_vec(),
                x_bar: state.x_bar.as_slice().to_vec(),
                lam_bar: state.lam_bar.as_slice().to_vec(),
                theta: estimate.theta.as_slice().to_vec(),
            }),
        };
        trace.records.push(record);

        state.x = inner.x;
        state.lam = lam_next;
        state.theta = estimate.theta;
        state.alpha = alpha;
        state.k = k + 1;
    }
}

/// Writes the trace as CSV, one row per iteration, merging in the optional
/// diagnostics columns. The column order and float formatting are fixed, so
/// identical runs produce byte-identical files.
pub fn write_trace_csv<W: Write>(
    trace: &RunTrace,
    diagnostics: Option<&DiagnosticsTable>,
    out: &mut W,
) -> io::Result<()> {
    writeln!(
        out,
        "k,alpha,theta_error_bound,inner_iterations,certified_gap,lambda_norm,theta_projected,infeasibility,primal_gap,dual_gap_lo,dual_gap_hi"
    )?;
    let empty = Diagnostics::default();
    for (i, rec) in trace.records.iter().enumerate() {
        let diag = diagnostics
            .and_then(|d| d.rows.get(i))
            .unwrap_or(&empty);
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            rec.k,
            rec.alpha,
            rec.theta_error_bound,
            rec.inner_iterations,
            rec.certified_gap,
            rec.lambda_norm,
            rec.theta_projected,
            opt(diag.infeasibility),
            opt(diag.primal_gap),
            opt(diag.dual_gap_lo),
            opt(diag.dual_gap_hi),
        )?;
    }
    Ok(())
}

/// CSV rendering as a string; see [`write_trace_csv`].
pub fn trace_csv_string(trace: &RunTrace, diagnostics: Option<&DiagnosticsTable>) -> String {
    let mut buf = Vec::new();
    write_trace_csv(trace, diagnostics, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("CSV output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{
        AffineConstraints, Certificates, ConvexObjective, Objective, QuadraticFamily, SimpleSet,
        ThetaBox,
    };
    use nalgebra::{DMatrix, DVector};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn vec1(a: f64) -> DVector<f64> {
        DVector::from_vec(vec![a])
    }

    /// min x² s.t. a·x + b ≤ 0, X = [−10, 10], fixed θ.
    fn toy_problem(a: f64, b: f64) -> MisspecifiedProblem {
        let quad = QuadraticFamily::constant(
            DMatrix::from_row_slice(1, 1, &[2.0]),
            DVector::zeros(1),
            1,
        )
        .unwrap();
        let constraints = AffineConstraints::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            vec![DMatrix::zeros(1, 1)],
            vec1(b),
            vec![DVector::zeros(1)],
        )
        .unwrap();
        MisspecifiedProblem::new(
            Objective::Quadratic(quad),
            constraints,
            SimpleSet::unit_box(1, 10.0),
            ThetaBox::new(vec![0.0], vec![0.0]).unwrap(),
            Certificates::new(0.0, 2.0, 2.0, 0.0).unwrap(),
        )
        .unwrap()
    }

    fn fixed_theta_sequence() -> LearningSequence {
        LearningSequence::geometric(
            ThetaBox::new(vec![0.0], vec![0.0]).unwrap(),
            vec1(0.0),
            vec1(0.0),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn slack_constraints_leave_multipliers_at_zero() {
        let p = toy_problem(1.0, -10.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let outcome = run(&p, &Penalty::new(1.0).unwrap(), &seq, &sched, 60).unwrap();
        assert!(outcome.is_complete());
        assert_eq!(outcome.state.lam[0], 0.0);
        for rec in &outcome.trace.records {
            assert_eq!(rec.lambda_norm, 0.0);
        }
        let alpha_last = sched.alpha(59);
        assert!(outcome.state.x[0].abs() <= alpha_last.sqrt() + 1e-9);
    }

    #[test]
    fn binding_constraint_converges_to_kkt_point() {
        // min x² s.t. 1 − x ≤ 0: λ* = 2, x* = 1, f* = 1. The dual prox-point
        // map contracts at rate 2/3 here, so 300 iterations are plenty.
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let outcome = run(&p, &Penalty::new(1.0).unwrap(), &seq, &sched, 300).unwrap();
        assert!(outcome.is_complete());
        assert!((outcome.state.lam[0] - 2.0).abs() < 1e-2, "lam = {}", outcome.state.lam[0]);
        assert!((outcome.state.x_bar[0] - 1.0).abs() < 2e-2, "x_bar = {}", outcome.state.x_bar[0]);
        assert!((outcome.state.x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn first_iteration_unrolls_to_ops_composition() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 1).unwrap();
        assert_eq!(outcome.trace.records.len(), 1);

        // Replay the same composition by hand.
        let theta = seq.next_estimate(0);
        let warm = p.set.project(&DVector::zeros(1)).unwrap();
        let inner = crate::inner_solver::solve_subproblem_adaptive(
            &p,
            &cfg,
            &vec1(0.0),
            &theta,
            sched.alpha(0),
            &warm,
        )
        .unwrap();
        let grad =
            crate::problem::grad_lambda_aug_lagrangian(&p, &cfg, &inner.x, &vec1(0.0), &theta)
                .unwrap();
        let lam_1 = multiplier_update(&vec1(0.0), &cfg, &grad);
        assert_eq!(outcome.state.lam, lam_1);
        assert_eq!(outcome.state.x, inner.x);
    }

    #[test]
    fn resume_is_bit_identical_to_longer_run() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let full = run(&p, &cfg, &seq, &sched, 15).unwrap();
        let short = run(&p, &cfg, &seq, &sched, 10).unwrap();
        let resumed = resume(&p, &cfg, &seq, &sched, &short.state, &short.trace, 5).unwrap();
        assert_eq!(resumed.trace, full.trace, "traces differ");
        assert_eq!(resumed.state, full.state, "states differ");
        assert_eq!(
            trace_csv_string(&resumed.trace, None),
            trace_csv_string(&full.trace, None)
        );
    }

    #[test]
    fn resume_zero_is_identity() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 5).unwrap();
        let resumed = resume(&p, &cfg, &seq, &sched, &outcome.state, &outcome.trace, 0).unwrap();
        assert_eq!(resumed.state, outcome.state);
        assert_eq!(resumed.trace, outcome.trace);
    }

    #[test]
    fn resume_rejects_configuration_drift() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 5).unwrap();
        let other_rho = Penalty::new(2.0).unwrap();
        let err = resume(&p, &other_rho, &seq, &sched, &outcome.state, &outcome.trace, 5);
        assert!(matches!(err, Err(Error::Config(_))));
        let other_sched = InexactnessSchedule::power(1.0, 3.0).unwrap();
        let err = resume(&p, &cfg, &seq, &other_sched, &outcome.state, &outcome.trace, 5);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    /// Objective that turns into NaN after a fixed number of evaluations,
    /// to force a mid-run abort.
    struct FailingObjective {
        calls: AtomicUsize,
        fail_after: usize,
    }

    impl ConvexObjective for FailingObjective {
        fn value(&self, x: &Decision, _theta: &ParamVector) -> f64 {
            if self.calls.fetch_add(1, Ordering::Relaxed) >= self.fail_after {
                f64::NAN
            } else {
                x.norm_squared()
            }
        }
        fn gradient(&self, x: &Decision, _theta: &ParamVector) -> DVector<f64> {
            x * 2.0
        }
        fn smoothness(&self, _theta: &ParamVector) -> Option<f64> {
            Some(2.0)
        }
    }

    #[test]
    fn aborted_run_keeps_partial_trace_and_rejects_resume() {
        let constraints = AffineConstraints::new(
            DMatrix::zeros(1, 1),
            vec![DMatrix::zeros(1, 1)],
            vec1(-1.0),
            vec![DVector::zeros(1)],
        )
        .unwrap();
        let p = MisspecifiedProblem::new(
            Objective::Plugin(std::sync::Arc::new(FailingObjective {
                calls: AtomicUsize::new(0),
                fail_after: 40,
            })),
            constraints,
            SimpleSet::unit_box(1, 10.0),
            ThetaBox::new(vec![0.0], vec![0.0]).unwrap(),
            Certificates::new(0.0, 0.0, 1.0, 0.0).unwrap(),
        )
        .unwrap();
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 50).unwrap();
        assert!(!outcome.is_complete());
        let RunStatus::Aborted { at, .. } = &outcome.trace.status else {
            panic!("expected abort")
        };
        assert_eq!(outcome.trace.records.len(), *at);
        assert!(!outcome.trace.records.is_empty(), "partial trace preserved");
        let err = resume(&p, &cfg, &seq, &sched, &outcome.state, &outcome.trace, 1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn running_averages_match_recomputation() {
        let fixture = crate::benchmark::random_qp(3, 2, 2, 4).unwrap();
        let theta_box = fixture.problem.theta_box.clone();
        let theta_star = fixture.theta_star.clone();
        let theta_0 = theta_box.project(&(&theta_star + DVector::from_element(2, 0.4)));
        let seq = LearningSequence::geometric(theta_box, theta_star, theta_0, 0.8).unwrap();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&fixture.problem, &cfg, &seq, &sched, 80).unwrap();
        assert!(outcome.is_complete());

        let mut sum_x = DVector::zeros(3);
        let mut sum_lam = DVector::zeros(2);
        for (i, rec) in outcome.trace.records.iter().enumerate() {
            let snap = rec.iterates.as_ref().unwrap();
            sum_x += DVector::from_vec(snap.x.clone());
            sum_lam += DVector::from_vec(snap.lam.clone());
            let count = (i + 1) as f64;
            let x_bar = DVector::from_vec(snap.x_bar.clone());
            let lam_bar = DVector::from_vec(snap.lam_bar.clone());
            assert!((&sum_x / count - x_bar).amax() < 1e-12);
            assert!((&sum_lam / count - lam_bar).amax() < 1e-12);
            // Multipliers stay entrywise nonnegative.
            assert!(snap.lam.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn multiplier_drift_bounded_per_iteration() {
        // Theorem-1-proof step at fixed θ = θ*:
        // ‖λ_{i+1} − λ*‖ − ‖λ_i − λ*‖ ≤ √(2ρ·α_i).
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 100).unwrap();
        let gt = crate::analysis::oracle::solve_ground_truth(&p, &vec1(0.0)).unwrap();
        let mut prev = (DVector::<f64>::zeros(1) - &gt.lambda_star).norm();
        for rec in &outcome.trace.records {
            let lam = DVector::from_vec(rec.iterates.as_ref().unwrap().lam.clone());
            let dist = (&lam - &gt.lambda_star).norm();
            let allowed = (2.0 * cfg.rho * rec.certified_gap).sqrt() + 1e-12;
            assert!(
                dist - prev <= allowed,
                "k = {}: drift {} exceeds {allowed}",
                rec.k,
                dist - prev
            );
            prev = dist;
        }
    }

    #[test]
    fn memory_lean_mode_drops_snapshots() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let options = RunOptions { retain_iterates: false, ..RunOptions::default() };
        let outcome = run_with(&p, &cfg, &seq, &sched, 5, options).unwrap();
        assert!(outcome.trace.records.iter().all(|r| r.iterates.is_none()));
        assert!(outcome.trace.snapshot(0).is_err());
    }

    #[test]
    fn trace_json_round_trip() {
        let p = toy_problem(-1.0, 1.0);
        let seq = fixed_theta_sequence();
        let sched = InexactnessSchedule::default_power();
        let cfg = Penalty::new(1.0).unwrap();
        let outcome = run(&p, &cfg, &seq, &sched, 4).unwrap();
        let json = outcome.trace.to_json().unwrap();
        let back = RunTrace::from_json(&json).unwrap();
        assert_eq!(back, outcome.trace);
    }
}
