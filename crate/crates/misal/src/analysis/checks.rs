//! Envelope checks: every run is verified against the four rate bounds at θ*.
//!
//! The dual value g_ρ(λ̄_k; θ*) is only bracketed (high-accuracy certified
//! inner solve), so the dual-suboptimality check compares the conservative
//! estimate f* − upper(g_ρ) against B_g/k plus the bracket width.
//! Infeasibility and the primal gap are exact evaluations and are checked at
//! every iteration; dual brackets are sampled on a geometric grid with a
//! denser tail for slope estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::driver::{Diagnostics, DiagnosticsTable, RunTrace};
use crate::error::{Error, Result};
use crate::problem::{dist_to_nonpos_orthant, eval_dual, MisspecifiedProblem, Multiplier, Penalty};

use super::{GroundTruth, RateConstants};

/// One theorem's verification record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub name: String,
    pub pass: bool,
    pub checked_ks: Vec<usize>,
    pub measured: Vec<f64>,
    pub envelope: Vec<f64>,
    /// envelope − measured (min of both sides for two-sided checks).
    pub margin: Vec<f64>,
    /// Lower envelope for the two-sided primal gap check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_envelope: Option<Vec<f64>>,
    /// max measured/envelope over everything checked (not just the grid).
    pub max_ratio: f64,
    /// Least-squares log-log slope over the last decade, when estimable.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_slope: Option<f64>,
    /// Iteration indices k where the envelope failed.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub constants: RateConstants,
    pub theorems: Vec<TheoremCheck>,
    pub pass: bool,
}

impl CheckReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn theorem(&self, name: &str) -> Option<&TheoremCheck> {
        self.theorems.iter().find(|t| t.name == name)
    }
}

/// Geometric grid {1, 2, 4, …} up to `k_max`, a denser logarithmic tail over
/// the last decade (for slope estimates), and the last ten indices.
pub fn sample_ks(k_max: usize) -> Vec<usize> {
    let mut ks = Vec::new();
    let mut k = 1usize;
    while k <= k_max {
        ks.push(k);
        k = k.saturating_mul(2);
    }
    let tail_start = (k_max / 10).max(1);
    if k_max > tail_start {
        let (lo, hi) = ((tail_start as f64).ln(), (k_max as f64).ln());
        for i in 0..12 {
            let t = lo + (hi - lo) * i as f64 / 11.0;
            ks.push(t.exp().round() as usize);
        }
    }
    for k in k_max.saturating_sub(9)..=k_max {
        if k >= 1 {
            ks.push(k);
        }
    }
    ks.sort_unstable();
    ks.dedup();
    ks.retain(|&k| k >= 1 && k <= k_max);
    ks
}

/// Least-squares slope of ln(v) against ln(k) over the last decade
/// [k_max/10, k_max]. `None` when fewer than three usable (positive) points.
fn loglog_tail_slope(points: &[(usize, f64)], k_max: usize) -> Option<f64> {
    let tail_start = (k_max / 10).max(1) as f64;
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(k, v)| (*k as f64) >= tail_start && *v > 1e-14)
        .map(|(k, v)| ((*k as f64).ln(), v.ln()))
        .collect();
    if usable.len() < 3 {
        return None;
    }
    let n = usable.len() as f64;
    let mean_x = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let cov: f64 = usable.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let var: f64 = usable.iter().map(|(x, _)| (x - mean_x).powi(2)).sum();
    (var > 0.0).then(|| cov / var)
}

fn snapshot_vector(trace: &RunTrace, record: usize, field: fn(&crate::driver::IterateSnapshot) -> &Vec<f64>) -> Result<DVector<f64>> {
    let snap = trace.snapshot(record)?;
    Ok(DVector::from_vec(field(snap).clone()))
}

/// ‖λ_k − λ*‖ ≤ C_λ for every k ≥ 1 (checked at all iterations).
pub fn check_multiplier_bound(
    trace: &RunTrace,
    gt: &GroundTruth,
    consts: &RateConstants,
) -> Result<TheoremCheck> {
    let len = trace.records.len();
    let grid = sample_ks(len);
    let mut max_ratio: f64 = 0.0;
    let mut violations = Vec::new();
    let mut by_k = Vec::with_capacity(len);
    for i in 0..len {
        let lam = snapshot_vector(trace, i, |s| &s.lam)?;
        let measured = (&lam - &gt.lambda_star).norm();
        max_ratio = max_ratio.max(measured / consts.c_lambda);
        if measured > consts.c_lambda {
            violations.push(i + 1);
        }
        by_k.push(measured); // theorem index k = i + 1
    }
    let mut checked_ks = Vec::new();
    let mut measured = Vec::new();
    let mut envelope = Vec::new();
    let mut margin = Vec::new();
    for &k in &grid {
        checked_ks.push(k);
        measured.push(by_k[k - 1]);
        envelope.push(consts.c_lambda);
        margin.push(consts.c_lambda - by_k[k - 1]);
    }
    Ok(TheoremCheck {
        name: "multiplier_bound".into(),
        pass: violations.is_empty(),
        checked_ks,
        measured,
        envelope,
        margin,
        lower_envelope: None,
        max_ratio,
        tail_slope: None,
        violations,
    })
}

/// How densely the dual brackets are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualSampling {
    /// No dual brackets.
    Skip,
    /// The geometric-plus-tail grid of [`sample_ks`].
    Sampled,
    /// Every iteration (used by the plot-data export).
    All,
}

fn dual_gap_brackets(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    ks: &[usize],
    inner_tol: f64,
    parallel: bool,
) -> Result<Vec<(usize, f64, f64)>> {
    // Cold-started reference solves: each bracket is a pure function of
    // (problem, λ̄_k, tol), so sequential and parallel output are identical.
    let solve_one = |&k: &usize| -> Result<(usize, f64, f64)> {
        let lam_bar = snapshot_vector(trace, k - 1, |s| &s.lam_bar)?;
        let (lo, hi) = eval_dual(p, cfg, &lam_bar, &gt.theta_star, inner_tol)?;
        // Bracket on the gap f* − g_ρ(λ̄_k;θ*): conservative end first.
        Ok((k, gt.f_star - hi, gt.f_star - lo))
    };
    if parallel {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            return ks.par_iter().map(solve_one).collect();
        }
    }
    ks.iter().map(solve_one).collect()
}

/// f* − g_ρ(λ̄_k;θ*) ≤ B_g/k at the sampled k, with the bracket width added
/// to the envelope.
pub fn check_dual_suboptimality(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    consts: &RateConstants,
    inner_tol: f64,
) -> Result<TheoremCheck> {
    check_dual_suboptimality_impl(trace, p, cfg, gt, consts, inner_tol, false)
}

fn check_dual_suboptimality_impl(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    consts: &RateConstants,
    inner_tol: f64,
    parallel: bool,
) -> Result<TheoremCheck> {
    let len = trace.records.len();
    let grid = sample_ks(len);
    let brackets = dual_gap_brackets(trace, p, cfg, gt, &grid, inner_tol, parallel)?;
    let mut checked_ks = Vec::new();
    let mut measured = Vec::new();
    let mut envelope = Vec::new();
    let mut margin = Vec::new();
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut slope_points = Vec::new();
    for (k, gap_lo, gap_hi) in &brackets {
        let bound = consts.b_g / *k as f64 + inner_tol;
        checked_ks.push(*k);
        measured.push(*gap_lo);
        envelope.push(bound);
        margin.push(bound - gap_lo);
        max_ratio = max_ratio.max(gap_lo / bound);
        if *gap_lo > bound {
            violations.push(*k);
        }
        slope_points.push((*k, *gap_hi));
    }
    let tail_slope = loglog_tail_slope(&slope_points, len);
    Ok(TheoremCheck {
        name: "dual_suboptimality".into(),
        pass: violations.is_empty(),
        checked_ks,
        measured,
        envelope,
        margin,
        lower_envelope: None,
        max_ratio,
        tail_slope,
        violations,
    })
}

/// d_{R^m_−}(h(x̄_k;θ*)) ≤ V(k), checked exactly at every iteration.
pub fn check_primal_infeasibility(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    gt: &GroundTruth,
    consts: &RateConstants,
) -> Result<TheoremCheck> {
    let len = trace.records.len();
    let at = p.at(&gt.theta_star)?;
    let mut h = DVector::zeros(p.n_constraints());
    let mut by_k = Vec::with_capacity(len);
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for i in 0..len {
        let x_bar = snapshot_vector(trace, i, |s| &s.x_bar)?;
        at.constraint_into(&x_bar, &mut h);
        let infeas = dist_to_nonpos_orthant(&h);
        let bound = consts.v(i);
        max_ratio = max_ratio.max(infeas / bound);
        if infeas > bound {
            violations.push(i);
        }
        by_k.push(infeas);
    }
    let grid = sample_ks(len.saturating_sub(1).max(1));
    let mut checked_ks = Vec::new();
    let mut measured = Vec::new();
    let mut envelope = Vec::new();
    let mut margin = Vec::new();
    let mut slope_points = Vec::new();
    for &k in grid.iter().filter(|&&k| k < len) {
        checked_ks.push(k);
        measured.push(by_k[k]);
        envelope.push(consts.v(k));
        margin.push(consts.v(k) - by_k[k]);
        slope_points.push((k, by_k[k]));
    }
    let tail_slope = loglog_tail_slope(&slope_points, len.saturating_sub(1));
    Ok(TheoremCheck {
        name: "primal_infeasibility".into(),
        pass: violations.is_empty(),
        checked_ks,
        measured,
        envelope,
        margin,
        lower_envelope: None,
        max_ratio,
        tail_slope,
        violations,
    })
}

/// −(ρ/2)V²(k) − ‖λ*‖V(k) ≤ f(x̄_k;θ*) − f* ≤ U/k, both sides checked at
/// every iteration (the upper side for k ≥ 1).
pub fn check_primal_suboptimality(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    gt: &GroundTruth,
    consts: &RateConstants,
) -> Result<TheoremCheck> {
    let len = trace.records.len();
    let at = p.at(&gt.theta_star)?;
    let mut by_k = Vec::with_capacity(len);
    let mut violations = Vec::new();
    let mut max_ratio: f64 = 0.0;
    for i in 0..len {
        let x_bar = snapshot_vector(trace, i, |s| &s.x_bar)?;
        let gap = at.objective(&x_bar) - gt.f_star;
        let lower = consts.primal_lower_envelope(i);
        if gap < lower {
            violations.push(i);
        }
        if i >= 1 {
            let upper = consts.u / i as f64;
            if gap > upper {
                violations.push(i);
            }
            max_ratio = max_ratio.max(gap / upper);
        }
        by_k.push(gap);
    }
    violations.dedup();
    let grid = sample_ks(len.saturating_sub(1).max(1));
    let mut checked_ks = Vec::new();
    let mut measured = Vec::new();
    let mut envelope = Vec::new();
    let mut lower_envelope = Vec::new();
    let mut margin = Vec::new();
    for &k in grid.iter().filter(|&&k| k >= 1 && k < len) {
        let upper = consts.u / k as f64;
        let lower = consts.primal_lower_envelope(k);
        checked_ks.push(k);
        measured.push(by_k[k]);
        envelope.push(upper);
        lower_envelope.push(lower);
        margin.push((upper - by_k[k]).min(by_k[k] - lower));
    }
    Ok(TheoremCheck {
        name: "primal_suboptimality".into(),
        pass: violations.is_empty(),
        checked_ks,
        measured,
        envelope,
        margin,
        lower_envelope: Some(lower_envelope),
        max_ratio,
        tail_slope: None,
        violations,
    })
}

/// Default reference accuracy for dual brackets.
pub fn default_inner_tol(consts: &RateConstants, horizon: usize) -> f64 {
    (0.01 * consts.b_g / horizon.max(1) as f64).min(1e-10)
}

fn run_all_checks_impl(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    consts: &RateConstants,
    inner_tol: Option<f64>,
    parallel: bool,
) -> Result<CheckReport> {
    if !trace.is_complete() {
        return Err(Error::Config("cannot check an aborted trace".into()));
    }
    if trace.records.is_empty() {
        return Err(Error::Config("empty trace".into()));
    }
    let tol = inner_tol.unwrap_or_else(|| default_inner_tol(consts, trace.records.len()));
    let theorems = vec![
        check_multiplier_bound(trace, gt, consts)?,
        check_dual_suboptimality_impl(trace, p, cfg, gt, consts, tol, parallel)?,
        check_primal_infeasibility(trace, p, gt, consts)?,
        check_primal_suboptimality(trace, p, gt, consts)?,
    ];
    let pass = theorems.iter().all(|t| t.pass);
    Ok(CheckReport { constants: *consts, theorems, pass })
}

/// Runs all four envelope checks sequentially.
pub fn run_all_checks(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    consts: &RateConstants,
    inner_tol: Option<f64>,
) -> Result<CheckReport> {
    run_all_checks_impl(trace, p, cfg, gt, consts, inner_tol, false)
}

/// [`run_all_checks`] with the dual reference solves fanned out over rayon;
/// identical output.
#[cfg(feature = "parallel")]
pub fn par_run_all_checks(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    consts: &RateConstants,
    inner_tol: Option<f64>,
) -> Result<CheckReport> {
    run_all_checks_impl(trace, p, cfg, gt, consts, inner_tol, true)
}

fn diagnostics_table_impl(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    dual: DualSampling,
    inner_tol: f64,
    parallel: bool,
) -> Result<DiagnosticsTable> {
    let len = trace.records.len();
    let at = p.at(&gt.theta_star)?;
    let mut h = DVector::zeros(p.n_constraints());
    let mut rows = Vec::with_capacity(len);
    for i in 0..len {
        let x_bar = snapshot_vector(trace, i, |s| &s.x_bar)?;
        at.constraint_into(&x_bar, &mut h);
        rows.push(Diagnostics {
            infeasibility: Some(dist_to_nonpos_orthant(&h)),
            primal_gap: Some(at.objective(&x_bar) - gt.f_star),
            dual_gap_lo: None,
            dual_gap_hi: None,
        });
    }
    let ks: Vec<usize> = match dual {
        DualSampling::Skip => Vec::new(),
        DualSampling::Sampled => sample_ks(len),
        DualSampling::All => (1..=len).collect(),
    };
    for (k, gap_lo, gap_hi) in dual_gap_brackets(trace, p, cfg, gt, &ks, inner_tol, parallel)? {
        rows[k - 1].dual_gap_lo = Some(gap_lo);
        rows[k - 1].dual_gap_hi = Some(gap_hi);
    }
    Ok(DiagnosticsTable { rows })
}

/// Fills the per-iteration diagnostics (infeasibility and primal gap at θ*
/// everywhere; dual gap brackets at the requested density).
pub fn diagnostics_table(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    dual: DualSampling,
    inner_tol: f64,
) -> Result<DiagnosticsTable> {
    diagnostics_table_impl(trace, p, cfg, gt, dual, inner_tol, false)
}

/// Parallel variant of [`diagnostics_table`]; identical output.
#[cfg(feature = "parallel")]
pub fn par_diagnostics_table(
    trace: &RunTrace,
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    dual: DualSampling,
    inner_tol: f64,
) -> Result<DiagnosticsTable> {
    diagnostics_table_impl(trace, p, cfg, gt, dual, inner_tol, true)
}

/// Measured ‖∇_λ L_ρ(x̃, λ; θ*)‖ against the concavity bound
/// √((2/ρ)(f* − g_ρ(λ;θ*))) with the reference-solve slack folded in.
/// Returns (measured, bound).
pub fn dual_gradient_bound(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    gt: &GroundTruth,
    lam: &Multiplier,
    ref_tol: f64,
) -> Result<(f64, f64)> {
    let warm = p.set.project(&DVector::zeros(p.decision_dim()))?;
    let (lo, _hi, x_ref) =
        crate::problem::eval_dual_from(p, cfg, lam, &gt.theta_star, ref_tol, &warm)?;
    let at = p.at(&gt.theta_star)?;
    let mut grad = DVector::zeros(p.n_constraints());
    at.grad_lambda_into(cfg.rho, &x_ref, lam, &mut grad);
    let measured = grad.norm();
    let slack = (2.0 * ref_tol / cfg.rho).sqrt();
    let bound = (2.0 / cfg.rho * (gt.f_star - lo).max(0.0)).sqrt() + slack;
    Ok((measured, bound))
}
