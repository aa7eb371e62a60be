//! Ground truth, rate-bound constants, and per-theorem envelope checks.

pub mod checks;
pub mod oracle;

pub use checks::{
    check_dual_suboptimality, check_multiplier_bound, check_primal_infeasibility,
    check_primal_suboptimality, diagnostics_table, run_all_checks, sample_ks, CheckReport,
    DualSampling, TheoremCheck,
};
#[cfg(feature = "parallel")]
pub use checks::{par_diagnostics_table, par_run_all_checks};
#[cfg(feature = "parallel")]
pub use oracle::par_rejection_min;
pub use oracle::{rejection_min, solve_ground_truth, GroundTruth};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::RateCertificate;
use crate::problem::{MisspecifiedProblem, Penalty};
use crate::schedule::InexactnessSchedule;

/// Everything the bound constants are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub rho: f64,
    /// Upper bound on Σ_{k≥0} √α_k.
    pub sum_sqrt_alpha: f64,
    /// Upper bound on Σ_{k≥0} α_k.
    pub sum_alpha: f64,
    pub q: f64,
    pub initial_gap: f64,
    pub l_f: f64,
    pub l_h: f64,
    pub sigma_h: f64,
    pub kappa_x: f64,
    pub norm_lambda_star: f64,
}

/// The dual-boundedness, dual-suboptimality, infeasibility and primal
/// suboptimality constants, with the inputs they reproduce from.
///
/// Working definition M_h ≔ L_h + κ_X·σ_h (the θ-Lipschitz constant of the
/// smoothed dual gradient, which enters the multiplier recursion scaled by ρ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub c_lambda: f64,
    pub b_g: f64,
    pub c_1: f64,
    pub c_2: f64,
    pub u: f64,
    pub m_h: f64,
    pub c_bar: f64,
    pub inputs: ConstantInputs,
}

impl RateConstants {
    /// Rebuilds every constant from `inputs`; [`compute_constants`] routes
    /// through this, so stored constants always reproduce their formulas.
    pub fn from_inputs(inputs: ConstantInputs) -> Result<Self> {
        let ConstantInputs {
            rho,
            sum_sqrt_alpha,
            sum_alpha,
            q,
            initial_gap,
            l_f,
            l_h,
            sigma_h,
            kappa_x,
            norm_lambda_star,
        } = inputs;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Certification(format!("q must lie in (0, 1), got {q}")));
        }
        if !(rho > 0.0) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        if !(sum_sqrt_alpha.is_finite() && sum_alpha.is_finite()) {
            return Err(Error::Schedule("schedule sums must be finite".into()));
        }
        let m_h = l_h + kappa_x * sigma_h;
        let geo = initial_gap / (1.0 - q);
        let c_lambda = (2.0 * rho).sqrt() * sum_sqrt_alpha + rho * m_h * geo + norm_lambda_star;
        let b_g = norm_lambda_star * norm_lambda_star / (2.0 * rho)
            + c_lambda * ((2.0 / rho).sqrt() * sum_sqrt_alpha + m_h * geo);
        let c_1 = (2.0 * b_g / rho + (c_lambda / rho).powi(2)).sqrt();
        let c_2 = (2.0 / rho).sqrt() * sum_sqrt_alpha + (l_h + m_h) * geo;
        let c_bar = c_lambda + norm_lambda_star;
        let u = 0.5 * rho * l_h * l_h * initial_gap * initial_gap / (1.0 - q * q)
            + (c_bar * l_h + 2.0 * l_f) * geo
            + sum_alpha;
        Ok(RateConstants { c_lambda, b_g, c_1, c_2, u, m_h, c_bar, inputs })
    }

    /// Infeasibility envelope V(k) = C₁/√(k+1) + C₂/(k+1).
    pub fn v(&self, k: usize) -> f64 {
        let kk = k as f64 + 1.0;
        self.c_1 / kk.sqrt() + self.c_2 / kk
    }

    /// Lower envelope for the primal gap: −(ρ/2)V²(k) − ‖λ*‖V(k).
    pub fn primal_lower_envelope(&self, k: usize) -> f64 {
        let v = self.v(k);
        -0.5 * self.inputs.rho * v * v - self.inputs.norm_lambda_star * v
    }
}

/// Assembles the full constant set from the problem certificates, the penalty,
/// the schedule sums and the learning-rate certificate.
pub fn compute_constants(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    sched: &InexactnessSchedule,
    cert: &RateCertificate,
    gt: &GroundTruth,
) -> Result<RateConstants> {
    sched.validate()?;
    let certs = p.certificates;
    RateConstants::from_inputs(ConstantInputs {
        rho: cfg.rho,
        sum_sqrt_alpha: sched.sum_sqrt_alpha(),
        sum_alpha: sched.sum_alpha(),
        q: cert.q,
        initial_gap: cert.initial_gap,
        l_f: certs.l_f,
        l_h: certs.l_h,
        sigma_h: certs.sigma_h,
        kappa_x: certs.kappa_x,
        norm_lambda_star: gt.lambda_star.norm(),
    })
}
