//! Parameter estimate sequences {θ_k} with a linear-rate certificate
//! ‖θ_k − θ*‖ ≤ q^k·‖θ₀ − θ*‖, under the revelation constraint that the
//! estimate for outer iteration k depends on k alone.
//!
//! θ* is a test-fixture secret: it is consumed at construction and never
//! exposed; only the rate certificate leaves this module.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::problem::{check_dim, check_finite, ParamVector, ThetaBox};

/// Linear-rate certificate (q, ‖θ₀ − θ*‖).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateCertificate {
    pub q: f64,
    pub initial_gap: f64,
}

impl RateCertificate {
    pub fn new(q: f64, initial_gap: f64) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Certification(format!("q must lie in (0, 1), got {q}")));
        }
        if !(initial_gap.is_finite() && initial_gap >= 0.0) {
            return Err(Error::Certification(format!(
                "initial gap must be a nonnegative real, got {initial_gap}"
            )));
        }
        Ok(RateCertificate { q, initial_gap })
    }
}

/// A parameter estimate together with a flag marking whether it had to be
/// projected back into Θ.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub theta: ParamVector,
    pub projected: bool,
}

#[derive(Debug, Clone)]
enum Kind {
    /// θ_k = θ* + R^k q^k (θ₀ − θ*), R orthogonal (identity by default).
    GeometricOracle {
        q: f64,
        rotation: Option<DMatrix<f64>>,
    },
    /// k-th gradient-descent iterate on ℓ(θ) = ½(θ − θ*)ᵀH(θ − θ*).
    IterativeLearner { hessian: DMatrix<f64>, step: f64 },
}

/// Source of the sequence {θ_k}; see the module docs.
#[derive(Debug, Clone)]
pub struct LearningSequence {
    kind: Kind,
    theta_box: ThetaBox,
    theta_star: ParamVector,
    theta_0: ParamVector,
    certificate: RateCertificate,
}

impl LearningSequence {
    /// Oracle sequence contracting geometrically toward θ* at rate q.
    pub fn geometric(
        theta_box: ThetaBox,
        theta_star: ParamVector,
        theta_0: ParamVector,
        q: f64,
    ) -> Result<Self> {
        Self::geometric_with_rotation(theta_box, theta_star, theta_0, q, None)
    }

    /// Geometric oracle whose error vector is additionally rotated by an
    /// orthogonal matrix each step. Rotated estimates can exit Θ; they are
    /// projected back, which preserves the rate since Θ-projection is
    /// nonexpansive and θ* ∈ Θ.
    pub fn geometric_with_rotation(
        theta_box: ThetaBox,
        theta_star: ParamVector,
        theta_0: ParamVector,
        q: f64,
        rotation: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = theta_box.dim();
        validate_thetas(&theta_box, &theta_star, &theta_0)?;
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Config(format!("geometric rate q must lie in (0, 1), got {q}")));
        }
        if let Some(r) = &rotation {
            if r.nrows() != d || r.ncols() != d {
                return Err(Error::Config("rotation must be d x d".into()));
            }
            let gram = r.transpose() * r;
            if (gram - DMatrix::<f64>::identity(d, d)).amax() > 1e-10 {
                return Err(Error::Config("rotation must be orthogonal".into()));
            }
        }
        let certificate = RateCertificate::new(q, (&theta_0 - &theta_star).norm())?;
        Ok(LearningSequence {
            kind: Kind::GeometricOracle { q, rotation },
            theta_box,
            theta_star,
            theta_0,
            certificate,
        })
    }

    /// Gradient descent with a fixed step on a strongly convex quadratic loss
    /// with Hessian `hessian` and minimizer θ*. The analytic contraction
    /// factor max_i |1 − step·eig_i| becomes the certificate rate.
    pub fn iterative(
        theta_box: ThetaBox,
        hessian: DMatrix<f64>,
        theta_star: ParamVector,
        theta_0: ParamVector,
        step: f64,
    ) -> Result<Self> {
        let d = theta_box.dim();
        validate_thetas(&theta_box, &theta_star, &theta_0)?;
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::Config("loss Hessian must be d x d".into()));
        }
        if (&hessian - hessian.transpose()).amax() > 1e-10 {
            return Err(Error::Config("loss Hessian must be symmetric".into()));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Config(format!("step size must be positive, got {step}")));
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let eigs = hessian.clone().symmetric_eigen().eigenvalues;
        if eigs.min() <= 0.0 {
            return Err(Error::Config("loss must be strongly convex (Hessian PD)".into()));
        }
        let q = eigs.iter().map(|e| (1.0 - step * e).abs()).fold(0.0, f64::max);
        if q >= 1.0 {
            return Err(Error::Certification(format!(
                "step size does not contract: max |1 - step*eig| = {q}"
            )));
        }
        // An exactly one-shot learner (identity Hessian, step 1) has spectral
        // radius 0; clamp so the certificate stays inside (0, 1).
        let q = q.max(1e-16);
        let certificate = RateCertificate::new(q, (&theta_0 - &theta_star).norm())?;
        Ok(LearningSequence {
            kind: Kind::IterativeLearner { hessian, step },
            theta_box,
            theta_star,
            theta_0,
            certificate,
        })
    }

    pub fn param_dim(&self) -> usize {
        self.theta_box.dim()
    }

    pub fn theta_box(&self) -> &ThetaBox {
        &self.theta_box
    }

    /// The analytic rate certificate.
    pub fn certificate(&self) -> RateCertificate {
        self.certificate
    }

    /// θ_k with the Θ-projection flag. Deterministic and pure in (self, k);
    /// no estimate beyond index k is consulted.
    pub fn estimate(&self, k: usize) -> Estimate {
        let error0 = &self.theta_0 - &self.theta_star;
        let raw = match &self.kind {
            Kind::GeometricOracle { q, rotation } => {
                let mut w = error0 * q.powi(k as i32);
                if let Some(r) = rotation {
                    for _ in 0..k {
                        w = r * w;
                    }
                }
                &self.theta_star + w
            }
            Kind::IterativeLearner { hessian, step } => {
                let mut w = error0;
                for _ in 0..k {
                    let hw = hessian * &w;
                    w -= hw * *step;
                }
                &self.theta_star + w
            }
        };
        if self.theta_box.contains(&raw, 0.0) {
            Estimate { theta: raw, projected: false }
        } else {
            Estimate { theta: self.theta_box.project(&raw), projected: true }
        }
    }

    /// θ_k without the projection flag.
    pub fn next_estimate(&self, k: usize) -> ParamVector {
        self.estimate(k).theta
    }

    /// Certifies the emitted prefix of length `horizon` against the geometric
    /// envelope and returns the certificate. The envelope holds analytically
    /// for both kinds; a violation indicates a misconfigured learner.
    pub fn certify(&self, horizon: usize) -> Result<RateCertificate> {
        let cert = self.certificate;
        for k in 0..=horizon {
            let theta = self.next_estimate(k);
            let err = (&theta - &self.theta_star).norm();
            let envelope = cert.q.powi(k as i32) * cert.initial_gap;
            if err > envelope * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::Certification(format!(
                    "envelope violated at k = {k}: error {err:.6e} > {envelope:.6e}"
                )));
            }
        }
        Ok(cert)
    }
}

fn validate_thetas(
    theta_box: &ThetaBox,
    theta_star: &ParamVector,
    theta_0: &ParamVector,
) -> Result<()> {
    let d = theta_box.dim();
    check_dim("theta_star", theta_star.len(), d)?;
    check_dim("theta_0", theta_0.len(), d)?;
    check_finite("theta_star", theta_star)?;
    check_finite("theta_0", theta_0)?;
    if !theta_box.contains(theta_star, 1e-12) {
        return Err(Error::Config("theta_star must lie in the theta box".into()));
    }
    if !theta_box.contains(theta_0, 1e-12) {
        return Err(Error::Config("theta_0 must lie in the theta box".into()));
    }
    Ok(())
}
