//! Seeded benchmark problem generators for the verification harness.
//!
//! Instances are deterministic functions of the seed (ChaCha8 stream), keep
//! Q(θ) positive definite over all of Θ by construction, and record a point
//! that is strictly feasible for every θ ∈ Θ. The constraint matrix A is held
//! constant in θ (only b varies): with a strongly convex objective this makes
//! the pseudo-Lipschitz certificate κ_X rigorous — the Lagrangian minimizer
//! map is single-valued and its θ-perturbation is uniform in λ.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{
    AffineConstraints, Certificates, Decision, MisspecifiedProblem, Objective, ParamVector,
    QuadraticFamily, SimpleSet, ThetaBox,
};

/// Benchmark families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkKind {
    RandomQp { n: usize, m: usize, d: usize },
    /// Quadratic risk objective over the unit simplex with sector-cap
    /// constraints and a misspecified covariance.
    Portfolio { n: usize },
}

/// A generated problem plus its test-only fixture data.
#[derive(Debug, Clone)]
pub struct BenchmarkFixture {
    pub problem: MisspecifiedProblem,
    pub theta_star: ParamVector,
    /// Strictly feasible for every θ ∈ Θ.
    pub strictly_feasible: Decision,
}

/// Serialized fixture (kept separate from the problem document; θ* is
/// test-only data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureJson {
    pub theta_star: Vec<f64>,
    pub strictly_feasible: Vec<f64>,
}

impl BenchmarkFixture {
    pub fn fixture_json(&self) -> Result<String> {
        let doc = FixtureJson {
            theta_star: self.theta_star.as_slice().to_vec(),
            strictly_feasible: self.strictly_feasible.as_slice().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Generates a deterministic instance of the requested family.
pub fn generate(kind: &BenchmarkKind, seed: u64) -> Result<BenchmarkFixture> {
    match *kind {
        BenchmarkKind::RandomQp { n, m, d } => random_qp(n, m, d, seed),
        BenchmarkKind::Portfolio { n } => portfolio(n, seed),
    }
}

fn unif(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    // Row-major fill order so the stream layout matches the JSON layout.
    let entries: Vec<f64> = (0..rows * cols).map(|_| unif(rng, -scale, scale)).collect();
    DMatrix::from_row_slice(rows, cols, &entries)
}

fn random_vector(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| unif(rng, lo, hi))
}

/// Rank-one PSD θ-perturbations with spectral norms summing to
/// `total_spectral`, so λ_min(Q(θ)) ≥ λ_min(Q0) − total_spectral over
/// Θ ⊆ [−1,1]^d.
fn psd_perturbations(
    rng: &mut ChaCha8Rng,
    n: usize,
    d: usize,
    total_spectral: f64,
) -> Vec<DMatrix<f64>> {
    let each = total_spectral / d as f64;
    (0..d)
        .map(|_| {
            let v = random_vector(rng, n, -1.0, 1.0);
            let norm_sq = v.norm_squared().max(1e-12);
            (&v * v.transpose()) * (each / norm_sq)
        })
        .collect()
}

/// κ_X from strong convexity: for constant A, the Lagrangian minimizer map
/// satisfies ‖x*(λ;θ₁) − x*(λ;θ₂)‖ ≤ max_X‖ΔQ·x + Δc‖/μ ≤ κ_X‖θ₁ − θ₂‖
/// uniformly in λ, with μ = min over Θ-vertices of λ_min(Q(θ)).
fn kappa_from_strong_convexity(
    quad: &QuadraticFamily,
    constraints: &AffineConstraints,
    set: &SimpleSet,
    theta_box: &ThetaBox,
) -> Result<f64> {
    if !constraints.ak.iter().all(|a| a.amax() == 0.0) {
        return Err(Error::Config(
            "kappa_x from strong convexity requires A constant in theta".into(),
        ));
    }
    let mu = theta_box
        .vertices()
        .iter()
        .map(|t| quad.q_at(t).symmetric_eigen().eigenvalues.min())
        .fold(f64::INFINITY, f64::min);
    if mu <= 0.0 {
        return Err(Error::Config(format!(
            "kappa_x from strong convexity requires lambda_min(Q) > 0 over Theta, got {mu:.3e}"
        )));
    }
    let r_x = set
        .max_norm()
        .ok_or_else(|| Error::Config("compact X required".into()))?;
    let q_spread: f64 = quad
        .qk
        .iter()
        .map(|qi| {
            let sv = qi.clone().svd(false, false).singular_values;
            sv.iter().cloned().fold(0.0, f64::max).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let c_spread: f64 = quad.ck.iter().map(|ci| ci.norm_squared()).sum::<f64>().sqrt();
    Ok((q_spread * r_x + c_spread) / mu)
}

fn guard_sizes(n: usize, m: usize, d: usize, facets: usize) -> Result<()> {
    if n == 0 || m == 0 || d == 0 {
        return Err(Error::Config("n, m, d must be positive".into()));
    }
    if d > 8 {
        return Err(Error::Config(format!("d = {d} exceeds the generator limit 8")));
    }
    if m + facets > 20 {
        return Err(Error::Config(format!(
            "m + facet count = {} exceeds the oracle size guard 20",
            m + facets
        )));
    }
    Ok(())
}

/// Random strictly convex QP over the box [−2, 2]^n with m constraints whose
/// levels (and the objective) move with θ.
pub fn random_qp(n: usize, m: usize, d: usize, seed: u64) -> Result<BenchmarkFixture> {
    guard_sizes(n, m, d, 2 * n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let theta_box = ThetaBox::symmetric(d, 1.0)?;
    let set = SimpleSet::unit_box(n, 2.0);

    let b_factor = random_matrix(&mut rng, n, n, 1.0);
    let q0 = b_factor.transpose() * &b_factor + DMatrix::<f64>::identity(n, n) * 0.5;
    let qk = psd_perturbations(&mut rng, n, d, 0.25);

    // Constraint rows; A is constant in θ (see module docs), levels b(θ) move.
    let a0 = random_matrix(&mut rng, m, n, 1.0);
    let margin = 0.5;
    let b0 = DVector::from_element(m, -margin);
    let bk: Vec<DVector<f64>> = (0..d)
        .map(|_| random_vector(&mut rng, m, -margin / (4.0 * d as f64), margin / (4.0 * d as f64)))
        .collect();

    // Aim the unconstrained minimizer beyond the first constraint plane so the
    // parametrized constraints are typically active at the optimum.
    let mut direction = DVector::zeros(n);
    for i in 0..m {
        let row = a0.row(i).transpose();
        direction += row;
    }
    let dir_norm = direction.norm().max(1e-9);
    direction /= dir_norm;
    let target = &direction * 1.5;
    let mut c0 = -(&q0 * &target);
    c0 += random_vector(&mut rng, n, -0.2, 0.2);
    let ck: Vec<DVector<f64>> = (0..d).map(|_| random_vector(&mut rng, n, -0.3, 0.3)).collect();

    let quad = QuadraticFamily::new(q0, qk, c0, ck)?;
    let constraints = AffineConstraints::new(
        a0,
        vec![DMatrix::zeros(m, n); d],
        b0,
        bk,
    )?;
    let kappa_x = kappa_from_strong_convexity(&quad, &constraints, &set, &theta_box)?;
    let certificates =
        Certificates::for_affine_family(&quad, &constraints, &set, &theta_box, kappa_x)?;
    let problem = MisspecifiedProblem::new(
        Objective::Quadratic(quad),
        constraints,
        set,
        theta_box,
        certificates,
    )?;

    let theta_star = random_vector(&mut rng, d, -0.5, 0.5);
    Ok(BenchmarkFixture {
        problem,
        theta_star,
        // h(0;θ) = b(θ) ≤ −margin + Σ|θ_i|·‖bk_i‖_∞ < 0 over Θ.
        strictly_feasible: DVector::zeros(n),
    })
}

/// Markowitz-style allocation: quadratic risk over the unit simplex, two
/// sector-cap constraints, covariance misspecified through θ.
pub fn portfolio(n: usize, seed: u64) -> Result<BenchmarkFixture> {
    let d = 2;
    let m = 2;
    guard_sizes(n, m, d, n)?;
    if n < 2 {
        return Err(Error::Config("portfolio needs at least two assets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let theta_box = ThetaBox::symmetric(d, 1.0)?;
    let set = SimpleSet::Simplex { dim: n, radius: 1.0 };

    let b_factor = random_matrix(&mut rng, n, n, 1.0);
    let q0 = (b_factor.transpose() * &b_factor) / n as f64 + DMatrix::<f64>::identity(n, n) * 0.25;
    let qk = psd_perturbations(&mut rng, n, d, 0.1);

    let risk_tradeoff = 1.0;
    let mu = random_vector(&mut rng, n, 0.0, 1.0);
    let c0 = -mu * risk_tradeoff;
    let ck: Vec<DVector<f64>> = (0..d).map(|_| random_vector(&mut rng, n, -0.05, 0.05)).collect();

    // Round-robin sector split with caps above the uniform allocation.
    let mut a0 = DMatrix::zeros(m, n);
    let mut sector_size = vec![0usize; m];
    for i in 0..n {
        a0[(i % m, i)] = 1.0;
        sector_size[i % m] += 1;
    }
    let b0 = DVector::from_fn(m, |j, _| -(sector_size[j] as f64 / n as f64 + 0.15));
    let bk: Vec<DVector<f64>> =
        (0..d).map(|_| random_vector(&mut rng, m, -0.025, 0.025)).collect();

    let quad = QuadraticFamily::new(q0, qk, c0, ck)?;
    let constraints = AffineConstraints::new(a0, vec![DMatrix::zeros(m, n); d], b0, bk)?;
    let kappa_x = kappa_from_strong_convexity(&quad, &constraints, &set, &theta_box)?;
    let certificates =
        Certificates::for_affine_family(&quad, &constraints, &set, &theta_box, kappa_x)?;
    let problem = MisspecifiedProblem::new(
        Objective::Quadratic(quad),
        constraints,
        set,
        theta_box,
        certificates,
    )?;

    let theta_star = random_vector(&mut rng, d, -0.5, 0.5);
    Ok(BenchmarkFixture {
        problem,
        theta_star,
        strictly_feasible: DVector::from_element(n, 1.0 / n as f64),
    })
}
