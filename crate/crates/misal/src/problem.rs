//! Parametrized problem model and augmented Lagrangian machinery.
//!
//! The problem family is
//!
//! ```text
//!     minimize   f(x; θ) = ½ xᵀQ(θ)x + c(θ)ᵀx     (or a convex plugin)
//!     subject to h(x; θ) = A(θ)x + b(θ) ≤ 0,   x ∈ X,
//! ```
//!
//! where every data item depends affinely on a parameter vector θ drawn from a
//! compact box Θ. For a penalty ρ > 0 the augmented Lagrangian has the closed
//! form
//!
//! ```text
//!     L_ρ(x, λ; θ) = f(x; θ) + (ρ/2)·d²(λ/ρ + h(x; θ)) − ‖λ‖²/(2ρ),
//! ```
//!
//! with `d` the Euclidean distance to the nonpositive orthant, and its
//! λ-gradient is `max(h_j, −λ_j/ρ)` componentwise.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Primal decision vector (dimension n).
pub type Decision = DVector<f64>;
/// Dual multiplier vector (dimension m).
pub type Multiplier = DVector<f64>;
/// Parameter vector θ (dimension d).
pub type ParamVector = DVector<f64>;

pub(crate) fn check_dim(name: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Dimension(format!("{name}: got {got}, expected {want}")))
    }
}

pub(crate) fn check_finite(name: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{name} contains non-finite entries")))
    }
}

fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Simple feasible sets
// ---------------------------------------------------------------------------

/// A projectable simple set X.
#[derive(Debug, Clone, PartialEq)]
pub enum SimpleSet {
    WholeSpace { dim: usize },
    Box { lower: DVector<f64>, upper: DVector<f64> },
    /// `{x ≥ 0, Σ x_i = radius}`.
    Simplex { dim: usize, radius: f64 },
    Ball { center: DVector<f64>, radius: f64 },
}

impl SimpleSet {
    pub fn unit_box(dim: usize, half_width: f64) -> Self {
        SimpleSet::Box {
            lower: DVector::from_element(dim, -half_width),
            upper: DVector::from_element(dim, half_width),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SimpleSet::WholeSpace { dim } | SimpleSet::Simplex { dim, .. } => *dim,
            SimpleSet::Box { lower, .. } => lower.len(),
            SimpleSet::Ball { center, .. } => center.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimpleSet::WholeSpace { dim } | SimpleSet::Simplex { dim, .. } if *dim == 0 => {
                Err(Error::Config("set dimension must be positive".into()))
            }
            SimpleSet::Box { lower, upper } => {
                check_dim("box bounds", upper.len(), lower.len())?;
                check_finite("box lower", lower)?;
                check_finite("box upper", upper)?;
                if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
                    return Err(Error::Config("box has lower > upper".into()));
                }
                Ok(())
            }
            SimpleSet::Simplex { radius, .. } => {
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(Error::Config("simplex radius must be positive".into()));
                }
                Ok(())
            }
            SimpleSet::Ball { center, radius } => {
                check_finite("ball center", center)?;
                if !radius.is_finite() || *radius <= 0.0 {
                    return Err(Error::Config("ball radius must be positive".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match self {
            SimpleSet::WholeSpace { .. } => true,
            SimpleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(xi, (l, u))| *xi >= l - tol && *xi <= u + tol),
            SimpleSet::Simplex { radius, .. } => {
                x.iter().all(|xi| *xi >= -tol) && (x.sum() - radius).abs() <= tol
            }
            SimpleSet::Ball { center, radius } => (x - center).norm() <= radius + tol,
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, point: &DVector<f64>) -> Result<Decision> {
        check_dim("projection point", point.len(), self.dim())?;
        check_finite("projection point", point)?;
        match self {
            SimpleSet::WholeSpace { .. } => Ok(point.clone()),
            SimpleSet::Box { lower, upper } => {
                let mut out = point.clone();
                for i in 0..out.len() {
                    out[i] = out[i].clamp(lower[i], upper[i]);
                }
                Ok(out)
            }
            SimpleSet::Simplex { radius, .. } => Ok(project_simplex(point, *radius)),
            SimpleSet::Ball { center, radius } => {
                let diff = point - center;
                let norm = diff.norm();
                if norm <= *radius {
                    Ok(point.clone())
                } else {
                    Ok(center + diff * (*radius / norm))
                }
            }
        }
    }

    /// Diameter of the set; `None` for the whole space.
    pub fn diameter(&self) -> Option<f64> {
        match self {
            SimpleSet::WholeSpace { .. } => None,
            SimpleSet::Box { lower, upper } => Some((upper - lower).norm()),
            SimpleSet::Simplex { radius, .. } => Some(radius * 2f64.sqrt()),
            SimpleSet::Ball { radius, .. } => Some(2.0 * radius),
        }
    }

    /// `max_{x ∈ X} ‖x‖`; `None` for the whole space.
    pub fn max_norm(&self) -> Option<f64> {
        match self {
            SimpleSet::WholeSpace { .. } => None,
            SimpleSet::Box { lower, upper } => Some(
                lower
                    .iter()
                    .zip(upper.iter())
                    .map(|(l, u)| l.abs().max(u.abs()).powi(2))
                    .sum::<f64>()
                    .sqrt(),
            ),
            SimpleSet::Simplex { radius, .. } => Some(*radius),
            SimpleSet::Ball { center, radius } => Some(center.norm() + radius),
        }
    }

    /// Extreme points, for kinds with finitely many (box, simplex).
    pub fn vertices(&self) -> Option<Vec<DVector<f64>>> {
        match self {
            SimpleSet::Box { lower, upper } => {
                let n = lower.len();
                if n > 16 {
                    return None;
                }
                let mut out = Vec::with_capacity(1 << n);
                for mask in 0u64..(1 << n) {
                    let v = DVector::from_fn(n, |i, _| {
                        if mask >> i & 1 == 1 {
                            upper[i]
                        } else {
                            lower[i]
                        }
                    });
                    out.push(v);
                }
                Some(out)
            }
            SimpleSet::Simplex { dim, radius } => Some(
                (0..*dim)
                    .map(|i| {
                        let mut v = DVector::zeros(*dim);
                        v[i] = *radius;
                        v
                    })
                    .collect(),
            ),
            _ => None,
        }
    }

    /// The set as `{x : Gx ≤ g, Ex = e}` for polyhedral kinds.
    pub fn polyhedron(
        &self,
    ) -> Option<(DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>)> {
        let n = self.dim();
        match self {
            SimpleSet::WholeSpace { .. } => Some((
                DMatrix::zeros(0, n),
                DVector::zeros(0),
                DMatrix::zeros(0, n),
                DVector::zeros(0),
            )),
            SimpleSet::Box { lower, upper } => {
                let mut g_mat = DMatrix::zeros(2 * n, n);
                let mut g_vec = DVector::zeros(2 * n);
                for i in 0..n {
                    g_mat[(i, i)] = 1.0;
                    g_vec[i] = upper[i];
                    g_mat[(n + i, i)] = -1.0;
                    g_vec[n + i] = -lower[i];
                }
                Some((g_mat, g_vec, DMatrix::zeros(0, n), DVector::zeros(0)))
            }
            SimpleSet::Simplex { dim, radius } => {
                let g_mat = -DMatrix::<f64>::identity(*dim, *dim);
                let g_vec = DVector::zeros(*dim);
                let e_mat = DMatrix::from_element(1, *dim, 1.0);
                let e_vec = DVector::from_element(1, *radius);
                Some((g_mat, g_vec, e_mat, e_vec))
            }
            SimpleSet::Ball { .. } => None,
        }
    }
}

/// Sort-based exact projection onto `{x ≥ 0, Σ x = r}` with the deterministic
/// threshold rule.
fn project_simplex(point: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = point.len();
    let mut sorted: Vec<f64> = point.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite entries"));
    // The candidate at j = 0 always qualifies (u₁ − (u₁ − r) = r > 0), so the
    // threshold is always set.
    let mut cumulative = 0.0;
    let mut tau = sorted[0] - radius;
    for (j, &uj) in sorted.iter().enumerate() {
        cumulative += uj;
        let t = (cumulative - radius) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            tau = t;
        }
    }
    DVector::from_fn(n, |i, _| (point[i] - tau).max(0.0))
}

/// Top-level wrapper matching the operation surface; see [`SimpleSet::project`].
pub fn project(set: &SimpleSet, point: &Decision) -> Result<Decision> {
    set.project(point)
}

// ---------------------------------------------------------------------------
// Parameter box Θ
// ---------------------------------------------------------------------------

/// The compact parameter set Θ, a coordinate box in R^d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ThetaBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("theta box bounds mismatch or empty".into()));
        }
        if lower
            .iter()
            .zip(upper.iter())
            .any(|(l, u)| !l.is_finite() || !u.is_finite() || l > u)
        {
            return Err(Error::Config("theta box requires finite lower <= upper".into()));
        }
        Ok(ThetaBox { lower, upper })
    }

    pub fn symmetric(dim: usize, half_width: f64) -> Result<Self> {
        ThetaBox::new(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &ParamVector, tol: f64) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .enumerate()
                .all(|(i, t)| *t >= self.lower[i] - tol && *t <= self.upper[i] + tol)
    }

    pub fn project(&self, theta: &ParamVector) -> ParamVector {
        DVector::from_fn(self.dim(), |i, _| theta[i].clamp(self.lower[i], self.upper[i]))
    }

    pub fn vertices(&self) -> Vec<ParamVector> {
        let d = self.dim();
        assert!(d <= 16, "theta box vertex enumeration limited to d <= 16");
        (0u64..(1 << d))
            .map(|mask| {
                DVector::from_fn(d, |i, _| {
                    if mask >> i & 1 == 1 {
                        self.upper[i]
                    } else {
                        self.lower[i]
                    }
                })
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

/// Quadratic objective family `f(x;θ) = ½ xᵀQ(θ)x + c(θ)ᵀx` with
/// `Q(θ) = Q0 + Σ θ_i Qk_i` and `c(θ) = c0 + Σ θ_i ck_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFamily {
    pub q0: DMatrix<f64>,
    pub qk: Vec<DMatrix<f64>>,
    pub c0: DVector<f64>,
    pub ck: Vec<DVector<f64>>,
}

impl QuadraticFamily {
    pub fn new(
        q0: DMatrix<f64>,
        qk: Vec<DMatrix<f64>>,
        c0: DVector<f64>,
        ck: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = c0.len();
        if q0.nrows() != n || q0.ncols() != n {
            return Err(Error::Dimension("Q0 must be n x n".into()));
        }
        if qk.len() != ck.len() {
            return Err(Error::Dimension("Qk and ck must have d entries each".into()));
        }
        for q in std::iter::once(&q0).chain(qk.iter()) {
            if q.nrows() != n || q.ncols() != n {
                return Err(Error::Dimension("Qk entry is not n x n".into()));
            }
            if (q - q.transpose()).amax() > 1e-10 {
                return Err(Error::Config("quadratic matrices must be symmetric".into()));
            }
        }
        for c in ck.iter() {
            check_dim("ck entry", c.len(), n)?;
        }
        // Symmetrize exactly so downstream eigen routines see symmetric input.
        let sym = |m: &DMatrix<f64>| (m + m.transpose()) * 0.5;
        Ok(QuadraticFamily {
            q0: sym(&q0),
            qk: qk.iter().map(sym).collect(),
            c0,
            ck,
        })
    }

    /// Constant quadratic (no θ dependence).
    pub fn constant(q0: DMatrix<f64>, c0: DVector<f64>, d: usize) -> Result<Self> {
        let n = c0.len();
        QuadraticFamily::new(
            q0,
            vec![DMatrix::zeros(n, n); d],
            c0,
            vec![DVector::zeros(n); d],
        )
    }

    pub fn dim(&self) -> usize {
        self.c0.len()
    }

    pub fn param_dim(&self) -> usize {
        self.qk.len()
    }

    pub fn q_at(&self, theta: &ParamVector) -> DMatrix<f64> {
        let mut q = self.q0.clone();
        for (qi, ti) in self.qk.iter().zip(theta.iter()) {
            q += qi * *ti;
        }
        q
    }

    pub fn c_at(&self, theta: &ParamVector) -> DVector<f64> {
        let mut c = self.c0.clone();
        for (ci, ti) in self.ck.iter().zip(theta.iter()) {
            c += ci * *ti;
        }
        c
    }

    /// Verifies Q(θ) ⪰ −tol·I at every vertex of Θ plus `samples` interior
    /// points. λ_min(Q(θ)) is concave in θ for an affine family, so the vertex
    /// minimum is the exact minimum over the box.
    pub fn verify_psd(&self, theta_box: &ThetaBox, samples: &[ParamVector]) -> Result<()> {
        let tol = 1e-10;
        for theta in theta_box.vertices().iter().chain(samples.iter()) {
            let eig = self.q_at(theta).symmetric_eigen();
            let min = eig.eigenvalues.min();
            if min < -tol {
                return Err(Error::Config(format!(
                    "Q(theta) not PSD: lambda_min = {min:.3e} at theta = {:?}",
                    theta.as_slice()
                )));
            }
        }
        Ok(())
    }
}

/// General convex objective plugin, for problems outside the quadratic family.
pub trait ConvexObjective: Send + Sync {
    fn value(&self, x: &Decision, theta: &ParamVector) -> f64;
    fn gradient(&self, x: &Decision, theta: &ParamVector) -> DVector<f64>;
    /// Upper bound on the x-gradient Lipschitz constant at `theta`, if known.
    fn smoothness(&self, theta: &ParamVector) -> Option<f64> {
        let _ = theta;
        None
    }
}

#[derive(Clone)]
pub enum Objective {
    Quadratic(QuadraticFamily),
    Plugin(Arc<dyn ConvexObjective>),
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::Quadratic(q) => write!(f, "Quadratic(n={})", q.dim()),
            Objective::Plugin(_) => write!(f, "Plugin"),
        }
    }
}

// ---------------------------------------------------------------------------
// Affine constraint map
// ---------------------------------------------------------------------------

/// `h(x;θ) = A(θ)x + b(θ)` with `A(θ) = A0 + Σ θ_i Ak_i`, `b(θ) = b0 + Σ θ_i bk_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraints {
    pub a0: DMatrix<f64>,
    pub ak: Vec<DMatrix<f64>>,
    pub b0: DVector<f64>,
    pub bk: Vec<DVector<f64>>,
}

impl AffineConstraints {
    pub fn new(
        a0: DMatrix<f64>,
        ak: Vec<DMatrix<f64>>,
        b0: DVector<f64>,
        bk: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let m = b0.len();
        let n = a0.ncols();
        if a0.nrows() != m {
            return Err(Error::Dimension("A0 rows must match b0".into()));
        }
        if ak.len() != bk.len() {
            return Err(Error::Dimension("Ak and bk must have d entries each".into()));
        }
        for a in ak.iter() {
            if a.nrows() != m || a.ncols() != n {
                return Err(Error::Dimension("Ak entry is not m x n".into()));
            }
        }
        for b in bk.iter() {
            check_dim("bk entry", b.len(), m)?;
        }
        Ok(AffineConstraints { a0, ak, b0, bk })
    }

    pub fn n_constraints(&self) -> usize {
        self.b0.len()
    }

    pub fn decision_dim(&self) -> usize {
        self.a0.ncols()
    }

    pub fn param_dim(&self) -> usize {
        self.ak.len()
    }

    pub fn a_at(&self, theta: &ParamVector) -> DMatrix<f64> {
        let mut a = self.a0.clone();
        for (ai, ti) in self.ak.iter().zip(theta.iter()) {
            a += ai * *ti;
        }
        a
    }

    pub fn b_at(&self, theta: &ParamVector) -> DVector<f64> {
        let mut b = self.b0.clone();
        for (bi, ti) in self.bk.iter().zip(theta.iter()) {
            b += bi * *ti;
        }
        b
    }

    pub fn constant_in_theta(&self) -> bool {
        self.ak.iter().all(|a| a.amax() == 0.0) && self.bk.iter().all(|b| b.amax() == 0.0)
    }
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// Lipschitz certificates feeding the rate constants. All are upper bounds on
/// the corresponding exact quantities; the rate envelopes remain valid for any
/// valid upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificates {
    /// θ-Lipschitz constant of f over X: |f(x;θ₁) − f(x;θ₂)| ≤ L_f‖θ₁−θ₂‖.
    pub l_f: f64,
    /// θ-Lipschitz constant of h over X (vector norm).
    pub l_h: f64,
    /// Image bound: h(B(0,1);θ) ⊆ σ_h·B(0,1) for all θ ∈ Θ.
    pub sigma_h: f64,
    /// Pseudo-Lipschitz constant of the Lagrangian minimizer set in θ.
    /// User-supplied; not verified here.
    pub kappa_x: f64,
}

impl Certificates {
    pub fn new(l_f: f64, l_h: f64, sigma_h: f64, kappa_x: f64) -> Result<Self> {
        for (name, v) in [("l_f", l_f), ("l_h", l_h), ("sigma_h", sigma_h), ("kappa_x", kappa_x)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("certificate {name} must be a nonnegative real")));
            }
        }
        Ok(Certificates { l_f, l_h, sigma_h, kappa_x })
    }

    /// Computes L_f, L_h, σ_h for the affine/quadratic family over compact X
    /// and the box Θ. κ_X must be supplied by the caller.
    ///
    /// σ_h is maximized exactly over Θ-vertices (the map is convex in θ).
    /// L_h is maximized exactly over X-vertices when X has finitely many
    /// (‖·‖₂ of an x-affine matrix is convex in x) and bounded via the norm
    /// inequality otherwise. L_f uses the norm bound
    /// ½σ_max(Qk_i)R² + ‖ck_i‖R with R = max_{x∈X}‖x‖.
    pub fn for_affine_family(
        quad: &QuadraticFamily,
        constraints: &AffineConstraints,
        set: &SimpleSet,
        theta_box: &ThetaBox,
        kappa_x: f64,
    ) -> Result<Self> {
        let r_x = set
            .max_norm()
            .ok_or_else(|| Error::Config("certificate computation requires compact X".into()))?;

        // L_f: componentwise bound on the θ-gradient of f, which is constant in θ.
        let l_f = quad
            .qk
            .iter()
            .zip(quad.ck.iter())
            .map(|(q, c)| (0.5 * sigma_max(q) * r_x * r_x + c.norm() * r_x).powi(2))
            .sum::<f64>()
            .sqrt();

        // L_h: spectral norm of the m x d θ-Jacobian J(x) with columns Ak_i x + bk_i.
        let jac_at = |x: &DVector<f64>| -> DMatrix<f64> {
            let m = constraints.n_constraints();
            let d = constraints.param_dim();
            let mut j = DMatrix::zeros(m, d);
            for (i, (ai, bi)) in constraints.ak.iter().zip(constraints.bk.iter()).enumerate() {
                let col = ai * x + bi;
                j.set_column(i, &col);
            }
            j
        };
        let ak_all_zero = constraints.ak.iter().all(|a| a.amax() == 0.0);
        let l_h = if ak_all_zero {
            sigma_max(&jac_at(&DVector::zeros(constraints.decision_dim())))
        } else if let Some(vertices) = set.vertices() {
            vertices
                .iter()
                .map(|v| sigma_max(&jac_at(v)))
                .fold(0.0, f64::max)
        } else if let SimpleSet::Ball { center, radius } = set {
            let spread: f64 = constraints
                .ak
                .iter()
                .map(|a| sigma_max(a).powi(2))
                .sum::<f64>()
                .sqrt();
            sigma_max(&jac_at(center)) + radius * spread
        } else {
            return Err(Error::Config(
                "L_h for theta-dependent A requires a vertex-enumerable or ball X".into(),
            ));
        };

        // σ_h: max over Θ-vertices of σ_max(A(θ)) + ‖b(θ)‖ (convex in θ).
        let sigma_h = theta_box
            .vertices()
            .iter()
            .map(|t| sigma_max(&constraints.a_at(t)) + constraints.b_at(t).norm())
            .fold(0.0, f64::max);

        Certificates::new(l_f, l_h, sigma_h, kappa_x)
    }
}

// ---------------------------------------------------------------------------
// Penalty and problem
// ---------------------------------------------------------------------------

/// Constant penalty parameter ρ > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    pub rho: f64,
}

impl Penalty {
    pub fn new(rho: f64) -> Result<Self> {
        if rho.is_finite() && rho > 0.0 {
            Ok(Penalty { rho })
        } else {
            Err(Error::Config(format!("penalty rho must be a positive real, got {rho}")))
        }
    }
}

/// The full misspecified problem: objective and constraint families, the
/// feasible set X, the parameter box Θ and the Lipschitz certificates.
#[derive(Debug, Clone)]
pub struct MisspecifiedProblem {
    pub objective: Objective,
    pub constraints: AffineConstraints,
    pub set: SimpleSet,
    pub theta_box: ThetaBox,
    pub certificates: Certificates,
}

impl MisspecifiedProblem {
    pub fn new(
        objective: Objective,
        constraints: AffineConstraints,
        set: SimpleSet,
        theta_box: ThetaBox,
        certificates: Certificates,
    ) -> Result<Self> {
        set.validate()?;
        let n = set.dim();
        let d = theta_box.dim();
        check_dim("constraint columns", constraints.decision_dim(), n)?;
        check_dim("constraint theta terms", constraints.param_dim(), d)?;
        if let Objective::Quadratic(q) = &objective {
            check_dim("objective dimension", q.dim(), n)?;
            check_dim("objective theta terms", q.param_dim(), d)?;
            q.verify_psd(&theta_box, &[])?;
        }
        Ok(MisspecifiedProblem {
            objective,
            constraints,
            set,
            theta_box,
            certificates,
        })
    }

    /// Builds a quadratic-family problem and computes its certificates,
    /// leaving κ_X to the caller.
    pub fn quadratic_with_certificates(
        quad: QuadraticFamily,
        constraints: AffineConstraints,
        set: SimpleSet,
        theta_box: ThetaBox,
        kappa_x: f64,
    ) -> Result<Self> {
        let certificates =
            Certificates::for_affine_family(&quad, &constraints, &set, &theta_box, kappa_x)?;
        MisspecifiedProblem::new(
            Objective::Quadratic(quad),
            constraints,
            set,
            theta_box,
            certificates,
        )
    }

    pub fn decision_dim(&self) -> usize {
        self.set.dim()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.n_constraints()
    }

    pub fn param_dim(&self) -> usize {
        self.theta_box.dim()
    }

    /// Materializes the problem data at a fixed θ for repeated evaluation.
    pub fn at(&self, theta: &ParamVector) -> Result<ProblemAt<'_>> {
        check_dim("theta", theta.len(), self.param_dim())?;
        check_finite("theta", theta)?;
        let (q, c) = match &self.objective {
            Objective::Quadratic(quad) => (Some(quad.q_at(theta)), Some(quad.c_at(theta))),
            Objective::Plugin(_) => (None, None),
        };
        Ok(ProblemAt {
            problem: self,
            theta: theta.clone(),
            q,
            c,
            a: self.constraints.a_at(theta),
            b: self.constraints.b_at(theta),
        })
    }
}

/// Problem data materialized at a fixed θ. All hot-loop evaluation goes
/// through this type so the affine assembly happens once per θ.
pub struct ProblemAt<'a> {
    pub problem: &'a MisspecifiedProblem,
    pub theta: ParamVector,
    /// Q(θ), c(θ); `None` for plugin objectives.
    pub q: Option<DMatrix<f64>>,
    pub c: Option<DVector<f64>>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ProblemAt<'_> {
    pub fn decision_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, x: &Decision) -> f64 {
        match (&self.q, &self.c) {
            (Some(q), Some(c)) => {
                let qx = q * x;
                0.5 * x.dot(&qx) + c.dot(x)
            }
            _ => match &self.problem.objective {
                Objective::Plugin(p) => p.value(x, &self.theta),
                Objective::Quadratic(_) => unreachable!(),
            },
        }
    }

    /// Overwrites `out` with ∇_x f(x;θ).
    pub fn objective_grad_into(&self, x: &Decision, out: &mut DVector<f64>) {
        match (&self.q, &self.c) {
            (Some(q), Some(c)) => {
                out.copy_from(c);
                out.gemv(1.0, q, x, 1.0);
            }
            _ => match &self.problem.objective {
                Objective::Plugin(p) => out.copy_from(&p.gradient(x, &self.theta)),
                Objective::Quadratic(_) => unreachable!(),
            },
        }
    }

    /// Overwrites `out` with h(x;θ) = A(θ)x + b(θ).
    pub fn constraint_into(&self, x: &Decision, out: &mut DVector<f64>) {
        out.copy_from(&self.b);
        out.gemv(1.0, &self.a, x, 1.0);
    }

    pub fn constraint(&self, x: &Decision) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_constraints());
        self.constraint_into(x, &mut out);
        out
    }

    /// L_ρ(x, λ; θ) in the closed distance-squared form.
    pub fn aug_lagrangian(&self, rho: f64, x: &Decision, lam: &Multiplier) -> f64 {
        let mut v = self.constraint(x);
        let mut dist_sq = 0.0;
        for j in 0..v.len() {
            let vj = lam[j] / rho + v[j];
            let pos = vj.max(0.0);
            dist_sq += pos * pos;
            v[j] = vj;
        }
        self.objective(x) + 0.5 * rho * dist_sq - lam.norm_squared() / (2.0 * rho)
    }

    /// Overwrites `out` with ∇_λ L_ρ(x, λ; θ) = max(h_j, −λ_j/ρ) componentwise.
    pub fn grad_lambda_into(&self, rho: f64, x: &Decision, lam: &Multiplier, out: &mut DVector<f64>) {
        self.constraint_into(x, out);
        for j in 0..out.len() {
            out[j] = out[j].max(-lam[j] / rho);
        }
    }

    /// Overwrites `grad` with ∇_x L_ρ(x, λ; θ), using `ws_m` as an m-vector
    /// workspace.
    pub fn grad_x_into(
        &self,
        rho: f64,
        x: &Decision,
        lam: &Multiplier,
        ws_m: &mut DVector<f64>,
        grad: &mut DVector<f64>,
    ) {
        self.constraint_into(x, ws_m);
        for j in 0..ws_m.len() {
            ws_m[j] = (lam[j] / rho + ws_m[j]).max(0.0);
        }
        self.objective_grad_into(x, grad);
        grad.gemv_tr(rho, &self.a, ws_m, 1.0);
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Euclidean distance of `v` to the nonpositive orthant: ‖max(v, 0)‖.
pub fn dist_to_nonpos_orthant(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.max(0.0).powi(2)).sum::<f64>().sqrt()
}

fn check_xl(p: &MisspecifiedProblem, x: &Decision, lam: &Multiplier) -> Result<()> {
    check_dim("x", x.len(), p.decision_dim())?;
    check_dim("lambda", lam.len(), p.n_constraints())?;
    check_finite("x", x)?;
    check_finite("lambda", lam)
}

/// Evaluates the closed-form augmented Lagrangian L_ρ(x, λ; θ).
pub fn eval_aug_lagrangian(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    x: &Decision,
    lam: &Multiplier,
    theta: &ParamVector,
) -> Result<f64> {
    check_xl(p, x, lam)?;
    Ok(p.at(theta)?.aug_lagrangian(cfg.rho, x, lam))
}

/// ∇_λ L_ρ(x, λ; θ) = h(x;θ) + Π_{R^m_+}(−λ/ρ − h(x;θ)) = max(h_j, −λ_j/ρ).
pub fn grad_lambda_aug_lagrangian(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    x: &Decision,
    lam: &Multiplier,
    theta: &ParamVector,
) -> Result<Multiplier> {
    check_xl(p, x, lam)?;
    let at = p.at(theta)?;
    let mut out = DVector::zeros(p.n_constraints());
    at.grad_lambda_into(cfg.rho, x, lam, &mut out);
    Ok(out)
}

/// Multiplier ascent step λ + ρ·grad, computed in the factored form
/// ρ·(λ/ρ + grad). With the λ-gradient above this equals
/// ρ·Π_{R^m_+}(λ/ρ + h) componentwise: the gradient's −λ_j/ρ branch cancels
/// the same computed quotient exactly, so composed updates stay nonnegative
/// in floating point.
pub fn multiplier_update(lam: &Multiplier, cfg: &Penalty, grad: &DVector<f64>) -> Multiplier {
    DVector::from_fn(lam.len(), |j, _| cfg.rho * (lam[j] / cfg.rho + grad[j]))
}

/// Inexact proximal map of the ordinary dual: λ + ρ∇_λ L_ρ(x̃, λ; θ) with x̃
/// an `inner_tol`-certified minimizer of L_ρ(·, λ; θ) over X. The distance to
/// the exact prox is at most ρ·√(2·inner_tol/ρ).
pub fn prox_map(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    inner_tol: f64,
) -> Result<Multiplier> {
    if !(inner_tol.is_finite() && inner_tol > 0.0) {
        return Err(Error::Config("inner_tol must be positive".into()));
    }
    check_dim("lambda", lam.len(), p.n_constraints())?;
    let warm = p.set.project(&DVector::zeros(p.decision_dim()))?;
    let result = crate::inner_solver::solve_subproblem_adaptive(p, cfg, lam, theta, inner_tol, &warm)?;
    let at = p.at(theta)?;
    let mut grad = DVector::zeros(p.n_constraints());
    at.grad_lambda_into(cfg.rho, &result.x, lam, &mut grad);
    Ok(multiplier_update(lam, cfg, &grad))
}

/// Brackets the dual value g_ρ(λ;θ) = inf_{x∈X} L_ρ(x,λ;θ) via a certified
/// inner solve: returns `(value − certified_gap, value)`, so the bracket
/// contains g_ρ(λ;θ) and its width never exceeds `inner_tol`.
pub fn eval_dual(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    inner_tol: f64,
) -> Result<(f64, f64)> {
    let warm = p.set.project(&DVector::zeros(p.decision_dim()))?;
    eval_dual_from(p, cfg, lam, theta, inner_tol, &warm).map(|(lo, hi, _)| (lo, hi))
}

/// Same as [`eval_dual`] but warm-started; also returns the certified
/// minimizer for reuse.
pub fn eval_dual_from(
    p: &MisspecifiedProblem,
    cfg: &Penalty,
    lam: &Multiplier,
    theta: &ParamVector,
    inner_tol: f64,
    warm: &Decision,
) -> Result<(f64, f64, Decision)> {
    if !(inner_tol.is_finite() && inner_tol > 0.0) {
        return Err(Error::Config("inner_tol must be positive".into()));
    }
    check_dim("lambda", lam.len(), p.n_constraints())?;
    let result = crate::inner_solver::solve_subproblem_adaptive(p, cfg, lam, theta, inner_tol, warm)?;
    let value = p.at(theta)?.aug_lagrangian(cfg.rho, &result.x, lam);
    Ok((value - result.certified_gap, value, result.x))
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum SetJson {
    WholeSpace { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Simplex { dim: usize, radius: f64 },
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    n: usize,
    m: usize,
    d: usize,
    #[serde(rename = "Q0")]
    q0: Vec<Vec<f64>>,
    #[serde(rename = "Qk")]
    qk: Vec<Vec<Vec<f64>>>,
    c0: Vec<f64>,
    ck: Vec<Vec<f64>>,
    #[serde(rename = "A0")]
    a0: Vec<Vec<f64>>,
    #[serde(rename = "Ak")]
    ak: Vec<Vec<Vec<f64>>>,
    b0: Vec<f64>,
    bk: Vec<Vec<f64>>,
    set: SetJson,
    theta_box: ThetaBox,
    certificates: Certificates,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Serde(format!("{name}: expected {nrows} rows of {ncols} entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl MisspecifiedProblem {
    /// Serializes the quadratic-family problem to the interchange JSON
    /// document. Plugin objectives cannot be serialized.
    pub fn to_json(&self) -> Result<String> {
        let quad = match &self.objective {
            Objective::Quadratic(q) => q,
            Objective::Plugin(_) => {
                return Err(Error::Serde("plugin objectives are not serializable".into()))
            }
        };
        let set = match &self.set {
            SimpleSet::WholeSpace { dim } => SetJson::WholeSpace { dim: *dim },
            SimpleSet::Box { lower, upper } => SetJson::Box {
                lower: lower.as_slice().to_vec(),
                upper: upper.as_slice().to_vec(),
            },
            SimpleSet::Simplex { dim, radius } => SetJson::Simplex {
                dim: *dim,
                radius: *radius,
            },
            SimpleSet::Ball { center, radius } => SetJson::Ball {
                center: center.as_slice().to_vec(),
                radius: *radius,
            },
        };
        let doc = ProblemJson {
            n: self.decision_dim(),
            m: self.n_constraints(),
            d: self.param_dim(),
            q0: matrix_rows(&quad.q0),
            qk: quad.qk.iter().map(matrix_rows).collect(),
            c0: quad.c0.as_slice().to_vec(),
            ck: quad.ck.iter().map(|c| c.as_slice().to_vec()).collect(),
            a0: matrix_rows(&self.constraints.a0),
            ak: self.constraints.ak.iter().map(matrix_rows).collect(),
            b0: self.constraints.b0.as_slice().to_vec(),
            bk: self.constraints.bk.iter().map(|b| b.as_slice().to_vec()).collect(),
            set,
            theta_box: self.theta_box.clone(),
            certificates: self.certificates,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ProblemJson = serde_json::from_str(text)?;
        let (n, m, d) = (doc.n, doc.m, doc.d);
        if doc.qk.len() != d || doc.ck.len() != d || doc.ak.len() != d || doc.bk.len() != d {
            return Err(Error::Serde("theta-dependent arrays must have d entries".into()));
        }
        let quad = QuadraticFamily::new(
            matrix_from_rows(&doc.q0, n, n, "Q0")?,
            doc.qk
                .iter()
                .map(|q| matrix_from_rows(q, n, n, "Qk"))
                .collect::<Result<_>>()?,
            DVector::from_vec(doc.c0),
            doc.ck.into_iter().map(DVector::from_vec).collect(),
        )?;
        let constraints = AffineConstraints::new(
            matrix_from_rows(&doc.a0, m, n, "A0")?,
            doc.ak
                .iter()
                .map(|a| matrix_from_rows(a, m, n, "Ak"))
                .collect::<Result<_>>()?,
            DVector::from_vec(doc.b0),
            doc.bk.into_iter().map(DVector::from_vec).collect(),
        )?;
        let set = match doc.set {
            SetJson::WholeSpace { dim } => SimpleSet::WholeSpace { dim },
            SetJson::Box { lower, upper } => SimpleSet::Box {
                lower: DVector::from_vec(lower),
                upper: DVector::from_vec(upper),
            },
            SetJson::Simplex { dim, radius } => SimpleSet::Simplex { dim, radius },
            SetJson::Ball { center, radius } => SimpleSet::Ball {
                center: DVector::from_vec(center),
                radius,
            },
        };
        MisspecifiedProblem::new(
            Objective::Quadratic(quad),
            constraints,
            set,
            doc.theta_box,
            doc.certificates,
        )
    }
}
