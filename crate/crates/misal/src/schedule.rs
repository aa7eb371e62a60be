//! Inexactness schedules {α_k} with the summability requirement Σ√α_k < ∞.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-iteration inner-solve accuracy. Power schedules need p > 2 and
/// geometric schedules 0 < r < 1 so that Σ√α_k converges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InexactnessSchedule {
    /// α_k = c·(k+1)^(−p)
    Power { c: f64, p: f64 },
    /// α_k = c·r^k
    Geometric { c: f64, r: f64 },
}

impl InexactnessSchedule {
    pub fn power(c: f64, p: f64) -> Result<Self> {
        let sched = InexactnessSchedule::Power { c, p };
        sched.validate()?;
        Ok(sched)
    }

    pub fn geometric(c: f64, r: f64) -> Result<Self> {
        let sched = InexactnessSchedule::Geometric { c, r };
        sched.validate()?;
        Ok(sched)
    }

    /// Default schedule α_k = (k+1)^(−2.5).
    pub fn default_power() -> Self {
        InexactnessSchedule::Power { c: 1.0, p: 2.5 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            InexactnessSchedule::Power { c, p } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Schedule(format!("power schedule needs c > 0, got {c}")));
                }
                if !(p.is_finite() && p > 2.0) {
                    return Err(Error::Schedule(format!(
                        "power schedule needs p > 2 for summable sqrt(alpha), got {p}"
                    )));
                }
            }
            InexactnessSchedule::Geometric { c, r } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Schedule(format!("geometric schedule needs c > 0, got {c}")));
                }
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::Schedule(format!(
                        "geometric schedule needs r in (0, 1), got {r}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn alpha(&self, k: usize) -> f64 {
        match *self {
            InexactnessSchedule::Power { c, p } => c * (k as f64 + 1.0).powf(-p),
            InexactnessSchedule::Geometric { c, r } => c * r.powi(k as i32),
        }
    }

    /// Upper bound on Σ_{k≥0} √α_k: exact for geometric, integral bound
    /// √c·(1 + 1/(p/2 − 1)) for power.
    pub fn sum_sqrt_alpha(&self) -> f64 {
        match *self {
            InexactnessSchedule::Power { c, p } => c.sqrt() * (1.0 + 1.0 / (p / 2.0 - 1.0)),
            InexactnessSchedule::Geometric { c, r } => c.sqrt() / (1.0 - r.sqrt()),
        }
    }

    /// Upper bound on Σ_{k≥0} α_k: exact for geometric, integral bound for power.
    pub fn sum_alpha(&self) -> f64 {
        match *self {
            InexactnessSchedule::Power { c, p } => c * (1.0 + 1.0 / (p - 1.0)),
            InexactnessSchedule::Geometric { c, r } => c / (1.0 - r),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_below_two_rejected() {
        assert!(matches!(InexactnessSchedule::power(1.0, 1.5), Err(Error::Schedule(_))));
        assert!(matches!(InexactnessSchedule::power(1.0, 2.0), Err(Error::Schedule(_))));
    }

    #[test]
    fn geometric_ratio_validated() {
        assert!(InexactnessSchedule::geometric(0.5, 0.9).is_ok());
        assert!(matches!(InexactnessSchedule::geometric(0.5, 1.0), Err(Error::Schedule(_))));
        assert!(matches!(InexactnessSchedule::geometric(0.5, -0.1), Err(Error::Schedule(_))));
    }

    #[test]
    fn alpha_values() {
        let s = InexactnessSchedule::power(2.0, 2.5).unwrap();
        assert!((s.alpha(0) - 2.0).abs() < 1e-15);
        assert!((s.alpha(3) - 2.0 * 4f64.powf(-2.5)).abs() < 1e-15);
        let g = InexactnessSchedule::geometric(1.0, 0.5).unwrap();
        assert_eq!(g.alpha(3), 0.125);
    }

    #[test]
    fn sums_bound_partial_sums() {
        for sched in [
            InexactnessSchedule::power(1.0, 2.5).unwrap(),
            InexactnessSchedule::power(0.3, 4.0).unwrap(),
            InexactnessSchedule::geometric(2.0, 0.7).unwrap(),
        ] {
            let mut sqrt_sum = 0.0;
            let mut sum = 0.0;
            for k in 0..200_000 {
                sqrt_sum += sched.alpha(k).sqrt();
                sum += sched.alpha(k);
            }
            assert!(sqrt_sum <= sched.sum_sqrt_alpha() + 1e-9, "sqrt sum exceeds bound");
            assert!(sum <= sched.sum_alpha() + 1e-9, "sum exceeds bound");
        }
    }

    #[test]
    fn geometric_sums_are_exact() {
        let g = InexactnessSchedule::geometric(4.0, 0.25).unwrap();
        // sqrt(alpha_k) = 2 * 0.5^k sums to 4; alpha sums to 16/3.
        assert!((g.sum_sqrt_alpha() - 4.0).abs() < 1e-12);
        assert!((g.sum_alpha() - 16.0 / 3.0).abs() < 1e-12);
    }
}
