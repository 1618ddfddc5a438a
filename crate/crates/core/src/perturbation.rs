//! Gradient-normalized ascent perturbations and step-size/radius schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ParamVector;

/// Default division guard: below any gradient norm that matters at these scales.
pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decay {
    Constant,
    InverseSqrt,
}

impl Decay {
    pub fn factor(self, t: usize) -> f64 {
        match self {
            Decay::Constant => 1.0,
            Decay::InverseSqrt => 1.0 / (t as f64).sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decay::Constant => "constant",
            Decay::InverseSqrt => "inverse-sqrt",
        }
    }
}

impl std::str::FromStr for Decay {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constant" => Ok(Decay::Constant),
            "inverse-sqrt" => Ok(Decay::InverseSqrt),
            other => Err(format!(
                "unknown decay '{other}', expected constant or inverse-sqrt"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub rho: f64,
    pub epsilon: f64,
    pub decay: Decay,
}

impl PerturbConfig {
    pub fn new(rho: f64, epsilon: f64, decay: Decay) -> Result<Self> {
        // ρ = 0 is accepted so the zero-radius reduction can be exercised.
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "perturbation radius {rho} must be non-negative"
            )));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "epsilon {epsilon} must be non-negative"
            )));
        }
        Ok(PerturbConfig {
            rho,
            epsilon,
            decay,
        })
    }
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            rho: 0.1,
            epsilon: DEFAULT_EPSILON,
            decay: Decay::Constant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub lr: f64,
    pub decay: Decay,
}

impl ScheduleConfig {
    pub fn new(lr: f64, decay: Decay) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "learning rate {lr} must be positive"
            )));
        }
        Ok(ScheduleConfig { lr, decay })
    }
}

/// δ = ρ · g / (‖g‖ + ε).
pub fn sam_perturbation(grad: &ParamVector, rho: f64, epsilon: f64) -> Result<ParamVector> {
    if !grad.is_finite() {
        return Err(Error::NonFiniteGradient);
    }
    let norm = grad.norm();
    let denom = norm + epsilon;
    if denom == 0.0 {
        return Ok(ParamVector::zeros(grad.dim()));
    }
    Ok(grad.scaled(rho / denom))
}

/// (η_t, ρ_t) at step `t ≥ 1`.
pub fn schedule(t: usize, cfg: &ScheduleConfig, pcfg: &PerturbConfig) -> Result<(f64, f64)> {
    if t == 0 {
        return Err(Error::InvalidStep(t));
    }
    Ok((
        cfg.lr * cfg.decay.factor(t),
        pcfg.rho * pcfg.decay.factor(t),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{gaussian_vector, seeded_rng};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> ParamVector {
        ParamVector::new(x.to_vec())
    }

    #[test]
    fn perturbation_examples() {
        let d = sam_perturbation(&v(&[3.0, 4.0]), 0.1, 0.0).unwrap();
        assert!((d[0] - 0.06).abs() < 1e-15 && (d[1] - 0.08).abs() < 1e-15);

        let d = sam_perturbation(&v(&[0.0, 0.0]), 0.1, 1e-12).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 0.0]);
        let d = sam_perturbation(&v(&[0.0, 0.0]), 0.1, 0.0).unwrap();
        assert_eq!(d.as_slice(), &[0.0, 0.0]);

        let d = sam_perturbation(&v(&[1.0, 0.0]), 0.05, 0.0).unwrap();
        assert_eq!(d.as_slice(), &[0.05, 0.0]);

        assert!(matches!(
            sam_perturbation(&v(&[f64::NAN, 1.0]), 0.1, 0.0),
            Err(Error::NonFiniteGradient)
        ));
    }

    #[test]
    fn schedule_examples() {
        let s = ScheduleConfig::new(0.2, Decay::InverseSqrt).unwrap();
        let p = PerturbConfig::new(0.1, 0.0, Decay::InverseSqrt).unwrap();
        assert_eq!(schedule(1, &s, &p).unwrap(), (0.2, 0.1));
        assert_eq!(schedule(4, &s, &p).unwrap(), (0.1, 0.05));

        let s = ScheduleConfig::new(0.2, Decay::Constant).unwrap();
        let p = PerturbConfig::new(0.1, 0.0, Decay::Constant).unwrap();
        assert_eq!(schedule(100, &s, &p).unwrap(), (0.2, 0.1));
        assert!(matches!(schedule(0, &s, &p), Err(Error::InvalidStep(0))));
    }

    #[test]
    fn inverse_sqrt_is_nonincreasing() {
        let s = ScheduleConfig::new(1.0, Decay::InverseSqrt).unwrap();
        let p = PerturbConfig::new(0.5, 0.0, Decay::InverseSqrt).unwrap();
        let mut prev = schedule(1, &s, &p).unwrap();
        for t in 2..5000 {
            let cur = schedule(t, &s, &p).unwrap();
            assert!(cur.0 <= prev.0 && cur.1 <= prev.1);
            prev = cur;
        }
    }

    proptest! {
        #[test]
        fn norm_bounded_by_radius(seed in any::<u64>(), scale in 1e-8f64..1e4, rho in 1e-3f64..10.0) {
            let g = gaussian_vector(&mut seeded_rng(seed), 8).unwrap().scaled(scale);
            let d = sam_perturbation(&g, rho, 1e-12).unwrap();
            // ‖δ‖ = ρ‖g‖/(‖g‖+ε): strictly below ρ unless ε is lost to rounding.
            prop_assert!(d.norm() <= rho * (1.0 + 4.0 * f64::EPSILON));
            if 1e-12 / g.norm() > 1e-10 {
                prop_assert!(d.norm() < rho);
            }
            // Nonnegative multiple of g.
            let c = d.dot(&g) / g.norm_sq();
            prop_assert!(c >= 0.0);
            prop_assert!(d.sub(&g.scaled(c)).norm() <= 1e-12 * d.norm().max(1e-300));
        }

        #[test]
        fn rescaling_invariance(seed in any::<u64>(), c in 1e-3f64..1e3) {
            let g = gaussian_vector(&mut seeded_rng(seed), 5).unwrap();
            let a = sam_perturbation(&g, 0.1, 0.0).unwrap();
            let b = sam_perturbation(&g.scaled(c), 0.1, 0.0).unwrap();
            prop_assert!(a.sub(&b).norm() <= 1e-14);
            // With ε > 0 the scaled perturbation approaches the ε = 0 one.
            let tiny = sam_perturbation(&g.scaled(c), 0.1, 1e-12).unwrap();
            prop_assert!(tiny.sub(&a).norm() <= 0.1 * 1e-12 / (c * g.norm()) + 1e-14);
        }
    }
}
