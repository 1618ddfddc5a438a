//! Curvature metric, central differences, Hessian-vector products and λ_max.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gaussian_vector, ParamVector, Rng};
use crate::objectives::Objective;
use crate::perturbation::sam_perturbation;

/// Below this gradient norm the perturbation direction is replaced by a random unit vector.
pub const GRADIENT_FLOOR: f64 = 1e-8;
pub const DEFAULT_HVP_EPS: f64 = 1e-5;
pub const DEFAULT_RHOS: [f64; 5] = [0.01, 0.05, 0.1, 0.2, 0.5];

const UNIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub rho: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub point: ParamVector,
    pub grad_sq_norm: f64,
    pub lambda_max: f64,
    pub metric_spectral: f64,
    pub metric_fd: Vec<FdEntry>,
    pub iterations: usize,
    pub converged: bool,
}

/// `(f(θ+s·u) + f(θ−s·u) − 2f(θ)) / s²` for a unit direction `u`.
pub fn directional_second_difference(
    obj: &dyn Objective,
    theta: &ParamVector,
    u: &ParamVector,
    s: f64,
) -> Result<f64> {
    theta.check_dim(u)?;
    if (u.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::InvalidDirection(format!(
            "direction has norm {}, expected 1",
            u.norm()
        )));
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::InvalidSpec(format!("step {s} must be positive")));
    }
    let plus = obj.value(&theta.add_scaled(s, u))?;
    let minus = obj.value(&theta.add_scaled(-s, u))?;
    let center = obj.value(theta)?;
    Ok((plus + minus - 2.0 * center) / (s * s))
}

/// `|f(θ+δ) + f(θ−δ) − 2f(θ)| / (‖∇f(θ)‖² + 1)` with δ the SAM perturbation.
///
/// At near-stationary points (‖∇f‖ < [`GRADIENT_FLOOR`]) δ is `ρ·u` for a
/// random unit `u` drawn from `rng`.
pub fn fd_curvature_metric(
    obj: &dyn Objective,
    theta: &ParamVector,
    rho: f64,
    epsilon: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let grad = obj.gradient(theta)?;
    let fallback = if grad.norm() < GRADIENT_FLOOR {
        Some(gaussian_vector(rng, theta.dim())?.normalized()?)
    } else {
        None
    };
    fd_metric_with(obj, theta, &grad, rho, epsilon, fallback.as_ref())
}

/// As [`fd_curvature_metric`] but with an explicit fallback direction.
pub fn fd_curvature_metric_along(
    obj: &dyn Objective,
    theta: &ParamVector,
    rho: f64,
    epsilon: f64,
    fallback: &ParamVector,
) -> Result<f64> {
    let grad = obj.gradient(theta)?;
    fd_metric_with(obj, theta, &grad, rho, epsilon, Some(fallback))
}

fn fd_metric_with(
    obj: &dyn Objective,
    theta: &ParamVector,
    grad: &ParamVector,
    rho: f64,
    epsilon: f64,
    fallback: Option<&ParamVector>,
) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidSpec(format!("radius {rho} must be positive")));
    }
    let delta = match fallback {
        Some(u) if grad.norm() < GRADIENT_FLOOR => {
            theta.check_dim(u)?;
            u.normalized()?.scaled(rho)
        }
        _ => sam_perturbation(grad, rho, epsilon)?,
    };
    let plus = obj.value(&theta.add(&delta))?;
    let minus = obj.value(&theta.sub(&delta))?;
    let center = obj.value(theta)?;
    Ok((plus + minus - 2.0 * center).abs() / (grad.norm_sq() + 1.0))
}

/// Central difference of gradients along `v̂`, rescaled by `‖v‖`.
pub fn hvp(
    obj: &dyn Objective,
    theta: &ParamVector,
    v: &ParamVector,
    eps: f64,
) -> Result<ParamVector> {
    theta.check_dim(v)?;
    let norm = v.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidDirection(format!(
            "hvp direction has norm {norm}"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "hvp step {eps} must be positive"
        )));
    }
    let unit = v.scaled(1.0 / norm);
    let gp = obj.gradient(&theta.add_scaled(eps, &unit))?;
    let gm = obj.gradient(&theta.add_scaled(-eps, &unit))?;
    Ok(gp.sub(&gm).scaled(norm / (2.0 * eps)))
}

/// Power iteration on the Hessian; returns (Rayleigh quotient, iterations, converged).
///
/// Converged means two successive estimates differ by less than `tol`
/// relative to the current one. Without convergence the last estimate is
/// returned with `converged = false`.
pub fn power_iteration_lambda_max(
    obj: &dyn Objective,
    theta: &ParamVector,
    max_iters: usize,
    tol: f64,
    rng: &mut Rng,
) -> Result<(f64, usize, bool)> {
    if max_iters == 0 {
        return Err(Error::InvalidSpec("max_iters must be at least 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let mut v = gaussian_vector(rng, theta.dim())?.normalized()?;
    let mut prev: Option<f64> = None;
    let mut estimate = 0.0;
    for it in 1..=max_iters {
        let hv = hvp(obj, theta, &v, DEFAULT_HVP_EPS)?;
        estimate = v.dot(&hv);
        if let Some(p) = prev {
            if (estimate - p).abs() < tol * estimate.abs().max(f64::MIN_POSITIVE) {
                return Ok((estimate, it, true));
            }
        }
        prev = Some(estimate);
        match hv.normalized() {
            Ok(next) => v = next,
            // Zero Hessian along every visited direction.
            Err(_) => return Ok((0.0, it, true)),
        }
    }
    Ok((estimate, max_iters, false))
}

/// Power-iteration settings for [`curvature_sweep`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSettings {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PowerSettings {
    fn default() -> Self {
        PowerSettings {
            max_iters: 200,
            tol: 1e-6,
        }
    }
}

/// λ_max, the spectral metric, and the finite-difference metric for every ρ.
///
/// All fd entries share one fallback direction so the sweep is comparable
/// across ρ even at stationary points.
pub fn curvature_sweep(
    obj: &dyn Objective,
    theta: &ParamVector,
    rhos: &[f64],
    epsilon: f64,
    power: PowerSettings,
    rng: &mut Rng,
) -> Result<CurvatureReport> {
    if rhos.is_empty() {
        return Err(Error::InvalidSpec(
            "curvature sweep needs at least one radius".into(),
        ));
    }
    if let Some(r) = rhos.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::InvalidSpec(format!("radius {r} must be positive")));
    }
    let grad = obj.gradient(theta)?;
    let grad_sq_norm = grad.norm_sq();
    let (lambda_max, iterations, converged) =
        power_iteration_lambda_max(obj, theta, power.max_iters, power.tol, rng)?;
    let fallback = gaussian_vector(rng, theta.dim())?.normalized()?;
    let metric_fd = rhos
        .par_iter()
        .map(|&rho| {
            fd_metric_with(obj, theta, &grad, rho, epsilon, Some(&fallback))
                .map(|value| FdEntry { rho, value })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CurvatureReport {
        point: theta.clone(),
        grad_sq_norm,
        lambda_max,
        metric_spectral: lambda_max / (grad_sq_norm + 1.0),
        metric_fd,
        iterations,
        converged,
    })
}
