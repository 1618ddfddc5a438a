//! Loss surfaces: analytic test functions and a one-hidden-layer MLP classifier.

mod analytic;
mod mixstyle;
mod mlp;

pub use analytic::{
    double_well_objective, linear_objective, quadratic_objective, smooth_nonconvex_objective,
    DoubleWell, DoubleWellSpec, Linear, Quadratic, QuadraticSpec, Rosenbrock,
};
pub use mixstyle::{mixstyle_transform, mixstyle_with, MixStyleDraw, EPS_STD};
pub use mlp::{mlp_objective, BoundMlp, DropoutMask, Mlp, MlpSpec};

use crate::error::Result;
use crate::math::ParamVector;

/// A differentiable loss surface f: R^k → R.
///
/// Batch-conditioned losses (the MLP) are bound to a batch and a dropout mask
/// first, see [`Mlp::bind`], so every evaluation is deterministic.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, theta: &ParamVector) -> Result<f64>;

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector>;

    fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        Ok((self.value(theta)?, self.gradient(theta)?))
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        (**self).value(theta)
    }
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        (**self).gradient(theta)
    }
    fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        (**self).value_and_gradient(theta)
    }
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        (**self).value(theta)
    }
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        (**self).gradient(theta)
    }
    fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        (**self).value_and_gradient(theta)
    }
}

pub(crate) fn check_dim(expected: usize, theta: &ParamVector) -> Result<()> {
    if theta.dim() != expected {
        return Err(crate::Error::InvalidDimension {
            expected,
            got: theta.dim(),
        });
    }
    Ok(())
}
