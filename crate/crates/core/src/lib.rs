//! Sharpness-aware optimization laboratory: SAM and MeCAM optimizers,
//! curvature diagnostics, loss-landscape sampling and a synthetic
//! domain-generalization harness.

// `!(x > 0.0)` is used on purpose throughout: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod curvature;
pub mod data;
pub mod error;
pub mod experiment;
pub mod landscape;
pub mod math;
pub mod objectives;
pub mod optim;
pub mod perturbation;
pub mod report;

pub use error::{Error, Result};
pub use math::{ParamVector, Rng};
pub use objectives::Objective;
