//! Vector arithmetic, seeded randomness and the finite-difference gradient oracle.
//!
//! All arithmetic is 64-bit. Randomness comes from [`Rng`], a thin wrapper over
//! the ChaCha8 stream cipher: a counter-based generator whose output is
//! specified bit-for-bit, so a seed reproduces the same stream on every
//! platform. Gaussian draws use the Box–Muller transform on that uniform
//! stream.

use std::ops::{Index, IndexMut};

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::Objective;

/// Flat parameter vector θ ∈ R^k. Also used for gradients and perturbations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn check_dim(&self, other: &ParamVector) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidDimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn scaled(&self, c: f64) -> ParamVector {
        ParamVector(self.0.iter().map(|x| c * x).collect())
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + c * b)
                .collect(),
        )
    }

    pub fn add(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.dim(), other.dim());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// Unit vector in the direction of `self`.
    pub fn normalized(&self) -> Result<ParamVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::DegenerateDirection("cannot normalize a zero vector"));
        }
        Ok(self.scaled(1.0 / n))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Seeded, platform-stable random stream.
///
/// Independent sub-streams of one seed are obtained with [`Rng::stream`],
/// which selects a ChaCha stream id instead of reseeding.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

pub fn seeded_rng(seed: u64) -> Rng {
    Rng::new(seed)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for sub-stream `id` of `seed`.
    pub fn stream(seed: u64, id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(id);
        Rng { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    /// Standard normal via Box–Muller. Consumes two uniforms per draw.
    pub fn normal(&mut self) -> f64 {
        // 1 - U lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        let dist =
            Beta::new(a, b).map_err(|e| Error::InvalidSpec(format!("Beta({a}, {b}): {e}")))?;
        Ok(dist.sample(&mut self.inner))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

pub fn gaussian_vector(rng: &mut Rng, dim: usize) -> Result<ParamVector> {
    if dim == 0 {
        return Err(Error::InvalidDimension {
            expected: 1,
            got: 0,
        });
    }
    Ok(ParamVector((0..dim).map(|_| rng.normal()).collect()))
}

/// Gram–Schmidt step: removes from `v` its component along `u`.
pub fn orthogonalize(u: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
    u.check_dim(v)?;
    let uu = u.norm_sq();
    if uu == 0.0 {
        return Err(Error::DegenerateDirection("reference direction is zero"));
    }
    let mut out = v.add_scaled(-u.dot(v) / uu, u);
    // One re-orthogonalization pass removes the residual left by round-off.
    let c = u.dot(&out) / uu;
    if c != 0.0 {
        out = out.add_scaled(-c, u);
    }
    Ok(out)
}

/// Central-difference gradient, used as the oracle for analytic gradients.
pub fn finite_diff_gradient(
    obj: &dyn Objective,
    theta: &ParamVector,
    step: f64,
) -> Result<ParamVector> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "finite-difference step {step} must be positive"
        )));
    }
    let mut probe = theta.clone();
    let mut grad = Vec::with_capacity(theta.dim());
    for i in 0..theta.dim() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = obj.value(&probe)?;
        probe[i] = orig - step;
        let minus = obj.value(&probe)?;
        probe[i] = orig;
        for v in [plus, minus] {
            if !v.is_finite() {
                return Err(Error::NonFiniteObjective(v));
            }
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(ParamVector(grad))
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
