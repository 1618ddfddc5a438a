use serde::{Deserialize, Serialize};

use super::{check_dim, Objective};
use crate::error::{Error, Result};
use crate::math::ParamVector;

const SYMMETRY_TOL: f64 = 1e-12;

/// f(θ) = ½ θᵀAθ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticSpec {
    pub matrix: Vec<Vec<f64>>,
}

impl QuadraticSpec {
    pub fn new(matrix: Vec<Vec<f64>>) -> Self {
        QuadraticSpec { matrix }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let k = diag.len();
        let matrix = (0..k)
            .map(|i| (0..k).map(|j| if i == j { diag[i] } else { 0.0 }).collect())
            .collect();
        QuadraticSpec { matrix }
    }
}

#[derive(Debug, Clone)]
pub struct Quadratic {
    a: Vec<Vec<f64>>,
}

pub fn quadratic_objective(spec: QuadraticSpec) -> Result<Quadratic> {
    let k = spec.matrix.len();
    if k == 0 {
        return Err(Error::InvalidSpec("quadratic matrix is empty".into()));
    }
    for (i, row) in spec.matrix.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidSpec(format!(
                "quadratic matrix row {i} has {} entries, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "quadratic matrix row {i} is not finite"
            )));
        }
    }
    for i in 0..k {
        for j in 0..i {
            let (a, b) = (spec.matrix[i][j], spec.matrix[j][i]);
            if (a - b).abs() > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) {
                return Err(Error::InvalidSpec(format!(
                    "quadratic matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
        }
    }
    Ok(Quadratic { a: spec.matrix })
}

impl Quadratic {
    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.a
    }

    fn apply(&self, theta: &ParamVector) -> ParamVector {
        ParamVector::new(
            self.a
                .iter()
                .map(|row| row.iter().zip(theta.iter()).map(|(a, x)| a * x).sum())
                .collect(),
        )
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        Ok(0.5 * theta.dot(&self.apply(theta)))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), theta)?;
        Ok(self.apply(theta))
    }

    fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        check_dim(self.dim(), theta)?;
        let g = self.apply(theta);
        Ok((0.5 * theta.dot(&g), g))
    }
}

/// f(θ) = ⟨c, θ⟩ + b. Zero curvature everywhere.
#[derive(Debug, Clone)]
pub struct Linear {
    coef: ParamVector,
    offset: f64,
}

pub fn linear_objective(coef: ParamVector, offset: f64) -> Linear {
    Linear { coef, offset }
}

impl Objective for Linear {
    fn dim(&self) -> usize {
        self.coef.dim()
    }
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), theta)?;
        Ok(self.coef.dot(theta) + self.offset)
    }
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), theta)?;
        Ok(self.coef.clone())
    }
}

/// One-dimensional landscape with a sharp well and a flat well.
///
/// Each well is the quadratic bowl `depth + ½·curvature·(θ − center)²` on a
/// core of half-width `min(1/√curvature, 0.45·|θ₂ − θ₁|)` around its center.
/// Between the cores the two bowls are blended by the quintic smoothstep
/// `6u⁵ − 15u⁴ + 10u³`, whose first and second derivatives vanish at both
/// ends, so the assembled function is C² and each center keeps its exact
/// curvature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoubleWellSpec {
    pub sharp_center: f64,
    pub flat_center: f64,
    pub sharp_curvature: f64,
    pub flat_curvature: f64,
    pub sharp_depth: f64,
    pub flat_depth: f64,
}

impl Default for DoubleWellSpec {
    fn default() -> Self {
        DoubleWellSpec {
            sharp_center: -1.0,
            flat_center: 1.0,
            sharp_curvature: 100.0,
            flat_curvature: 1.0,
            sharp_depth: 0.0,
            flat_depth: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DoubleWell {
    spec: DoubleWellSpec,
    // Blend interval [lo, hi] in the orientation sharp → flat.
    blend_lo: f64,
    blend_hi: f64,
}

pub fn double_well_objective(spec: DoubleWellSpec) -> Result<DoubleWell> {
    let DoubleWellSpec {
        sharp_center: c1,
        flat_center: c2,
        sharp_curvature: a1,
        flat_curvature: a2,
        ..
    } = spec;
    if ![c1, c2, a1, a2, spec.sharp_depth, spec.flat_depth]
        .iter()
        .all(|x| x.is_finite())
    {
        return Err(Error::InvalidSpec(
            "double-well parameters must be finite".into(),
        ));
    }
    if !(a2 > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "flat curvature {a2} must be positive"
        )));
    }
    if a1 <= a2 {
        return Err(Error::InvalidSpec(format!(
            "sharp curvature {a1} must exceed flat curvature {a2}"
        )));
    }
    if c1 == c2 {
        return Err(Error::InvalidSpec("well centers must differ".into()));
    }
    let dist = (c2 - c1).abs();
    let w1 = (1.0 / a1.sqrt()).min(0.45 * dist);
    let w2 = (1.0 / a2.sqrt()).min(0.45 * dist);
    let dir = (c2 - c1).signum();
    Ok(DoubleWell {
        spec,
        blend_lo: c1 + dir * w1,
        blend_hi: c2 - dir * w2,
    })
}

impl DoubleWell {
    pub fn spec(&self) -> &DoubleWellSpec {
        &self.spec
    }

    /// Returns (s, ds/dθ, d²s/dθ²) of the blend weight toward the flat bowl.
    fn blend(&self, x: f64) -> (f64, f64, f64) {
        let width = self.blend_hi - self.blend_lo;
        let u = (x - self.blend_lo) / width;
        if u <= 0.0 {
            (0.0, 0.0, 0.0)
        } else if u >= 1.0 {
            (1.0, 0.0, 0.0)
        } else {
            let s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
            let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u) / width;
            let d2s = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (width * width);
            (s, ds, d2s)
        }
    }

    fn bowls(&self, x: f64) -> [(f64, f64, f64); 2] {
        let s = &self.spec;
        let bowl = |c: f64, a: f64, d: f64| (d + 0.5 * a * (x - c) * (x - c), a * (x - c), a);
        [
            bowl(s.sharp_center, s.sharp_curvature, s.sharp_depth),
            bowl(s.flat_center, s.flat_curvature, s.flat_depth),
        ]
    }

    pub fn value_at(&self, x: f64) -> f64 {
        let (s, _, _) = self.blend(x);
        let [(q1, _, _), (q2, _, _)] = self.bowls(x);
        (1.0 - s) * q1 + s * q2
    }

    pub fn derivative_at(&self, x: f64) -> f64 {
        let (s, ds, _) = self.blend(x);
        let [(q1, g1, _), (q2, g2, _)] = self.bowls(x);
        (1.0 - s) * g1 + s * g2 + ds * (q2 - q1)
    }

    pub fn second_derivative_at(&self, x: f64) -> f64 {
        let (s, ds, d2s) = self.blend(x);
        let [(q1, g1, h1), (q2, g2, h2)] = self.bowls(x);
        (1.0 - s) * h1 + s * h2 + 2.0 * ds * (g2 - g1) + d2s * (q2 - q1)
    }
}

impl Objective for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(1, theta)?;
        Ok(self.value_at(theta[0]))
    }
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        check_dim(1, theta)?;
        Ok(ParamVector::new(vec![self.derivative_at(theta[0])]))
    }
}

/// Σ_i [100(θ_{i+1} − θ_i²)² + (1 − θ_i)²].
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    dim: usize,
}

pub fn smooth_nonconvex_objective(dim: usize) -> Result<Rosenbrock> {
    if dim < 2 {
        return Err(Error::InvalidDimension {
            expected: 2,
            got: dim,
        });
    }
    Ok(Rosenbrock { dim })
}

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, theta: &ParamVector) -> Result<f64> {
        check_dim(self.dim, theta)?;
        let x = theta.as_slice();
        Ok(x.windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
            })
            .sum())
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim, theta)?;
        let x = theta.as_slice();
        let mut g = vec![0.0; self.dim];
        for i in 0..self.dim - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        Ok(ParamVector::new(g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_gradient, gaussian_vector, seeded_rng};

    fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        a.sub(b).norm() / a.norm().max(b.norm()).max(1e-12)
    }

    #[test]
    fn quadratic_examples() {
        let q = quadratic_objective(QuadraticSpec::diagonal(&[1.0, 4.0])).unwrap();
        let theta = ParamVector::new(vec![1.0, 1.0]);
        assert_eq!(q.value(&theta).unwrap(), 2.5);
        assert_eq!(q.gradient(&theta).unwrap().as_slice(), &[1.0, 4.0]);

        let zero = ParamVector::zeros(2);
        assert_eq!(q.value(&zero).unwrap(), 0.0);
        assert_eq!(q.gradient(&zero).unwrap().norm(), 0.0);

        let id = quadratic_objective(QuadraticSpec::diagonal(&[1.0, 1.0])).unwrap();
        let g = id.gradient(&ParamVector::new(vec![3.0, 4.0])).unwrap();
        assert_eq!(g.norm(), 5.0);
    }

    #[test]
    fn quadratic_rejects_asymmetric() {
        let spec = QuadraticSpec::new(vec![vec![1.0, 2.0], vec![0.0, 1.0]]);
        assert!(matches!(
            quadratic_objective(spec),
            Err(Error::InvalidSpec(_))
        ));
        let ragged = QuadraticSpec::new(vec![vec![1.0, 0.0], vec![0.0]]);
        assert!(matches!(
            quadratic_objective(ragged),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn quadratic_dimension_mismatch() {
        let q = quadratic_objective(QuadraticSpec::diagonal(&[1.0, 4.0])).unwrap();
        assert!(matches!(
            q.value(&ParamVector::zeros(3)),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn double_well_stationary_and_curvatures() {
        let spec = DoubleWellSpec::default();
        let dw = double_well_objective(spec).unwrap();
        assert!(dw.derivative_at(spec.sharp_center).abs() < 1e-10);
        assert!(dw.derivative_at(spec.flat_center).abs() < 1e-10);

        let s = 1e-3;
        let second =
            |x: f64| (dw.value_at(x + s) + dw.value_at(x - s) - 2.0 * dw.value_at(x)) / (s * s);
        assert!((second(spec.sharp_center) - 100.0).abs() < 1e-6);
        assert!((second(spec.flat_center) - 1.0).abs() < 1e-6);
        assert_eq!(dw.second_derivative_at(spec.sharp_center), 100.0);

        let mid = 0.5 * (spec.sharp_center + spec.flat_center);
        assert!(dw.derivative_at(mid).abs() > 1e-3);
    }

    #[test]
    fn double_well_has_two_minima_and_one_barrier() {
        for spec in [
            DoubleWellSpec::default(),
            DoubleWellSpec {
                sharp_center: 2.0,
                flat_center: -1.0,
                sharp_curvature: 50.0,
                flat_curvature: 2.0,
                sharp_depth: -0.5,
                flat_depth: 0.3,
            },
        ] {
            let dw = double_well_objective(spec).unwrap();
            let lo = spec.sharp_center.min(spec.flat_center) - 2.0;
            let hi = spec.sharp_center.max(spec.flat_center) + 2.0;
            // Offset grid so no sample lands exactly on a stationary point.
            let n = 200_000;
            let grads: Vec<f64> = (0..=n)
                .map(|i| dw.derivative_at(lo + (hi - lo) * (i as f64 + 0.37) / n as f64))
                .collect();
            let up = grads
                .windows(2)
                .filter(|w| w[0] < 0.0 && w[1] >= 0.0)
                .count();
            let down = grads
                .windows(2)
                .filter(|w| w[0] > 0.0 && w[1] <= 0.0)
                .count();
            assert_eq!((up, down), (2, 1), "minima/maxima for {spec:?}");
        }
    }

    #[test]
    fn double_well_second_derivative_matches_fd() {
        let dw = double_well_objective(DoubleWellSpec::default()).unwrap();
        for i in 0..200 {
            let x = -2.5 + 5.0 * i as f64 / 199.0 + 1e-3;
            let h = 1e-5;
            let fd = (dw.derivative_at(x + h) - dw.derivative_at(x - h)) / (2.0 * h);
            let exact = dw.second_derivative_at(x);
            assert!(
                (fd - exact).abs() < 1e-4 * exact.abs().max(1.0),
                "x={x}: {fd} vs {exact}"
            );
        }
    }

    #[test]
    fn double_well_rejects_bad_specs() {
        let spec = DoubleWellSpec {
            sharp_curvature: 0.5,
            ..Default::default()
        };
        assert!(matches!(
            double_well_objective(spec),
            Err(Error::InvalidSpec(_))
        ));
        let mut spec = DoubleWellSpec::default();
        spec.flat_center = spec.sharp_center;
        assert!(matches!(
            double_well_objective(spec),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn rosenbrock_examples() {
        let f = smooth_nonconvex_objective(5).unwrap();
        let ones = ParamVector::new(vec![1.0; 5]);
        assert_eq!(f.value(&ones).unwrap(), 0.0);
        assert_eq!(f.gradient(&ones).unwrap().norm(), 0.0);

        let f2 = smooth_nonconvex_objective(2).unwrap();
        let origin = ParamVector::zeros(2);
        assert_eq!(f2.value(&origin).unwrap(), 1.0);
        assert_eq!(f2.gradient(&origin).unwrap().as_slice(), &[-2.0, 0.0]);

        assert!(smooth_nonconvex_objective(1).is_err());
    }

    #[test]
    fn analytic_gradients_match_oracle() {
        let mut rng = seeded_rng(42);
        let rosen = smooth_nonconvex_objective(6).unwrap();
        let quad = quadratic_objective(QuadraticSpec::new(vec![
            vec![2.0, 1.0, 0.0],
            vec![1.0, 3.0, -0.5],
            vec![0.0, -0.5, 1.0],
        ]))
        .unwrap();
        let dw = double_well_objective(DoubleWellSpec::default()).unwrap();
        for _ in 0..20 {
            let t = gaussian_vector(&mut rng, 6).unwrap();
            let e = rel_err(
                &rosen.gradient(&t).unwrap(),
                &finite_diff_gradient(&rosen, &t, 1e-6).unwrap(),
            );
            assert!(e < 1e-6, "rosenbrock {e}");

            let t = gaussian_vector(&mut rng, 3).unwrap();
            let e = rel_err(
                &quad.gradient(&t).unwrap(),
                &finite_diff_gradient(&quad, &t, 1e-6).unwrap(),
            );
            assert!(e < 1e-6, "quadratic {e}");

            let t = ParamVector::new(vec![rng.uniform_range(-2.5, 2.5)]);
            let e = rel_err(
                &dw.gradient(&t).unwrap(),
                &finite_diff_gradient(&dw, &t, 1e-6).unwrap(),
            );
            assert!(e < 1e-6, "double well {e} at {t:?}");
        }
    }
}
