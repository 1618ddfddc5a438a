//! 2-D loss slices around a point along two random orthogonal directions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{gaussian_vector, orthogonalize, ParamVector, Rng};
use crate::objectives::Objective;

pub const DEFAULT_EXTENT: f64 = 1.0;
pub const DEFAULT_RESOLUTION: usize = 25;
const MAX_REDRAWS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub center: ParamVector,
    pub u: ParamVector,
    pub v: ParamVector,
    pub extent: f64,
    pub resolution: usize,
    /// `values[i][j] = f(θ* + a_i·u + b_j·v)`.
    pub values: Vec<Vec<f64>>,
}

/// Sidecar written next to the grid CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeMeta {
    pub seed: u64,
    pub extent: f64,
    pub n: usize,
    pub normalization: String,
}

impl LandscapeGrid {
    /// Coordinate of grid index `i` along either axis.
    pub fn coordinate(&self, i: usize) -> f64 {
        let n = self.resolution as f64;
        self.extent * (i as f64 - n) / n
    }

    pub fn center_value(&self) -> f64 {
        self.values[self.resolution][self.resolution]
    }

    /// Mean of `value − center` over all cells.
    pub fn mean_rise(&self) -> f64 {
        let c = self.center_value();
        let cells = self.values.iter().flatten();
        let n = (2 * self.resolution + 1).pow(2) as f64;
        cells.map(|x| x - c).sum::<f64>() / n
    }

    /// Header `a,b,loss`, one row per cell, `a` outer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,loss\n");
        for (i, row) in self.values.iter().enumerate() {
            let a = self.coordinate(i);
            for (j, loss) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", a, self.coordinate(j), loss));
            }
        }
        out
    }

    pub fn meta(&self, seed: u64) -> LandscapeMeta {
        LandscapeMeta {
            seed,
            extent: self.extent,
            n: self.resolution,
            normalization: "unit".into(),
        }
    }

    /// Writes `<stem>.csv` and `<stem>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str, seed: u64) -> Result<()> {
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let meta = dir.join(format!("{stem}.meta.json"));
        let body = serde_json::to_string_pretty(&self.meta(seed)).expect("metadata serializes");
        std::fs::write(&meta, body + "\n").map_err(|e| Error::io(&meta, e))
    }
}

pub fn sample_landscape(
    obj: &dyn Objective,
    center: &ParamVector,
    extent: f64,
    n: usize,
    rng: &mut Rng,
) -> Result<LandscapeGrid> {
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "extent {extent} must be positive"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidSpec("resolution must be at least 1".into()));
    }
    let dim = center.dim();
    let u = gaussian_vector(rng, dim)?.normalized()?;
    let mut v = None;
    for _ in 0..MAX_REDRAWS {
        let draw = gaussian_vector(rng, dim)?;
        if let Ok(w) = orthogonalize(&u, &draw).and_then(|w| w.normalized()) {
            if w.norm() > 0.5 {
                v = Some(w);
                break;
            }
        }
    }
    let v = v.ok_or(Error::DegenerateDirection(
        "second landscape direction collinear with the first",
    ))?;

    let side = 2 * n + 1;
    let coord = |i: usize| extent * (i as f64 - n as f64) / n as f64;
    let flat: Vec<f64> = (0..side * side)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / side, k % side);
            if i == n && j == n {
                return obj.value(center);
            }
            let p = center.add_scaled(coord(i), &u).add_scaled(coord(j), &v);
            obj.value(&p)
        })
        .collect::<Result<_>>()?;
    Ok(LandscapeGrid {
        center: center.clone(),
        u,
        v,
        extent,
        resolution: n,
        values: flat.chunks(side).map(|r| r.to_vec()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use crate::objectives::{quadratic_objective, QuadraticSpec};

    fn iso(dim: usize) -> impl Objective {
        quadratic_objective(QuadraticSpec::diagonal(&vec![1.0; dim])).unwrap()
    }

    #[test]
    fn three_by_three() {
        let f = iso(4);
        let c = ParamVector::new(vec![0.1, 0.2, -0.3, 0.0]);
        let g = sample_landscape(&f, &c, 0.5, 1, &mut seeded_rng(0)).unwrap();
        assert_eq!(g.values.len(), 3);
        assert!(g.values.iter().all(|r| r.len() == 3));
        assert!((g.center_value() - f.value(&c).unwrap()).abs() < 1e-12);
        assert!(g.u.dot(&g.v).abs() < 1e-10);
    }

    #[test]
    fn isotropic_closed_form() {
        let f = iso(6);
        let g = sample_landscape(&f, &ParamVector::zeros(6), 1.0, 4, &mut seeded_rng(9)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let (a, b) = (g.coordinate(i), g.coordinate(j));
                assert!((g.values[i][j] - 0.5 * (a * a + b * b)).abs() < 1e-10);
            }
        }
        let min = g
            .values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min, g.center_value());
        assert_eq!(g.coordinate(0), -1.0);
        assert_eq!(g.coordinate(8), 1.0);
    }

    #[test]
    fn deterministic_and_csv() {
        let f = iso(3);
        let c = ParamVector::new(vec![1.0, 0.0, 2.0]);
        let a = sample_landscape(&f, &c, 1.0, 2, &mut seeded_rng(4)).unwrap();
        let b = sample_landscape(&f, &c, 1.0, 2, &mut seeded_rng(4)).unwrap();
        assert_eq!(a, b);
        let csv = a.to_csv();
        assert_eq!(csv.lines().next(), Some("a,b,loss"));
        assert_eq!(csv.lines().count(), 1 + 25);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path(), "grid", 4).unwrap();
        let meta: LandscapeMeta = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join("grid.meta.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(meta.normalization, "unit");
        assert_eq!(meta.n, 2);
    }

    #[test]
    fn one_dimensional_space_has_no_second_direction() {
        let f = iso(1);
        assert!(matches!(
            sample_landscape(&f, &ParamVector::zeros(1), 1.0, 1, &mut seeded_rng(0)),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn invalid_arguments() {
        let f = iso(2);
        assert!(sample_landscape(&f, &ParamVector::zeros(2), 0.0, 1, &mut seeded_rng(0)).is_err());
        assert!(sample_landscape(&f, &ParamVector::zeros(2), 1.0, 0, &mut seeded_rng(0)).is_err());
    }
}
