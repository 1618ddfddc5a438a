//! Feature-statistics mixing across samples of a batch.
//!
//! Each sample is viewed as `channels × positions`. For sample `i` with
//! partner `j = perm[i]`, every channel is re-normalized with its own
//! instance statistics and re-styled with a λ-weighted mix of both samples'
//! statistics:
//!
//! `out = (λσ_i + (1−λ)σ_j) · (x_i − μ_i) / max(σ_i, ε) + (λμ_i + (1−λ)μ_j)`
//!
//! with λ ~ Beta(a, a) drawn per sample.

use crate::error::{Error, Result};
use crate::math::Rng;

/// Floor on the per-channel standard deviation of zero-variance channels.
pub const EPS_STD: f64 = 1e-6;

/// Partner indices and mixing weights for one application.
#[derive(Debug, Clone, PartialEq)]
pub struct MixStyleDraw {
    pub partners: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl MixStyleDraw {
    pub fn sample(rng: &mut Rng, batch: usize, beta_param: f64) -> Result<Self> {
        if !(beta_param > 0.0) || !beta_param.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "mixstyle Beta parameter {beta_param} must be positive"
            )));
        }
        let mut partners: Vec<usize> = (0..batch).collect();
        rng.shuffle(&mut partners);
        let lambdas = (0..batch)
            .map(|_| rng.beta(beta_param, beta_param))
            .collect::<Result<_>>()?;
        Ok(MixStyleDraw { partners, lambdas })
    }
}

/// Applies MixStyle with a seeded partner shuffle and Beta-distributed λ.
///
/// `features` is row-major `batch × (channels·positions)`, channel-major
/// within a row.
pub fn mixstyle_transform(
    features: &[f64],
    batch: usize,
    channels: usize,
    rng: &mut Rng,
    beta_param: f64,
) -> Result<Vec<f64>> {
    check_shape(features, batch, channels)?;
    let draw = MixStyleDraw::sample(rng, batch, beta_param)?;
    mixstyle_with(features, batch, channels, &draw)
}

/// MixStyle with explicit partners and mixing weights.
pub fn mixstyle_with(
    features: &[f64],
    batch: usize,
    channels: usize,
    draw: &MixStyleDraw,
) -> Result<Vec<f64>> {
    let positions = check_shape(features, batch, channels)?;
    if draw.partners.len() != batch || draw.lambdas.len() != batch {
        return Err(Error::InvalidBatch(format!(
            "mixstyle draw covers {} samples, batch has {batch}",
            draw.partners.len()
        )));
    }
    if let Some(&p) = draw.partners.iter().find(|&&p| p >= batch) {
        return Err(Error::InvalidBatch(format!(
            "partner index {p} outside batch"
        )));
    }
    let row = channels * positions;
    let stats: Vec<(f64, f64)> = features.chunks(positions).map(channel_stats).collect();

    let mut out = vec![0.0; features.len()];
    for i in 0..batch {
        let j = draw.partners[i];
        let lam = draw.lambdas[i];
        for c in 0..channels {
            let (mu_i, sd_i) = stats[i * channels + c];
            let (mu_j, sd_j) = stats[j * channels + c];
            let mu_mix = lam * mu_i + (1.0 - lam) * mu_j;
            let sd_mix = lam * sd_i + (1.0 - lam) * sd_j;
            let scale = sd_mix / sd_i.max(EPS_STD);
            let base = i * row + c * positions;
            for s in 0..positions {
                out[base + s] = scale * (features[base + s] - mu_i) + mu_mix;
            }
        }
    }
    Ok(out)
}

/// Population mean and standard deviation.
pub(crate) fn channel_stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

fn check_shape(features: &[f64], batch: usize, channels: usize) -> Result<usize> {
    if batch < 2 {
        return Err(Error::InsufficientBatch(batch));
    }
    if channels == 0 || !features.len().is_multiple_of(batch * channels) {
        return Err(Error::InvalidBatch(format!(
            "{} features cannot be viewed as {batch} samples × {channels} channels",
            features.len()
        )));
    }
    let positions = features.len() / (batch * channels);
    if positions < 2 {
        return Err(Error::DegenerateStatistics(format!(
            "{positions} position(s) per channel, at least 2 are needed for a standard deviation"
        )));
    }
    Ok(positions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{mean, seeded_rng};

    const B: usize = 6;
    const C: usize = 3;
    const S: usize = 8;

    fn features(seed: u64) -> Vec<f64> {
        let mut rng = seeded_rng(seed);
        (0..B * C * S)
            .map(|k| {
                let c = (k / S) % C;
                (1.0 + c as f64) * rng.normal() + 2.0 * c as f64 - 1.0
            })
            .collect()
    }

    #[test]
    fn lambda_one_restores_input() {
        let x = features(0);
        let draw = MixStyleDraw {
            partners: vec![5, 4, 3, 2, 1, 0],
            lambdas: vec![1.0; B],
        };
        let y = mixstyle_with(&x, B, C, &draw).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_zero_takes_partner_statistics() {
        let x = features(1);
        let partners = vec![1, 2, 3, 4, 5, 0];
        let draw = MixStyleDraw {
            partners: partners.clone(),
            lambdas: vec![0.0; B],
        };
        let y = mixstyle_with(&x, B, C, &draw).unwrap();
        for (i, &j) in partners.iter().enumerate() {
            for c in 0..C {
                let at = |v: &[f64], k: usize| v[(k * C + c) * S..(k * C + c + 1) * S].to_vec();
                let (mu_out, sd_out) = channel_stats(&at(&y, i));
                let (mu_j, sd_j) = channel_stats(&at(&x, j));
                assert!((mu_out - mu_j).abs() < 1e-10);
                assert!((sd_out - sd_j).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn shape_and_determinism() {
        let x = features(2);
        let a = mixstyle_transform(&x, B, C, &mut seeded_rng(7), 0.1).unwrap();
        let b = mixstyle_transform(&x, B, C, &mut seeded_rng(7), 0.1).unwrap();
        assert_eq!(a.len(), x.len());
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn beta_draws_are_symmetric() {
        let mut rng = seeded_rng(11);
        let lams: Vec<f64> = (0..10_000).map(|_| rng.beta(0.1, 0.1).unwrap()).collect();
        let m = mean(&lams);
        assert!((0.45..=0.55).contains(&m), "mean λ {m}");
    }

    #[test]
    fn errors() {
        let x = features(3);
        assert!(matches!(
            mixstyle_transform(&x[..C * S], 1, C, &mut seeded_rng(0), 0.1),
            Err(Error::InsufficientBatch(1))
        ));
        // One position per channel: no spread to measure.
        assert!(matches!(
            mixstyle_transform(&x[..4 * C], 4, C, &mut seeded_rng(0), 0.1),
            Err(Error::DegenerateStatistics(_))
        ));
    }

    #[test]
    fn constant_channel_stays_finite() {
        let mut x = features(4);
        for v in &mut x[0..S] {
            *v = 3.0;
        }
        let y = mixstyle_transform(&x, B, C, &mut seeded_rng(1), 0.1).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }
}
