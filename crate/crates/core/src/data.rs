//! Synthetic multi-domain classification data.
//!
//! Every domain draws samples from the same class-conditional latent
//! distribution, then applies its own per-channel affine style
//! `x_c = scale_c · z_c + shift_c`. The style is the only thing that differs
//! between domains, which makes it exactly the kind of shift that mixing
//! channel statistics can bridge.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Rng;

/// Samples with labels and source-domain ids, features row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Vec<f64>,
    labels: Vec<usize>,
    domains: Vec<usize>,
    dim: usize,
}

impl Batch {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        domains: Vec<usize>,
        dim: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidBatch(
                "feature dimension must be positive".into(),
            ));
        }
        if features.len() != labels.len() * dim || domains.len() != labels.len() {
            return Err(Error::InvalidBatch(format!(
                "{} features, {} labels and {} domain ids do not describe rows of width {dim}",
                features.len(),
                labels.len(),
                domains.len()
            )));
        }
        Ok(Batch {
            features,
            labels,
            domains,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domains(&self) -> &[usize] {
        &self.domains
    }

    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Batch {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domains: indices.iter().map(|&i| self.domains[i]).collect(),
            dim: self.dim,
        }
    }

    /// Same samples with replaced features (e.g. after MixStyle).
    pub fn with_features(&self, features: Vec<f64>) -> Result<Batch> {
        Batch::new(
            features,
            self.labels.clone(),
            self.domains.clone(),
            self.dim,
        )
    }

    fn concat(parts: &[Batch], dim: usize) -> Batch {
        let mut out = Batch {
            features: Vec::new(),
            labels: Vec::new(),
            domains: Vec::new(),
            dim,
        };
        for p in parts {
            out.features.extend_from_slice(&p.features);
            out.labels.extend_from_slice(&p.labels);
            out.domains.extend_from_slice(&p.domains);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub id: usize,
    /// Unknown for datasets read back from CSV.
    pub style: Option<DomainStyle>,
    pub samples: Batch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub classes: usize,
    pub channels: usize,
    pub positions: usize,
    pub domains: Vec<Domain>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub domains: usize,
    pub per_domain: usize,
    pub channels: usize,
    pub positions: usize,
    pub style_spread: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            classes: 3,
            domains: 4,
            per_domain: 500,
            channels: 4,
            positions: 8,
            style_spread: 1.0,
        }
    }
}

/// Standard deviation of the per-entry latent noise around a class prototype.
pub const LATENT_NOISE: f64 = 1.0;

/// Standard deviation of prototype entries. At 0.3 the classes overlap
/// enough that source accuracy sits near 80% and a held-out style costs a
/// few points; at 1.0 every method is above 99% and nothing can be compared.
pub const PROTOTYPE_SCALE: f64 = 0.3;

pub fn generate_domains(spec: &DatasetSpec, seed: u64) -> Result<DomainDataset> {
    let DatasetSpec {
        classes,
        domains,
        per_domain,
        channels,
        positions,
        style_spread,
    } = *spec;
    if classes < 2 {
        return Err(Error::InvalidSpec(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    if domains < 3 {
        return Err(Error::InvalidSpec(format!(
            "need at least 3 domains, got {domains}"
        )));
    }
    if per_domain < classes {
        return Err(Error::InvalidSpec(format!(
            "per_domain {per_domain} is smaller than the class count {classes}"
        )));
    }
    if channels == 0 || positions < 2 {
        return Err(Error::InvalidSpec(format!(
            "need channels ≥ 1 and positions ≥ 2, got {channels}×{positions}"
        )));
    }
    if !(style_spread >= 0.0) || !style_spread.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "style spread {style_spread} must be non-negative"
        )));
    }
    let dim = channels * positions;

    let mut proto_rng = Rng::stream(seed, 0);
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| PROTOTYPE_SCALE * proto_rng.normal())
                .collect()
        })
        .collect();

    let mut style_rng = Rng::stream(seed, 1);
    let styles: Vec<DomainStyle> = (0..domains)
        .map(|_| DomainStyle {
            scale: (0..channels)
                .map(|_| (0.5 * style_spread * style_rng.normal()).exp())
                .collect(),
            shift: (0..channels)
                .map(|_| style_spread * style_rng.normal())
                .collect(),
        })
        .collect();

    let domains = styles
        .into_iter()
        .enumerate()
        .map(|(d, style)| {
            let mut rng = Rng::stream(seed, 16 + d as u64);
            let mut labels: Vec<usize> = (0..per_domain).map(|i| i % classes).collect();
            rng.shuffle(&mut labels);
            let mut features = Vec::with_capacity(per_domain * dim);
            for &y in &labels {
                for c in 0..channels {
                    for s in 0..positions {
                        let z = prototypes[y][c * positions + s] + LATENT_NOISE * rng.normal();
                        features.push(style.scale[c] * z + style.shift[c]);
                    }
                }
            }
            let samples = Batch::new(features, labels, vec![d; per_domain], dim)?;
            Ok(Domain {
                id: d,
                style: Some(style),
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DomainDataset {
        classes,
        channels,
        positions,
        domains,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Batch,
    pub validation: Batch,
    pub test: Batch,
}

/// Holds out `target` as the test domain; every other domain contributes its
/// last `round(val_fraction · n)` samples to validation and the rest to train.
pub fn leave_one_out_split(
    data: &DomainDataset,
    target: usize,
    val_fraction: f64,
) -> Result<Splits> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidSpec(format!(
            "validation fraction {val_fraction} outside (0, 1)"
        )));
    }
    let test = data
        .domains
        .iter()
        .find(|d| d.id == target)
        .ok_or(Error::MissingDomain(target))?
        .samples
        .clone();
    let dim = data.channels * data.positions;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for d in data.domains.iter().filter(|d| d.id != target) {
        let n = d.samples.len();
        if n < 2 {
            return Err(Error::InvalidSpec(format!(
                "domain {} has {n} sample(s), at least 2 are needed to split",
                d.id
            )));
        }
        let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let idx: Vec<usize> = (0..n).collect();
        train.push(d.samples.select(&idx[..n - n_val]));
        val.push(d.samples.select(&idx[n - n_val..]));
    }
    Ok(Splits {
        train: Batch::concat(&train, dim),
        validation: Batch::concat(&val, dim),
        test,
    })
}

/// Epoch-based sampling without replacement. Each epoch is a fresh seeded
/// permutation; a trailing partial batch is dropped.
#[derive(Debug, Clone)]
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Rng,
}

impl Batcher {
    pub fn new(split_len: usize, batch_size: usize, rng: Rng) -> Result<Self> {
        if split_len == 0 {
            return Err(Error::InvalidBatch(
                "cannot sample from an empty split".into(),
            ));
        }
        if batch_size == 0 || batch_size > split_len {
            return Err(Error::InvalidBatch(format!(
                "batch size {batch_size} must be in 1..={split_len}"
            )));
        }
        let mut b = Batcher {
            order: (0..split_len).collect(),
            pos: 0,
            batch_size,
            rng,
        };
        b.reshuffle();
        Ok(b)
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_indices(&mut self) -> &[usize] {
        if self.pos + self.batch_size > self.order.len() {
            self.reshuffle();
        }
        let start = self.pos;
        self.pos += self.batch_size;
        &self.order[start..self.pos]
    }

    pub fn next_batch(&mut self, split: &Batch) -> Batch {
        debug_assert_eq!(split.len(), self.order.len());
        let idx = self.next_indices().to_vec();
        split.select(&idx)
    }
}

pub fn next_batch(split: &Batch, batcher: &mut Batcher) -> Batch {
    batcher.next_batch(split)
}

/// Writes `domain,label,f_0,...,f_{CS-1}`, one row per sample.
pub fn export_csv(data: &DomainDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let dim = data.channels * data.positions;
    let mut header = String::from("domain,label");
    for k in 0..dim {
        header.push_str(&format!(",f_{k}"));
    }
    writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
    for d in &data.domains {
        for i in 0..d.samples.len() {
            let mut line = format!("{},{}", d.id, d.samples.labels()[i]);
            for v in d.samples.row(i) {
                line.push_str(&format!(",{v}"));
            }
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`export_csv`]. Styles are not recoverable.
pub fn import_csv(path: &Path, channels: usize) -> Result<DomainDataset> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .clone();
    let dim = headers.len().saturating_sub(2);
    if headers.get(0) != Some("domain") || headers.get(1) != Some("label") || dim == 0 {
        return Err(Error::format(path, "header must start with domain,label"));
    }
    for (k, h) in headers.iter().skip(2).enumerate() {
        if h != format!("f_{k}") {
            return Err(Error::format(path, format!("unexpected column {h}")));
        }
    }
    if channels == 0 || dim % channels != 0 {
        return Err(Error::format(
            path,
            format!("{dim} features do not split into {channels} channels"),
        ));
    }

    let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let parse_err = |what: &str| Error::format(path, format!("row {}: bad {what}", line + 2));
        let domain = record[0].parse().map_err(|_| parse_err("domain"))?;
        let label = record[1].parse().map_err(|_| parse_err("label"))?;
        let feats = record
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<Vec<_>>>()?;
        rows.push((domain, label, feats));
    }
    let classes = rows.iter().map(|r| r.1).max().map_or(0, |m| m + 1);
    let mut ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    ids.sort_unstable();
    ids.dedup();
    let domains = ids
        .into_iter()
        .map(|id| {
            let mine: Vec<&(usize, usize, Vec<f64>)> = rows.iter().filter(|r| r.0 == id).collect();
            let features = mine.iter().flat_map(|r| r.2.iter().copied()).collect();
            let labels = mine.iter().map(|r| r.1).collect();
            Ok(Domain {
                id,
                style: None,
                samples: Batch::new(features, labels, vec![id; mine.len()], dim)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DomainDataset {
        classes,
        channels,
        positions: dim / channels,
        domains,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            classes: 2,
            domains: 4,
            per_domain: 500,
            channels: 2,
            positions: 4,
            style_spread: 1.0,
        }
    }

    #[test]
    fn counts_and_balance() {
        let data = generate_domains(&small(), 3).unwrap();
        let total: usize = data.domains.iter().map(|d| d.samples.len()).sum();
        assert_eq!(total, 2000);
        for d in &data.domains {
            let ones = d.samples.labels().iter().filter(|&&y| y == 1).count();
            assert!((ones as i64 - 250).abs() <= 1);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_domains(&small(), 9).unwrap();
        let b = generate_domains(&small(), 9).unwrap();
        assert_eq!(a, b);
        let bits = |d: &DomainDataset| -> Vec<u64> {
            d.domains
                .iter()
                .flat_map(|d| d.samples.features().iter().map(|x| x.to_bits()))
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, generate_domains(&small(), 10).unwrap());
    }

    #[test]
    fn zero_spread_collapses_styles() {
        let mut spec = small();
        spec.style_spread = 0.0;
        let data = generate_domains(&spec, 1).unwrap();
        let first = data.domains[0].style.clone().unwrap();
        assert!(first.scale.iter().all(|&s| s == 1.0));
        assert!(first.shift.iter().all(|&s| s == 0.0));
        for d in &data.domains {
            assert_eq!(d.style.as_ref().unwrap(), &first);
        }
    }

    #[test]
    fn styles_differ_pairwise() {
        let data = generate_domains(&small(), 4).unwrap();
        for i in 0..data.domains.len() {
            for j in 0..i {
                assert_ne!(data.domains[i].style, data.domains[j].style);
            }
        }
    }

    #[test]
    fn rejects_bad_counts() {
        for spec in [
            DatasetSpec {
                classes: 1,
                ..small()
            },
            DatasetSpec {
                domains: 2,
                ..small()
            },
            DatasetSpec {
                per_domain: 1,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_domains(&spec, 0),
                Err(Error::InvalidSpec(_))
            ));
        }
    }

    #[test]
    fn leave_one_out_partitions() {
        let data = generate_domains(&small(), 5).unwrap();
        let s = leave_one_out_split(&data, 2, 0.2).unwrap();
        assert!(s.test.domains().iter().all(|&d| d == 2));
        assert_eq!(s.test.len(), 500);
        for split in [&s.train, &s.validation] {
            assert!(split.domains().iter().all(|&d| d != 2));
        }
        for d in [0, 1, 3] {
            assert_eq!(
                s.validation.domains().iter().filter(|&&x| x == d).count(),
                100
            );
            assert_eq!(s.train.domains().iter().filter(|&&x| x == d).count(), 400);
        }

        // Union of the three splits is the original multiset of rows.
        let key = |b: &Batch, i: usize| {
            let mut k: Vec<u64> = b.row(i).iter().map(|x| x.to_bits()).collect();
            k.push(b.labels()[i] as u64);
            k.push(b.domains()[i] as u64);
            k
        };
        let mut orig: Vec<Vec<u64>> = data
            .domains
            .iter()
            .flat_map(|d| (0..d.samples.len()).map(move |i| key(&d.samples, i)))
            .collect();
        let mut union: Vec<Vec<u64>> = [&s.train, &s.validation, &s.test]
            .iter()
            .flat_map(|b| (0..b.len()).map(move |i| key(b, i)))
            .collect();
        orig.sort();
        union.sort();
        assert_eq!(orig, union);

        assert!(matches!(
            leave_one_out_split(&data, 7, 0.2),
            Err(Error::MissingDomain(7))
        ));
    }

    #[test]
    fn batcher_epochs() {
        let data = generate_domains(&small(), 6).unwrap();
        let split = &data.domains[0].samples;

        let mut full = Batcher::new(split.len(), split.len(), Rng::new(1)).unwrap();
        let mut idx = full.next_indices().to_vec();
        idx.sort_unstable();
        assert_eq!(idx, (0..split.len()).collect::<Vec<_>>());

        let mut b = Batcher::new(split.len(), 50, Rng::new(2)).unwrap();
        let mut seen: Vec<usize> = (0..10).flat_map(|_| b.next_indices().to_vec()).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..500).collect::<Vec<_>>());

        let run = || {
            let mut b = Batcher::new(split.len(), 64, Rng::new(3)).unwrap();
            (0..16)
                .map(|_| next_batch(split, &mut b))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());

        assert!(matches!(
            Batcher::new(10, 11, Rng::new(0)),
            Err(Error::InvalidBatch(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let spec = DatasetSpec {
            per_domain: 20,
            ..small()
        };
        let data = generate_domains(&spec, 8).unwrap();
        export_csv(&data, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("domain,label,f_0,f_1,f_2,f_3,f_4,f_5,f_6,f_7\n"));
        let back = import_csv(&path, 2).unwrap();
        assert_eq!(back.classes, 2);
        assert_eq!(back.positions, 4);
        for (a, b) in data.domains.iter().zip(&back.domains) {
            assert_eq!(a.samples, b.samples);
        }
    }
}
