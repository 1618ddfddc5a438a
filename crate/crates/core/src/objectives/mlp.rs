use serde::{Deserialize, Serialize};

use super::{check_dim, Objective};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::math::{ParamVector, Rng};

/// Shape and regularization of a one-hidden-layer ReLU classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

impl MlpSpec {
    /// Σ (fan_in + 1)·fan_out over both layers.
    pub fn param_count(&self) -> usize {
        (self.input + 1) * self.hidden + (self.hidden + 1) * self.classes
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 || self.classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "mlp widths must be positive with at least 2 classes, got {}-{}-{}",
                self.input, self.hidden, self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "weight decay {} must be non-negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Parameter layout: `[W1 (hidden×input, row-major), b1, W2 (classes×hidden), b2]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
}

/// Builds the classifier and draws initial parameters.
///
/// Hidden weights use He scaling; output weights are drawn at 0.1/√hidden so
/// the untrained network starts close to the uniform prediction. Biases start
/// at zero.
pub fn mlp_objective(spec: MlpSpec, init_rng: &mut Rng) -> Result<(Mlp, ParamVector)> {
    spec.validate()?;
    let mlp = Mlp { spec };
    let mut theta = vec![0.0; spec.param_count()];
    let (w1, _, w2, _) = mlp.offsets();
    let s1 = (2.0 / spec.input as f64).sqrt();
    for x in &mut theta[w1..w1 + spec.hidden * spec.input] {
        *x = s1 * init_rng.normal();
    }
    let s2 = 0.1 / (spec.hidden as f64).sqrt();
    for x in &mut theta[w2..w2 + spec.classes * spec.hidden] {
        *x = s2 * init_rng.normal();
    }
    Ok((mlp, ParamVector::new(theta)))
}

/// Inverted-dropout multipliers on the hidden layer, one per (sample, unit).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask(Option<Vec<f64>>);

impl DropoutMask {
    pub fn none() -> Self {
        DropoutMask(None)
    }

    pub fn draw(rng: &mut Rng, samples: usize, hidden: usize, rate: f64) -> Self {
        if rate == 0.0 {
            return DropoutMask(None);
        }
        let keep = 1.0 / (1.0 - rate);
        DropoutMask(Some(
            (0..samples * hidden)
                .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
                .collect(),
        ))
    }

    fn get(&self, i: usize) -> f64 {
        match &self.0 {
            None => 1.0,
            Some(m) => m[i],
        }
    }

    fn check(&self, samples: usize, hidden: usize) -> Result<()> {
        match &self.0 {
            Some(m) if m.len() != samples * hidden => Err(Error::InvalidBatch(format!(
                "dropout mask has {} entries, expected {}",
                m.len(),
                samples * hidden
            ))),
            _ => Ok(()),
        }
    }
}

struct Forward {
    pre: Vec<f64>,
    act: Vec<f64>,
    probs: Vec<f64>,
    losses: Vec<f64>,
}

impl Mlp {
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let s = &self.spec;
        let w1 = 0;
        let b1 = w1 + s.hidden * s.input;
        let w2 = b1 + s.hidden;
        let b2 = w2 + s.classes * s.hidden;
        (w1, b1, w2, b2)
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.dim() != self.spec.input {
            return Err(Error::InvalidDimension {
                expected: self.spec.input,
                got: batch.dim(),
            });
        }
        if batch.is_empty() {
            return Err(Error::InvalidBatch("empty batch".into()));
        }
        if let Some(&label) = batch.labels().iter().find(|&&l| l >= self.spec.classes) {
            return Err(Error::InvalidLabel {
                label,
                classes: self.spec.classes,
            });
        }
        Ok(())
    }

    fn forward(&self, theta: &[f64], batch: &Batch, mask: &DropoutMask) -> Forward {
        let s = &self.spec;
        let (w1, b1, w2, b2) = self.offsets();
        let n = batch.len();
        let mut pre = vec![0.0; n * s.hidden];
        let mut act = vec![0.0; n * s.hidden];
        let mut probs = vec![0.0; n * s.classes];
        let mut losses = vec![0.0; n];
        for i in 0..n {
            let x = batch.row(i);
            for h in 0..s.hidden {
                let row = &theta[w1 + h * s.input..w1 + (h + 1) * s.input];
                let z = theta[b1 + h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
                pre[i * s.hidden + h] = z;
                act[i * s.hidden + h] = z.max(0.0) * mask.get(i * s.hidden + h);
            }
            let a = &act[i * s.hidden..(i + 1) * s.hidden];
            let p = &mut probs[i * s.classes..(i + 1) * s.classes];
            for (k, out) in p.iter_mut().enumerate() {
                let row = &theta[w2 + k * s.hidden..w2 + (k + 1) * s.hidden];
                *out = theta[b2 + k] + row.iter().zip(a).map(|(w, v)| w * v).sum::<f64>();
            }
            let max = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let y = batch.labels()[i];
            let shifted_true = p[y] - max;
            let mut total = 0.0;
            for v in p.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            losses[i] = total.ln() - shifted_true;
            for v in p.iter_mut() {
                *v /= total;
            }
        }
        Forward {
            pre,
            act,
            probs,
            losses,
        }
    }

    fn decay_term(&self, theta: &[f64]) -> f64 {
        if self.spec.weight_decay == 0.0 {
            0.0
        } else {
            0.5 * self.spec.weight_decay * theta.iter().map(|x| x * x).sum::<f64>()
        }
    }

    /// Mean cross-entropy over the batch plus ½·weight_decay·‖θ‖².
    pub fn loss(&self, theta: &ParamVector, batch: &Batch, mask: &DropoutMask) -> Result<f64> {
        self.loss_and_gradient(theta, batch, mask, false)
            .map(|(v, _)| v)
    }

    pub fn loss_and_gradient_on(
        &self,
        theta: &ParamVector,
        batch: &Batch,
        mask: &DropoutMask,
    ) -> Result<(f64, ParamVector)> {
        let (v, g) = self.loss_and_gradient(theta, batch, mask, true)?;
        Ok((v, g.expect("gradient requested")))
    }

    fn loss_and_gradient(
        &self,
        theta: &ParamVector,
        batch: &Batch,
        mask: &DropoutMask,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamVector>)> {
        check_dim(self.dim(), theta)?;
        self.check_batch(batch)?;
        mask.check(batch.len(), self.spec.hidden)?;
        let t = theta.as_slice();
        let fw = self.forward(t, batch, mask);
        let n = batch.len();
        let value = fw.losses.iter().sum::<f64>() / n as f64 + self.decay_term(t);
        if !want_grad {
            return Ok((value, None));
        }

        let s = &self.spec;
        let (w1, b1, w2, b2) = self.offsets();
        let mut g = vec![0.0; self.dim()];
        let inv_n = 1.0 / n as f64;
        let mut dz2 = vec![0.0; s.classes];
        let mut dz1 = vec![0.0; s.hidden];
        for i in 0..n {
            let x = batch.row(i);
            let y = batch.labels()[i];
            let a = &fw.act[i * s.hidden..(i + 1) * s.hidden];
            for k in 0..s.classes {
                dz2[k] = (fw.probs[i * s.classes + k] - if k == y { 1.0 } else { 0.0 }) * inv_n;
                g[b2 + k] += dz2[k];
                let grow = &mut g[w2 + k * s.hidden..w2 + (k + 1) * s.hidden];
                for (gw, av) in grow.iter_mut().zip(a) {
                    *gw += dz2[k] * av;
                }
            }
            for h in 0..s.hidden {
                let idx = i * s.hidden + h;
                if fw.pre[idx] <= 0.0 {
                    dz1[h] = 0.0;
                    continue;
                }
                let mut da = 0.0;
                for k in 0..s.classes {
                    da += t[w2 + k * s.hidden + h] * dz2[k];
                }
                dz1[h] = da * mask.get(idx);
            }
            for h in 0..s.hidden {
                if dz1[h] == 0.0 {
                    continue;
                }
                g[b1 + h] += dz1[h];
                let grow = &mut g[w1 + h * s.input..w1 + (h + 1) * s.input];
                for (gw, xv) in grow.iter_mut().zip(x) {
                    *gw += dz1[h] * xv;
                }
            }
        }
        if s.weight_decay != 0.0 {
            for (gi, ti) in g.iter_mut().zip(t) {
                *gi += s.weight_decay * ti;
            }
        }
        Ok((value, Some(ParamVector::new(g))))
    }

    /// Cross-entropy of each sample, without the weight-decay term.
    pub fn per_sample_losses(
        &self,
        theta: &ParamVector,
        batch: &Batch,
        mask: &DropoutMask,
    ) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta)?;
        self.check_batch(batch)?;
        mask.check(batch.len(), self.spec.hidden)?;
        Ok(self.forward(theta.as_slice(), batch, mask).losses)
    }

    /// Softmax outputs, row-major `samples × classes`, dropout disabled.
    pub fn probabilities(&self, theta: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta)?;
        self.check_batch(batch)?;
        Ok(self
            .forward(theta.as_slice(), batch, &DropoutMask::none())
            .probs)
    }

    /// Fraction of samples whose arg-max prediction equals the label.
    pub fn accuracy(&self, theta: &ParamVector, batch: &Batch) -> Result<f64> {
        let probs = self.probabilities(theta, batch)?;
        let k = self.spec.classes;
        let correct = batch
            .labels()
            .iter()
            .enumerate()
            .filter(|(i, &y)| {
                let row = &probs[i * k..(i + 1) * k];
                let pred = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (j, &p)| if p > row[best] { j } else { best });
                pred == y
            })
            .count();
        Ok(correct as f64 / batch.len() as f64)
    }

    /// Fixes a batch and dropout mask, yielding a plain [`Objective`].
    pub fn bind(&self, batch: Batch, mask: DropoutMask) -> BoundMlp {
        BoundMlp {
            mlp: self.clone(),
            batch,
            mask,
        }
    }
}

/// An [`Mlp`] evaluated on one fixed batch with one fixed dropout mask.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    mlp: Mlp,
    batch: Batch,
    mask: DropoutMask,
}

impl BoundMlp {
    pub fn batch(&self) -> &Batch {
        &self.batch
    }
}

impl Objective for BoundMlp {
    fn dim(&self) -> usize {
        self.mlp.dim()
    }
    fn value(&self, theta: &ParamVector) -> Result<f64> {
        self.mlp.loss(theta, &self.batch, &self.mask)
    }
    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        self.value_and_gradient(theta).map(|(_, g)| g)
    }
    fn value_and_gradient(&self, theta: &ParamVector) -> Result<(f64, ParamVector)> {
        self.mlp
            .loss_and_gradient_on(theta, &self.batch, &self.mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{finite_diff_gradient, gaussian_vector, seeded_rng};

    fn spec(input: usize, hidden: usize, classes: usize) -> MlpSpec {
        MlpSpec {
            input,
            hidden,
            classes,
            dropout: 0.0,
            weight_decay: 0.0,
        }
    }

    fn random_batch(rng: &mut Rng, n: usize, dim: usize, classes: usize) -> Batch {
        let features = (0..n * dim).map(|_| rng.normal()).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Batch::new(features, labels, vec![0; n], dim).unwrap()
    }

    #[test]
    fn parameter_count() {
        let s = spec(32, 16, 3);
        assert_eq!(s.param_count(), 33 * 16 + 17 * 3);
        let (mlp, theta) = mlp_objective(s, &mut seeded_rng(0)).unwrap();
        assert_eq!(theta.dim(), mlp.dim());
    }

    #[test]
    fn untrained_loss_near_log2() {
        let mut rng = seeded_rng(5);
        let (mlp, theta) = mlp_objective(spec(8, 16, 2), &mut rng).unwrap();
        let batch = random_batch(&mut rng, 64, 8, 2);
        let loss = mlp.loss(&theta, &batch, &DropoutMask::none()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = seeded_rng(9);
        let (mlp, theta) = mlp_objective(spec(6, 5, 4), &mut rng).unwrap();
        let theta = theta.scaled(30.0);
        let batch = random_batch(&mut rng, 10, 6, 4);
        let p = mlp.probabilities(&theta, &batch).unwrap();
        for row in p.chunks(4) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_oracle_without_dropout() {
        let mut rng = seeded_rng(1);
        let mut s = spec(6, 7, 3);
        s.weight_decay = 1e-3;
        let (mlp, _) = mlp_objective(s, &mut rng).unwrap();
        for _ in 0..5 {
            let theta = gaussian_vector(&mut rng, mlp.dim()).unwrap().scaled(0.5);
            let obj = mlp.bind(random_batch(&mut rng, 12, 6, 3), DropoutMask::none());
            let g = obj.gradient(&theta).unwrap();
            let fd = finite_diff_gradient(&obj, &theta, 1e-6).unwrap();
            let rel = g.sub(&fd).norm() / g.norm().max(fd.norm());
            assert!(rel < 1e-4, "relative error {rel}");
        }
    }

    #[test]
    fn gradient_matches_oracle_with_fixed_mask() {
        let mut rng = seeded_rng(2);
        let mut s = spec(5, 8, 3);
        s.dropout = 0.5;
        let (mlp, theta) = mlp_objective(s, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 9, 5, 3);
        let mask = DropoutMask::draw(&mut rng, 9, 8, 0.5);
        let obj = mlp.bind(batch, mask);
        let g = obj.gradient(&theta).unwrap();
        let fd = finite_diff_gradient(&obj, &theta, 1e-6).unwrap();
        assert!(g.sub(&fd).norm() / g.norm().max(fd.norm()) < 1e-4);
    }

    #[test]
    fn duplicated_samples_have_identical_losses() {
        let mut rng = seeded_rng(3);
        let (mlp, theta) = mlp_objective(spec(4, 6, 2), &mut rng).unwrap();
        let row: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let features = [row.clone(), row.clone(), row].concat();
        let batch = Batch::new(features, vec![1, 1, 1], vec![0; 3], 4).unwrap();
        let losses = mlp
            .per_sample_losses(&theta, &batch, &DropoutMask::none())
            .unwrap();
        assert_eq!(losses[0].to_bits(), losses[1].to_bits());
        assert_eq!(losses[1].to_bits(), losses[2].to_bits());
    }

    #[test]
    fn rejects_out_of_range_label() {
        let mut rng = seeded_rng(4);
        let (mlp, theta) = mlp_objective(spec(3, 4, 2), &mut rng).unwrap();
        let batch = Batch::new(vec![0.0; 6], vec![0, 2], vec![0, 0], 3).unwrap();
        assert!(matches!(
            mlp.loss(&theta, &batch, &DropoutMask::none()),
            Err(Error::InvalidLabel {
                label: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn rejects_invalid_spec() {
        let mut s = spec(3, 4, 2);
        s.dropout = 1.0;
        assert!(mlp_objective(s, &mut seeded_rng(0)).is_err());
        assert!(mlp_objective(spec(3, 4, 1), &mut seeded_rng(0)).is_err());
    }
}
