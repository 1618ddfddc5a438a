//! Base update rules, SAM and MeCAM steps, and the training loop.
//!
//! SAM and MeCAM only decide *which* gradient to use; the parameter update
//! itself is delegated to a base rule (plain/momentum gradient descent or the
//! adaptive-moment rule). With the `gd` base a MeCAM step is exactly
//! `θ ← θ − η_t[(1−α−β)∇f(θ) + α∇f(θ+δ) + β∇m(θ−δ)]`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Batch, Batcher};
use crate::error::{Error, Result};
use crate::math::{ParamVector, Rng};
use crate::objectives::{mixstyle_transform, DropoutMask, Mlp, Objective};
use crate::perturbation::{sam_perturbation, schedule, PerturbConfig, ScheduleConfig};

/// Loss above which a run is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BaseOptimizer {
    Gd,
    Momentum { momentum: f64 },
    AdaptiveMoment { beta1: f64, beta2: f64, guard: f64 },
}

impl BaseOptimizer {
    pub fn adaptive_moment() -> Self {
        BaseOptimizer::AdaptiveMoment {
            beta1: 0.9,
            beta2: 0.999,
            guard: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseOptimizer::Gd => "gd",
            BaseOptimizer::Momentum { .. } => "momentum",
            BaseOptimizer::AdaptiveMoment { .. } => "adaptive-moment",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BaseOptimizer::Gd => Ok(()),
            BaseOptimizer::Momentum { momentum } if (0.0..1.0).contains(&momentum) => Ok(()),
            BaseOptimizer::Momentum { momentum } => Err(Error::InvalidSpec(format!(
                "momentum {momentum} outside [0, 1)"
            ))),
            BaseOptimizer::AdaptiveMoment {
                beta1,
                beta2,
                guard,
            } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(b > 0.0 && b < 1.0) {
                        return Err(Error::InvalidSpec(format!("{name} = {b} outside (0, 1)")));
                    }
                }
                if !(guard > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "guard {guard} must be positive"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Mutable per-run optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// Number of updates applied so far.
    pub t: usize,
    pub momentum: f64,
    pub momentum_buf: Option<ParamVector>,
    pub beta1: f64,
    pub beta2: f64,
    pub guard: f64,
    pub first_moment: Option<ParamVector>,
    pub second_moment: Option<ParamVector>,
}

impl OptimizerState {
    pub fn new(base: &BaseOptimizer) -> Self {
        let mut s = OptimizerState {
            t: 0,
            momentum: 0.0,
            momentum_buf: None,
            beta1: 0.9,
            beta2: 0.999,
            guard: 1e-8,
            first_moment: None,
            second_moment: None,
        };
        match *base {
            BaseOptimizer::Gd => {}
            BaseOptimizer::Momentum { momentum } => s.momentum = momentum,
            BaseOptimizer::AdaptiveMoment {
                beta1,
                beta2,
                guard,
            } => {
                s.beta1 = beta1;
                s.beta2 = beta2;
                s.guard = guard;
            }
        }
        s
    }
}

/// θ' = θ − η·(g + μ·buf), heavy-ball momentum when μ > 0.
pub fn gd_step(
    theta: &ParamVector,
    grad: &ParamVector,
    eta: f64,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    theta.check_dim(grad)?;
    state.t += 1;
    if state.momentum == 0.0 {
        return Ok(theta.add_scaled(-eta, grad));
    }
    let buf = match state.momentum_buf.take() {
        Some(prev) => {
            prev.check_dim(grad)?;
            grad.add_scaled(state.momentum, &prev)
        }
        None => grad.clone(),
    };
    let next = theta.add_scaled(-eta, &buf);
    state.momentum_buf = Some(buf);
    Ok(next)
}

/// Bias-corrected first/second-moment update.
pub fn adaptive_moment_step(
    theta: &ParamVector,
    grad: &ParamVector,
    eta: f64,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    theta.check_dim(grad)?;
    let k = theta.dim();
    let mut m = state
        .first_moment
        .take()
        .unwrap_or_else(|| ParamVector::zeros(k));
    let mut v = state
        .second_moment
        .take()
        .unwrap_or_else(|| ParamVector::zeros(k));
    m.check_dim(grad)?;
    v.check_dim(grad)?;
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(state.t as i32);
    let bc2 = 1.0 - b2.powi(state.t as i32);
    let mut next = theta.clone();
    for i in 0..k {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        next[i] -= eta * m_hat / (v_hat.sqrt() + state.guard);
    }
    state.first_moment = Some(m);
    state.second_moment = Some(v);
    Ok(next)
}

pub fn base_step(
    base: &BaseOptimizer,
    theta: &ParamVector,
    grad: &ParamVector,
    eta: f64,
    state: &mut OptimizerState,
) -> Result<ParamVector> {
    match base {
        BaseOptimizer::Gd | BaseOptimizer::Momentum { .. } => gd_step(theta, grad, eta, state),
        BaseOptimizer::AdaptiveMoment { .. } => adaptive_moment_step(theta, grad, eta, state),
    }
}

/// Weights and perturbation settings of a MeCAM update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MecamConfig {
    pub alpha: f64,
    pub beta: f64,
    pub perturb: PerturbConfig,
    pub schedule: ScheduleConfig,
    pub base: BaseOptimizer,
}

impl MecamConfig {
    /// Enforces 0 ≤ β ≤ α and α + β < 1.
    pub fn new(
        alpha: f64,
        beta: f64,
        perturb: PerturbConfig,
        schedule: ScheduleConfig,
        base: BaseOptimizer,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) || !(0.0..1.0).contains(&beta) {
            return Err(Error::InvalidSpec(format!(
                "alpha = {alpha} and beta = {beta} must lie in [0, 1)"
            )));
        }
        if beta > alpha {
            return Err(Error::InvalidSpec(format!(
                "beta = {beta} exceeds alpha = {alpha}, the meta-gap weight must not exceed the SAM-gap weight"
            )));
        }
        if alpha + beta >= 1.0 {
            return Err(Error::InvalidSpec(format!(
                "alpha + beta = {} must stay below 1",
                alpha + beta
            )));
        }
        base.validate()?;
        Ok(MecamConfig {
            alpha,
            beta,
            perturb,
            schedule,
            base,
        })
    }
}

/// Which gradient drives the base update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "kebab-case")]
pub enum Method {
    /// Plain empirical risk minimization: ∇f(θ).
    Erm,
    /// ∇f(θ + δ).
    Sam,
    /// (1−α−β)∇f(θ) + α∇f(θ+δ) + β∇m(θ−δ).
    Mecam { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub base: BaseOptimizer,
    pub schedule: ScheduleConfig,
    pub perturb: PerturbConfig,
}

impl OptimizerConfig {
    pub fn erm(base: BaseOptimizer, schedule: ScheduleConfig) -> Result<Self> {
        base.validate()?;
        Ok(OptimizerConfig {
            method: Method::Erm,
            base,
            schedule,
            perturb: PerturbConfig::default(),
        })
    }

    pub fn sam(
        base: BaseOptimizer,
        schedule: ScheduleConfig,
        perturb: PerturbConfig,
    ) -> Result<Self> {
        base.validate()?;
        Ok(OptimizerConfig {
            method: Method::Sam,
            base,
            schedule,
            perturb,
        })
    }

    pub fn mecam(cfg: MecamConfig) -> Self {
        OptimizerConfig {
            method: Method::Mecam {
                alpha: cfg.alpha,
                beta: cfg.beta,
            },
            base: cfg.base,
            schedule: cfg.schedule,
            perturb: cfg.perturb,
        }
    }

    fn needs_meta(&self) -> bool {
        matches!(self.method, Method::Mecam { beta, .. } if beta != 0.0)
    }
}

/// One row of a [`Trajectory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub loss: f64,
    pub grad_sq_norm: f64,
    pub loss_sam: Option<f64>,
    pub loss_meta: Option<f64>,
    pub eta: f64,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_theta: ParamVector,
}

pub const TRAJECTORY_CSV_HEADER: &str = "t,loss,grad_sq_norm,loss_sam,loss_meta,eta,rho";

impl Trajectory {
    /// CSV with header [`TRAJECTORY_CSV_HEADER`]; absent quantities are empty cells.
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from(TRAJECTORY_CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t,
                r.loss,
                r.grad_sq_norm,
                opt(r.loss_sam),
                opt(r.loss_meta),
                r.eta,
                opt(r.rho)
            ));
        }
        out
    }
}

/// (1−α−β)g₀ + αg_sam + βg_meta, evaluated as g₀ + α(g_sam − g₀) + β(g_meta − g₀).
///
/// The two forms are equal in exact arithmetic; the second returns g₀
/// bit-for-bit whenever α = β = 0 or all three gradients coincide.
pub fn combine_gradients(
    g0: &ParamVector,
    g_sam: &ParamVector,
    g_meta: &ParamVector,
    alpha: f64,
    beta: f64,
) -> Result<ParamVector> {
    g0.check_dim(g_sam)?;
    g0.check_dim(g_meta)?;
    Ok(ParamVector::new(
        g0.iter()
            .zip(g_sam.iter().zip(g_meta.iter()))
            .map(|(&a, (&s, &m))| a + alpha * (s - a) + beta * (m - a))
            .collect(),
    ))
}

/// Everything a MeCAM step evaluates before the base update.
#[derive(Debug, Clone, PartialEq)]
pub struct MecamGradient {
    pub loss: f64,
    pub grad: ParamVector,
    pub delta: ParamVector,
    pub loss_sam: f64,
    pub grad_sam: ParamVector,
    pub loss_meta: f64,
    pub grad_meta: ParamVector,
    pub combined: ParamVector,
}

pub fn mecam_gradient(
    train: &dyn Objective,
    meta: &dyn Objective,
    theta: &ParamVector,
    rho: f64,
    epsilon: f64,
    alpha: f64,
    beta: f64,
) -> Result<MecamGradient> {
    let (loss, grad) = train.value_and_gradient(theta)?;
    let delta = sam_perturbation(&grad, rho, epsilon)?;
    let (loss_sam, grad_sam) = train.value_and_gradient(&theta.add(&delta))?;
    let (loss_meta, grad_meta) = meta.value_and_gradient(&theta.sub(&delta))?;
    let combined = combine_gradients(&grad, &grad_sam, &grad_meta, alpha, beta)?;
    Ok(MecamGradient {
        loss,
        grad,
        delta,
        loss_sam,
        grad_sam,
        loss_meta,
        grad_meta,
        combined,
    })
}

pub fn mecam_step(
    train: &dyn Objective,
    meta: &dyn Objective,
    theta: &ParamVector,
    state: &mut OptimizerState,
    cfg: &MecamConfig,
) -> Result<(ParamVector, StepRecord)> {
    let t = state.t + 1;
    let (eta, rho) = schedule(t, &cfg.schedule, &cfg.perturb)?;
    let mg = mecam_gradient(
        train,
        meta,
        theta,
        rho,
        cfg.perturb.epsilon,
        cfg.alpha,
        cfg.beta,
    )?;
    let next = base_step(&cfg.base, theta, &mg.combined, eta, state)?;
    let record = StepRecord {
        t,
        loss: mg.loss,
        grad_sq_norm: mg.grad.norm_sq(),
        loss_sam: Some(mg.loss_sam),
        loss_meta: Some(mg.loss_meta),
        eta,
        rho: Some(rho),
    };
    Ok((next, record))
}

pub fn sam_step(
    obj: &dyn Objective,
    theta: &ParamVector,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector, StepRecord)> {
    let t = state.t + 1;
    let (eta, rho) = schedule(t, &cfg.schedule, &cfg.perturb)?;
    let (loss, grad) = obj.value_and_gradient(theta)?;
    let delta = sam_perturbation(&grad, rho, cfg.perturb.epsilon)?;
    let (loss_sam, grad_sam) = obj.value_and_gradient(&theta.add(&delta))?;
    let next = base_step(&cfg.base, theta, &grad_sam, eta, state)?;
    let record = StepRecord {
        t,
        loss,
        grad_sq_norm: grad.norm_sq(),
        loss_sam: Some(loss_sam),
        loss_meta: None,
        eta,
        rho: Some(rho),
    };
    Ok((next, record))
}

fn erm_step(
    obj: &dyn Objective,
    theta: &ParamVector,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector, StepRecord)> {
    let t = state.t + 1;
    let (eta, _) = schedule(t, &cfg.schedule, &cfg.perturb)?;
    let (loss, grad) = obj.value_and_gradient(theta)?;
    let next = base_step(&cfg.base, theta, &grad, eta, state)?;
    let record = StepRecord {
        t,
        loss,
        grad_sq_norm: grad.norm_sq(),
        loss_sam: None,
        loss_meta: None,
        eta,
        rho: None,
    };
    Ok((next, record))
}

/// One configured update on the given objectives.
pub fn optimizer_step(
    objs: &StepObjectives,
    theta: &ParamVector,
    state: &mut OptimizerState,
    cfg: &OptimizerConfig,
) -> Result<(ParamVector, StepRecord)> {
    match cfg.method {
        Method::Erm => erm_step(objs.train.as_ref(), theta, state, cfg),
        Method::Sam => sam_step(objs.train.as_ref(), theta, state, cfg),
        Method::Mecam { alpha, beta } => {
            let mc = MecamConfig {
                alpha,
                beta,
                perturb: cfg.perturb,
                schedule: cfg.schedule,
                base: cfg.base,
            };
            let meta = objs.meta.as_ref().unwrap_or(&objs.train);
            mecam_step(objs.train.as_ref(), meta.as_ref(), theta, state, &mc)
        }
    }
}

/// Objectives used by one step: the training loss on batch B and, for
/// MeCAM, the meta loss on the perturbed batch B̃.
#[derive(Clone)]
pub struct StepObjectives {
    pub train: Arc<dyn Objective>,
    /// `None` means the training objective doubles as the meta objective.
    pub meta: Option<Arc<dyn Objective>>,
}

/// Source of per-step objectives for the training loop.
pub trait Task {
    fn dim(&self) -> usize;
    fn objectives(&mut self, t: usize, need_meta: bool) -> Result<StepObjectives>;
}

/// A fixed, batch-free objective; the meta objective is the objective itself.
pub struct FixedTask {
    obj: Arc<dyn Objective>,
}

impl FixedTask {
    pub fn new(obj: Arc<dyn Objective>) -> Self {
        FixedTask { obj }
    }
}

impl Task for FixedTask {
    fn dim(&self) -> usize {
        self.obj.dim()
    }
    fn objectives(&mut self, _t: usize, _need_meta: bool) -> Result<StepObjectives> {
        Ok(StepObjectives {
            train: Arc::clone(&self.obj),
            meta: None,
        })
    }
}

/// Mini-batch training of an [`Mlp`]: each step samples B, draws one dropout
/// mask, and (when asked) builds B̃ by MixStyle on the input features of B.
/// The same mask is used for every pass within the step.
///
/// Batches, masks and MixStyle draws come from streams `stream_base`,
/// `stream_base + 1` and `stream_base + 2` of `seed`.
pub struct BatchTask {
    mlp: Mlp,
    split: Arc<Batch>,
    batcher: Batcher,
    channels: usize,
    mixstyle_beta: f64,
    mask_rng: Rng,
    mix_rng: Rng,
}

impl BatchTask {
    pub fn new(
        mlp: Mlp,
        split: Arc<Batch>,
        batch_size: usize,
        channels: usize,
        mixstyle_beta: f64,
        seed: u64,
        stream_base: u64,
    ) -> Result<Self> {
        let batcher = Batcher::new(split.len(), batch_size, Rng::stream(seed, stream_base))?;
        Ok(BatchTask {
            mlp,
            split,
            batcher,
            channels,
            mixstyle_beta,
            mask_rng: Rng::stream(seed, stream_base + 1),
            mix_rng: Rng::stream(seed, stream_base + 2),
        })
    }
}

impl Task for BatchTask {
    fn dim(&self) -> usize {
        self.mlp.dim()
    }

    fn objectives(&mut self, _t: usize, need_meta: bool) -> Result<StepObjectives> {
        let batch = self.batcher.next_batch(&self.split);
        let spec = self.mlp.spec();
        let mask = DropoutMask::draw(&mut self.mask_rng, batch.len(), spec.hidden, spec.dropout);
        let meta: Option<Arc<dyn Objective>> = if need_meta {
            let mixed = mixstyle_transform(
                batch.features(),
                batch.len(),
                self.channels,
                &mut self.mix_rng,
                self.mixstyle_beta,
            )?;
            Some(Arc::new(
                self.mlp.bind(batch.with_features(mixed)?, mask.clone()),
            ))
        } else {
            None
        };
        Ok(StepObjectives {
            train: Arc::new(self.mlp.bind(batch, mask)),
            meta,
        })
    }
}

pub fn run_optimizer(
    task: &mut dyn Task,
    theta0: &ParamVector,
    steps: usize,
    cfg: &OptimizerConfig,
) -> Result<Trajectory> {
    run_optimizer_with(task, theta0, steps, cfg, &mut |_, _| Ok(()))
}

/// Runs `steps` updates; `observer(t, θ_t)` sees the parameters after every step.
pub fn run_optimizer_with(
    task: &mut dyn Task,
    theta0: &ParamVector,
    steps: usize,
    cfg: &OptimizerConfig,
    observer: &mut dyn FnMut(usize, &ParamVector) -> Result<()>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::InvalidSpec(
            "number of steps must be at least 1".into(),
        ));
    }
    if theta0.dim() != task.dim() {
        return Err(Error::InvalidDimension {
            expected: task.dim(),
            got: theta0.dim(),
        });
    }
    let mut state = OptimizerState::new(&cfg.base);
    let mut theta = theta0.clone();
    let mut records = Vec::with_capacity(steps);
    let need_meta = cfg.needs_meta();
    for t in 1..=steps {
        let objs = task.objectives(t, need_meta)?;
        let (next, record) = optimizer_step(&objs, &theta, &mut state, cfg)?;
        let worst = [Some(record.loss), record.loss_sam, record.loss_meta]
            .into_iter()
            .flatten()
            .fold(0.0f64, |acc, v| {
                if v.is_finite() {
                    acc.max(v.abs())
                } else {
                    f64::INFINITY
                }
            });
        if !(worst <= DIVERGENCE_LIMIT) || !next.is_finite() {
            return Err(Error::Divergence {
                step: t,
                loss: record.loss,
            });
        }
        records.push(record);
        theta = next;
        observer(t, &theta)?;
    }
    Ok(Trajectory {
        records,
        final_theta: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{quadratic_objective, QuadraticSpec};
    use crate::perturbation::Decay;

    fn scalar_quadratic() -> Arc<dyn Objective> {
        Arc::new(quadratic_objective(QuadraticSpec::diagonal(&[1.0])).unwrap())
    }

    fn p(x: f64) -> ParamVector {
        ParamVector::new(vec![x])
    }

    fn gd_state() -> OptimizerState {
        OptimizerState::new(&BaseOptimizer::Gd)
    }

    fn constant(lr: f64) -> ScheduleConfig {
        ScheduleConfig::new(lr, Decay::Constant).unwrap()
    }

    fn perturb(rho: f64) -> PerturbConfig {
        PerturbConfig::new(rho, 0.0, Decay::Constant).unwrap()
    }

    #[test]
    fn gd_examples() {
        let mut s = gd_state();
        assert_eq!(gd_step(&p(1.0), &p(2.0), 0.1, &mut s).unwrap()[0], 0.8);
        assert_eq!(s.t, 1);
        assert_eq!(gd_step(&p(1.5), &p(0.0), 0.1, &mut s).unwrap()[0], 1.5);

        let f = scalar_quadratic();
        let mut s = gd_state();
        let mut theta = p(1.0);
        for _ in 0..2 {
            theta = gd_step(&theta, &f.gradient(&theta).unwrap(), 0.5, &mut s).unwrap();
        }
        assert_eq!(theta[0], 0.25);

        assert!(matches!(
            gd_step(&p(1.0), &ParamVector::zeros(2), 0.1, &mut gd_state()),
            Err(Error::InvalidDimension { .. })
        ));
    }

    #[test]
    fn momentum_accumulates() {
        let mut s = OptimizerState::new(&BaseOptimizer::Momentum { momentum: 0.5 });
        let a = gd_step(&p(0.0), &p(1.0), 1.0, &mut s).unwrap();
        assert_eq!(a[0], -1.0);
        let b = gd_step(&a, &p(1.0), 1.0, &mut s).unwrap();
        assert_eq!(b[0], -2.5);
    }

    #[test]
    fn adaptive_moment_first_step_is_signed_lr() {
        let mut s = OptimizerState::new(&BaseOptimizer::adaptive_moment());
        let theta = ParamVector::new(vec![0.0, 0.0, 0.0]);
        let g = ParamVector::new(vec![3.0, -0.01, 250.0]);
        let next = adaptive_moment_step(&theta, &g, 0.01, &mut s).unwrap();
        for i in 0..3 {
            let step = next[i] - theta[i];
            assert_eq!(step.signum(), -g[i].signum());
            assert!((step.abs() - 0.01).abs() < 1e-6 * 0.01 / g[i].abs().min(1.0));
        }
    }

    #[test]
    fn adaptive_moment_zero_grad_and_constant_grad() {
        let mut s = OptimizerState::new(&BaseOptimizer::adaptive_moment());
        let theta = ParamVector::new(vec![0.7, -0.2]);
        let next = adaptive_moment_step(&theta, &ParamVector::zeros(2), 0.1, &mut s).unwrap();
        assert_eq!(next, theta);

        let mut s = OptimizerState::new(&BaseOptimizer::adaptive_moment());
        let g = ParamVector::new(vec![0.3, -2.0]);
        let mut theta = ParamVector::zeros(2);
        let mut last = theta.clone();
        for _ in 0..5000 {
            last = theta.clone();
            theta = adaptive_moment_step(&theta, &g, 0.01, &mut s).unwrap();
        }
        for i in 0..2 {
            assert!(((theta[i] - last[i]).abs() - 0.01).abs() < 1e-8);
        }
    }

    #[test]
    fn sam_examples() {
        let f = scalar_quadratic();
        let cfg = OptimizerConfig::sam(BaseOptimizer::Gd, constant(0.1), perturb(0.1)).unwrap();
        let (next, rec) = sam_step(f.as_ref(), &p(1.0), &mut gd_state(), &cfg).unwrap();
        assert!((next[0] - 0.89).abs() < 1e-15);
        assert!((rec.loss_sam.unwrap() - 0.605).abs() < 1e-15);

        let cfg0 = OptimizerConfig::sam(BaseOptimizer::Gd, constant(0.1), perturb(0.0)).unwrap();
        let (a, _) = sam_step(f.as_ref(), &p(1.3), &mut gd_state(), &cfg0).unwrap();
        let b = gd_step(&p(1.3), &f.gradient(&p(1.3)).unwrap(), 0.1, &mut gd_state()).unwrap();
        assert_eq!(a, b);

        let (c, _) = sam_step(f.as_ref(), &p(0.0), &mut gd_state(), &cfg).unwrap();
        assert_eq!(c[0], 0.0);
    }

    fn mecam(alpha: f64, beta: f64, rho: f64) -> MecamConfig {
        MecamConfig::new(alpha, beta, perturb(rho), constant(0.1), BaseOptimizer::Gd).unwrap()
    }

    #[test]
    fn mecam_hand_example() {
        let f = scalar_quadratic();
        let cfg = mecam(0.1, 0.1, 0.1);
        let mg = mecam_gradient(f.as_ref(), f.as_ref(), &p(1.0), 0.1, 0.0, 0.1, 0.1).unwrap();
        assert!((mg.grad_sam[0] - 1.1).abs() < 1e-15);
        assert!((mg.grad_meta[0] - 0.9).abs() < 1e-15);
        assert!((mg.combined[0] - 1.0).abs() < 1e-15);
        let (next, rec) =
            mecam_step(f.as_ref(), f.as_ref(), &p(1.0), &mut gd_state(), &cfg).unwrap();
        assert!((next[0] - 0.9).abs() < 1e-12);
        assert_eq!(rec.t, 1);
        assert!((rec.loss_meta.unwrap() - 0.405).abs() < 1e-15);
    }

    #[test]
    fn mecam_reductions_are_bitwise() {
        let f: Arc<dyn Objective> = Arc::new(
            quadratic_objective(QuadraticSpec::new(vec![vec![2.0, 0.3], vec![0.3, 0.7]])).unwrap(),
        );
        let theta = ParamVector::new(vec![0.37, -1.21]);
        let g = f.gradient(&theta).unwrap();
        let expect = gd_step(&theta, &g, 0.1, &mut gd_state()).unwrap();

        let zero_w = mecam_gradient(f.as_ref(), f.as_ref(), &theta, 0.1, 1e-12, 0.0, 0.0).unwrap();
        assert_eq!(zero_w.combined, g);
        let (a, _) = mecam_step(
            f.as_ref(),
            f.as_ref(),
            &theta,
            &mut gd_state(),
            &mecam(0.0, 0.0, 0.1),
        )
        .unwrap();
        assert_eq!(a, expect);

        let zero_r = mecam_gradient(f.as_ref(), f.as_ref(), &theta, 0.0, 1e-12, 0.1, 0.1).unwrap();
        assert_eq!(zero_r.combined, g);
        let (b, _) = mecam_step(
            f.as_ref(),
            f.as_ref(),
            &theta,
            &mut gd_state(),
            &mecam(0.15, 0.1, 0.0),
        )
        .unwrap();
        assert_eq!(b, expect);
    }

    #[test]
    fn symmetric_gaps_cancel_on_quadratics() {
        let f = quadratic_objective(QuadraticSpec::new(vec![vec![3.0, -1.0], vec![-1.0, 2.0]]))
            .unwrap();
        let theta = ParamVector::new(vec![0.8, 0.4]);
        let mg = mecam_gradient(&f, &f, &theta, 0.2, 1e-12, 0.15, 0.15).unwrap();
        let f0 = f.value(&theta).unwrap();
        assert!(
            ((mg.loss_sam - f0) - (mg.loss_meta - f0 + 2.0 * mg.grad.dot(&mg.delta))).abs() < 1e-14
        );
        let d = &mg.delta;
        let quad = 0.5 * f.gradient(d).unwrap().dot(d);
        assert!((mg.loss_sam - f0 - (mg.grad.dot(d) + quad)).abs() < 1e-14);
        assert!((mg.loss_meta - f0 - (-mg.grad.dot(d) + quad)).abs() < 1e-14);
        assert!(mg.combined.sub(&mg.grad).norm() < 1e-15 * mg.grad.norm().max(1.0) * 4.0);
    }

    #[test]
    fn config_constraints() {
        let e = MecamConfig::new(0.1, 0.2, perturb(0.1), constant(0.1), BaseOptimizer::Gd);
        assert!(matches!(e, Err(Error::InvalidSpec(_))));
        let e = MecamConfig::new(0.6, 0.5, perturb(0.1), constant(0.1), BaseOptimizer::Gd);
        assert!(matches!(e, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn run_gd_on_quadratic() {
        let cfg = OptimizerConfig::erm(BaseOptimizer::Gd, constant(0.1)).unwrap();
        let mut task = FixedTask::new(scalar_quadratic());
        let tr = run_optimizer(&mut task, &p(1.0), 50, &cfg).unwrap();
        assert_eq!(tr.records.len(), 50);
        assert!(tr.final_theta[0].abs() < 0.01);

        let one = run_optimizer(&mut task, &p(1.0), 1, &cfg).unwrap();
        assert_eq!(one.records.len(), 1);
        assert!(run_optimizer(&mut task, &p(1.0), 0, &cfg).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let cfg = OptimizerConfig::erm(BaseOptimizer::Gd, constant(3.0)).unwrap();
        let mut task = FixedTask::new(scalar_quadratic());
        match run_optimizer(&mut task, &p(1.0), 200, &cfg) {
            Err(Error::Divergence { step, .. }) => assert!(step > 1 && step < 200),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trajectory_csv_layout() {
        let cfg = OptimizerConfig::mecam(mecam(0.1, 0.1, 0.1));
        let mut task = FixedTask::new(scalar_quadratic());
        let tr = run_optimizer(&mut task, &p(1.0), 3, &cfg).unwrap();
        let csv = tr.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_CSV_HEADER);
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 7);

        let erm = OptimizerConfig::erm(BaseOptimizer::Gd, constant(0.1)).unwrap();
        let tr = run_optimizer(&mut task, &p(1.0), 1, &erm).unwrap();
        assert!(tr.to_csv().lines().nth(1).unwrap().ends_with(",,,0.1,"));
    }
}
