//! Orchestration: analytic trajectories, leave-one-domain-out training,
//! curvature/landscape at trained points, and hyperparameter sweeps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OptimizerKind, TaskKind};
use crate::curvature::{curvature_sweep, CurvatureReport, PowerSettings};
use crate::data::{generate_domains, leave_one_out_split, DomainDataset, Splits};
use crate::error::{Error, Result};
use crate::landscape::{sample_landscape, LandscapeGrid};
use crate::math::{ParamVector, Rng};
use crate::objectives::{
    double_well_objective, mlp_objective, quadratic_objective, smooth_nonconvex_objective,
    DropoutMask, Mlp, MlpSpec, Objective, QuadraticSpec,
};
use crate::optim::{run_optimizer, run_optimizer_with, BatchTask, FixedTask, Trajectory};
use crate::report::{CellReport, CellStatus, RunReport};

// Stream ids below this are used by dataset generation.
const CELL_STREAMS: u64 = 1 << 32;
const STREAMS_PER_CELL: u64 = 16;

fn cell_stream(target: usize, k: u64) -> u64 {
    CELL_STREAMS + target as u64 * STREAMS_PER_CELL + k
}

/// Runs `f` on a pool bounded by `SHARPMIN_THREADS` (all cores when unset).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var("SHARPMIN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0);
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

/// Which objective stands in for the meta loss, recorded next to trajectories.
pub fn meta_objective_description(cfg: &ExperimentConfig) -> &'static str {
    match (cfg.task, cfg.optimizer) {
        (_, OptimizerKind::Mecam) if cfg.task == TaskKind::Dg => {
            "training loss on the MixStyle-perturbed batch"
        }
        (_, OptimizerKind::Mecam) => "training objective",
        _ => "none",
    }
}

pub fn analytic_objective(cfg: &ExperimentConfig) -> Result<Arc<dyn Objective>> {
    Ok(match cfg.task {
        TaskKind::Quadratic => Arc::new(quadratic_objective(QuadraticSpec::diagonal(
            &cfg.quadratic_diag,
        ))?),
        TaskKind::DoubleWell => Arc::new(double_well_objective(cfg.double_well)?),
        TaskKind::Nonconvex => Arc::new(smooth_nonconvex_objective(cfg.nonconvex_dim)?),
        TaskKind::Dg => {
            return Err(Error::InvalidSpec(
                "the dg task has no closed-form objective".into(),
            ));
        }
    })
}

/// `init.point` when given, otherwise a fixed per-task starting point.
pub fn initial_point(cfg: &ExperimentConfig) -> ParamVector {
    if !cfg.init_point.is_empty() {
        return ParamVector::new(cfg.init_point.clone());
    }
    match cfg.task {
        TaskKind::Quadratic => ParamVector::new(vec![1.0; cfg.quadratic_diag.len()]),
        TaskKind::DoubleWell => ParamVector::new(vec![cfg.double_well.flat_center + 1.0]),
        TaskKind::Nonconvex | TaskKind::Dg => ParamVector::zeros(cfg.nonconvex_dim),
    }
}

pub fn mlp_spec(cfg: &ExperimentConfig) -> MlpSpec {
    MlpSpec {
        input: cfg.data.channels * cfg.data.positions,
        hidden: cfg.model.hidden,
        classes: cfg.data.classes,
        dropout: cfg.model.dropout,
        weight_decay: cfg.model.weight_decay,
    }
}

pub fn targets(cfg: &ExperimentConfig) -> Vec<usize> {
    if cfg.targets.is_empty() {
        (0..cfg.data.domains).collect()
    } else {
        cfg.targets.clone()
    }
}

/// A model trained on the source domains of one (seed, target) cell.
///
/// Accuracies are reported at the best source-validation checkpoint `theta`;
/// curvature and landscapes are taken at the converged point
/// `trajectory.final_theta`.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub mlp: Mlp,
    pub splits: Splits,
    /// Parameters at the best source-validation checkpoint.
    pub theta: ParamVector,
    pub best_step: usize,
    pub source_val_acc: f64,
    pub trajectory: Trajectory,
}

impl TrainedCell {
    /// Loss on the source-validation split with dropout disabled.
    pub fn eval_objective(&self) -> impl Objective {
        self.mlp
            .bind(self.splits.validation.clone(), DropoutMask::none())
    }
}

/// Trains on every domain except `target`, checkpointing on source validation.
///
/// The earliest checkpoint with the highest validation accuracy wins.
pub fn train_dg_cell(
    cfg: &ExperimentConfig,
    data: &DomainDataset,
    seed: u64,
    target: usize,
) -> Result<TrainedCell> {
    let opt = cfg.optimizer_config()?;
    let splits = leave_one_out_split(data, target, cfg.val_fraction)?;
    let (mlp, theta0) = mlp_objective(
        mlp_spec(cfg),
        &mut Rng::stream(seed, cell_stream(target, 0)),
    )?;
    let mut task = BatchTask::new(
        mlp.clone(),
        Arc::new(splits.train.clone()),
        cfg.batch_size,
        data.channels,
        cfg.mixstyle_beta,
        seed,
        cell_stream(target, 1),
    )?;
    let mut best: Option<(f64, usize, ParamVector)> = None;
    let (every, steps) = (cfg.checkpoint_every, cfg.steps);
    let trajectory = run_optimizer_with(&mut task, &theta0, steps, &opt, &mut |t, theta| {
        if t % every == 0 || t == steps {
            let acc = mlp.accuracy(theta, &splits.validation)?;
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, t, theta.clone()));
            }
        }
        Ok(())
    })?;
    let (source_val_acc, best_step, theta) = best.expect("final step is always a checkpoint");
    Ok(TrainedCell {
        mlp,
        splits,
        theta,
        best_step,
        source_val_acc,
        trajectory,
    })
}

fn power(cfg: &ExperimentConfig) -> PowerSettings {
    PowerSettings {
        max_iters: cfg.curvature.max_iters,
        tol: cfg.curvature.tol,
    }
}

pub fn cell_curvature(
    cfg: &ExperimentConfig,
    cell: &TrainedCell,
    seed: u64,
    target: usize,
) -> Result<CurvatureReport> {
    curvature_sweep(
        &cell.eval_objective(),
        &cell.trajectory.final_theta,
        &cfg.curvature.rhos,
        cfg.perturb.epsilon,
        power(cfg),
        &mut Rng::stream(seed, cell_stream(target, 4)),
    )
}

pub fn cell_landscape(
    cfg: &ExperimentConfig,
    cell: &TrainedCell,
    seed: u64,
    target: usize,
) -> Result<LandscapeGrid> {
    sample_landscape(
        &cell.eval_objective(),
        &cell.trajectory.final_theta,
        cfg.landscape.extent,
        cfg.landscape.resolution,
        &mut Rng::stream(seed, cell_stream(target, 5)),
    )
}

fn run_cell(cfg: &ExperimentConfig, data: &DomainDataset, seed: u64, target: usize) -> CellReport {
    let outcome = train_dg_cell(cfg, data, seed, target).and_then(|cell| {
        let heldout = cell.mlp.accuracy(&cell.theta, &cell.splits.test)?;
        let train_loss = cell
            .mlp
            .loss(&cell.theta, &cell.splits.train, &DropoutMask::none())?;
        let curvature = cell_curvature(cfg, &cell, seed, target)?;
        Ok(CellReport {
            seed,
            target,
            status: CellStatus::Ok,
            best_step: Some(cell.best_step),
            train_loss: Some(train_loss),
            source_val_acc: Some(cell.source_val_acc),
            heldout_acc: Some(heldout),
            curvature: Some(curvature),
        })
    });
    outcome.unwrap_or_else(|e| {
        let status = match e {
            Error::Divergence { step, .. } => CellStatus::Diverged { step },
            other => CellStatus::Failed {
                message: other.to_string(),
            },
        };
        CellReport {
            seed,
            target,
            status,
            best_step: None,
            train_loss: None,
            source_val_acc: None,
            heldout_acc: None,
            curvature: None,
        }
    })
}

/// Leave-one-domain-out sweep over every (seed, target) cell.
///
/// Cells that diverge or fail are recorded and the remaining cells still run.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.task != TaskKind::Dg {
        return Err(Error::InvalidSpec(format!(
            "leave-one-domain-out runs need task = dg, got {}",
            cfg.task.as_str()
        )));
    }
    cfg.optimizer_config()?;
    let datasets = cfg
        .seeds
        .par_iter()
        .map(|&seed| generate_domains(&cfg.data, seed))
        .collect::<Result<Vec<_>>>()?;
    let targets = targets(cfg);
    let jobs: Vec<(usize, u64, usize)> = cfg
        .seeds
        .iter()
        .enumerate()
        .flat_map(|(i, &s)| targets.iter().map(move |&t| (i, s, t)))
        .collect();
    let cells: Vec<CellReport> = jobs
        .par_iter()
        .map(|&(i, seed, target)| run_cell(cfg, &datasets[i], seed, target))
        .collect();
    Ok(RunReport::assemble(cfg.clone(), cells))
}

/// Trajectory of the configured optimizer for one seed. For the dg task this
/// trains the first target's cell.
pub fn run_trajectory(cfg: &ExperimentConfig, seed: u64) -> Result<Trajectory> {
    if cfg.task == TaskKind::Dg {
        let data = generate_domains(&cfg.data, seed)?;
        return Ok(train_dg_cell(cfg, &data, seed, targets(cfg)[0])?.trajectory);
    }
    let obj = analytic_objective(cfg)?;
    let mut task = FixedTask::new(obj);
    run_optimizer(
        &mut task,
        &initial_point(cfg),
        cfg.steps,
        &cfg.optimizer_config()?,
    )
}

/// The converged point and its evaluation objective for one seed.
pub fn trained_point(
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(Arc<dyn Objective>, ParamVector)> {
    if cfg.task == TaskKind::Dg {
        let data = generate_domains(&cfg.data, seed)?;
        let cell = train_dg_cell(cfg, &data, seed, targets(cfg)[0])?;
        let obj: Arc<dyn Objective> = Arc::new(cell.eval_objective());
        return Ok((obj, cell.trajectory.final_theta));
    }
    let tr = run_trajectory(cfg, seed)?;
    Ok((analytic_objective(cfg)?, tr.final_theta))
}

pub fn run_curvature(cfg: &ExperimentConfig, seed: u64) -> Result<CurvatureReport> {
    let (obj, theta) = trained_point(cfg, seed)?;
    curvature_sweep(
        obj.as_ref(),
        &theta,
        &cfg.curvature.rhos,
        cfg.perturb.epsilon,
        power(cfg),
        &mut Rng::stream(seed, cell_stream(0, 4)),
    )
}

pub fn run_landscape(cfg: &ExperimentConfig, seed: u64) -> Result<LandscapeGrid> {
    if cfg.task == TaskKind::DoubleWell {
        return Err(Error::InvalidSpec(
            "landscape needs at least two parameters; the double-well is one-dimensional".into(),
        ));
    }
    let (obj, theta) = trained_point(cfg, seed)?;
    sample_landscape(
        obj.as_ref(),
        &theta,
        cfg.landscape.extent,
        cfg.landscape.resolution,
        &mut Rng::stream(seed, cell_stream(0, 5)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lr: f64,
    pub rho: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub point: SweepPoint,
    /// Selection score: mean source-validation accuracy (dg) or negative mean final loss.
    pub score: Option<f64>,
    pub source_val_acc: Option<f64>,
    pub heldout_acc: Option<f64>,
    pub final_loss: Option<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub entries: Vec<SweepEntry>,
    /// Index of the highest-scoring entry.
    pub selected: Option<usize>,
}

/// Grid over learning rate, radius (SAM/MeCAM) and (α, β) with β ≤ α and α + β < 1 (MeCAM).
pub fn sweep_points(cfg: &ExperimentConfig) -> Vec<SweepPoint> {
    let perturbs = matches!(cfg.optimizer, OptimizerKind::Sam | OptimizerKind::Mecam);
    let rhos: Vec<Option<f64>> = if perturbs {
        cfg.sweep.rho.iter().map(|&r| Some(r)).collect()
    } else {
        vec![None]
    };
    let weights: Vec<(Option<f64>, Option<f64>)> = if cfg.optimizer == OptimizerKind::Mecam {
        let mut w = Vec::new();
        for &a in &cfg.sweep.alpha {
            for &b in &cfg.sweep.beta {
                if b <= a && a + b < 1.0 {
                    w.push((Some(a), Some(b)));
                }
            }
        }
        w
    } else {
        vec![(None, None)]
    };
    let mut out = Vec::new();
    for &lr in &cfg.sweep.lr {
        for &rho in &rhos {
            for &(alpha, beta) in &weights {
                out.push(SweepPoint {
                    lr,
                    rho,
                    alpha,
                    beta,
                });
            }
        }
    }
    out
}

fn configured(cfg: &ExperimentConfig, p: &SweepPoint) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.schedule.lr = p.lr;
    if let Some(r) = p.rho {
        c.perturb.rho = r;
    }
    if let (Some(a), Some(b)) = (p.alpha, p.beta) {
        c.alpha = a;
        c.beta = b;
    }
    c
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let points = sweep_points(cfg);
    let entries = points
        .par_iter()
        .map(|p| {
            let c = configured(cfg, p);
            if cfg.task == TaskKind::Dg {
                let rep = run_experiment(&c)?;
                let failed = rep
                    .cells
                    .iter()
                    .filter(|c| c.status != CellStatus::Ok)
                    .count();
                let agg = &rep.aggregate;
                Ok(SweepEntry {
                    point: p.clone(),
                    score: agg.source_val_acc.as_ref().map(|m| m.mean),
                    source_val_acc: agg.source_val_acc.as_ref().map(|m| m.mean),
                    heldout_acc: agg.heldout_acc.as_ref().map(|m| m.mean),
                    final_loss: agg.train_loss.as_ref().map(|m| m.mean),
                    failed_runs: failed,
                })
            } else {
                let mut losses = Vec::new();
                let mut failed = 0;
                for &seed in &c.seeds {
                    match run_trajectory(&c, seed) {
                        Ok(tr) => losses.push(tr.records.last().map_or(f64::NAN, |r| r.loss)),
                        Err(Error::Divergence { .. }) => failed += 1,
                        Err(e) => return Err(e),
                    }
                }
                let loss = (!losses.is_empty()).then(|| crate::math::mean(&losses));
                Ok(SweepEntry {
                    point: p.clone(),
                    score: loss.map(|l| -l),
                    source_val_acc: None,
                    heldout_acc: None,
                    final_loss: loss,
                    failed_runs: failed,
                })
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.score.filter(|s| s.is_finite()).map(|s| (i, s)))
        .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i);
    Ok(SweepReport {
        config: cfg.clone(),
        entries,
        selected,
    })
}
