//! Run reports and their JSON/CSV emission.
//!
//! CSV schemas (one header row each):
//!
//! - `cells.csv`: `seed,target,status,best_step,train_loss,source_val_acc,heldout_acc,grad_sq_norm,lambda_max,metric_spectral`
//! - `curvature_fd.csv`: `seed,target,rho,metric_fd`
//! - `summary.csv`: `scope,seed,cells_ok,train_loss,source_val_acc,heldout_acc,metric_spectral`
//!   where `scope` is `seed` for per-seed means and `mean`/`std` for the aggregate.
//!
//! Missing values (failed or diverged cells) are empty cells. Wall-clock
//! time is written to a separate `timing.json` so every other file is a pure
//! function of the configuration.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, OutputFormat};
use crate::curvature::{CurvatureReport, FdEntry};
use crate::error::{Error, Result};
use crate::math::{mean, std_dev};

pub const CELLS_CSV_HEADER: &str =
    "seed,target,status,best_step,train_loss,source_val_acc,heldout_acc,grad_sq_norm,lambda_max,metric_spectral";
pub const CURVATURE_FD_CSV_HEADER: &str = "seed,target,rho,metric_fd";
pub const SUMMARY_CSV_HEADER: &str =
    "scope,seed,cells_ok,train_loss,source_val_acc,heldout_acc,metric_spectral";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    Diverged { step: usize },
    Failed { message: String },
}

impl CellStatus {
    pub fn label(&self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Diverged { .. } => "diverged",
            CellStatus::Failed { .. } => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub seed: u64,
    pub target: usize,
    pub status: CellStatus,
    pub best_step: Option<usize>,
    pub train_loss: Option<f64>,
    pub source_val_acc: Option<f64>,
    pub heldout_acc: Option<f64>,
    pub curvature: Option<CurvatureReport>,
}

impl CellReport {
    pub fn metric_fd_at(&self, rho: f64) -> Option<f64> {
        self.curvature
            .as_ref()?
            .metric_fd
            .iter()
            .find(|e| e.rho == rho)
            .map(|e| e.value)
    }
}

/// Means over the successful cells of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub cells_ok: usize,
    pub train_loss: Option<f64>,
    pub source_val_acc: Option<f64>,
    pub heldout_acc: Option<f64>,
    pub metric_spectral: Option<f64>,
    pub metric_fd: Vec<FdEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Option<Self> {
        (!xs.is_empty()).then(|| MeanStd {
            mean: mean(xs),
            std: std_dev(xs),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdAggregate {
    pub rho: f64,
    pub mean: f64,
    pub std: f64,
}

/// Mean ± sample standard deviation across per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds_ok: usize,
    pub train_loss: Option<MeanStd>,
    pub source_val_acc: Option<MeanStd>,
    pub heldout_acc: Option<MeanStd>,
    pub metric_spectral: Option<MeanStd>,
    pub metric_fd: Vec<FdAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub per_seed: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

fn opt_mean(xs: Vec<f64>) -> Option<f64> {
    (!xs.is_empty()).then(|| mean(&xs))
}

impl RunReport {
    /// Builds per-seed and aggregate summaries from the cells.
    pub fn assemble(config: ExperimentConfig, cells: Vec<CellReport>) -> Self {
        let rhos = config.curvature.rhos.clone();
        let per_seed: Vec<SeedSummary> = config
            .seeds
            .iter()
            .map(|&seed| {
                let ok: Vec<&CellReport> = cells
                    .iter()
                    .filter(|c| c.seed == seed && c.status == CellStatus::Ok)
                    .collect();
                let collect = |f: &dyn Fn(&CellReport) -> Option<f64>| {
                    opt_mean(ok.iter().filter_map(|c| f(c)).collect())
                };
                SeedSummary {
                    seed,
                    cells_ok: ok.len(),
                    train_loss: collect(&|c| c.train_loss),
                    source_val_acc: collect(&|c| c.source_val_acc),
                    heldout_acc: collect(&|c| c.heldout_acc),
                    metric_spectral: collect(&|c| c.curvature.as_ref().map(|r| r.metric_spectral)),
                    metric_fd: rhos
                        .iter()
                        .filter_map(|&rho| {
                            collect(&|c| c.metric_fd_at(rho)).map(|value| FdEntry { rho, value })
                        })
                        .collect(),
                }
            })
            .collect();
        let aggregate = Aggregate::from_seeds(&per_seed, &rhos);
        RunReport {
            config,
            cells,
            per_seed,
            aggregate,
        }
    }
}

impl Aggregate {
    pub fn from_seeds(per_seed: &[SeedSummary], rhos: &[f64]) -> Self {
        let ok: Vec<&SeedSummary> = per_seed.iter().filter(|s| s.cells_ok > 0).collect();
        let stat = |f: &dyn Fn(&SeedSummary) -> Option<f64>| {
            MeanStd::of(&ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
        };
        Aggregate {
            seeds_ok: ok.len(),
            train_loss: stat(&|s| s.train_loss),
            source_val_acc: stat(&|s| s.source_val_acc),
            heldout_acc: stat(&|s| s.heldout_acc),
            metric_spectral: stat(&|s| s.metric_spectral),
            metric_fd: rhos
                .iter()
                .filter_map(|&rho| {
                    stat(&|s| s.metric_fd.iter().find(|e| e.rho == rho).map(|e| e.value)).map(|m| {
                        FdAggregate {
                            rho,
                            mean: m.mean,
                            std: m.std,
                        }
                    })
                })
                .collect(),
        }
    }
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn cells_csv(report: &RunReport) -> String {
    let mut out = format!("{CELLS_CSV_HEADER}\n");
    for c in &report.cells {
        let cur = c.curvature.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.seed,
            c.target,
            c.status.label(),
            c.best_step.map(|s| s.to_string()).unwrap_or_default(),
            cell(c.train_loss),
            cell(c.source_val_acc),
            cell(c.heldout_acc),
            cell(cur.map(|r| r.grad_sq_norm)),
            cell(cur.map(|r| r.lambda_max)),
            cell(cur.map(|r| r.metric_spectral)),
        );
    }
    out
}

pub fn curvature_fd_csv(report: &RunReport) -> String {
    let mut out = format!("{CURVATURE_FD_CSV_HEADER}\n");
    for c in &report.cells {
        if let Some(r) = &c.curvature {
            for e in &r.metric_fd {
                let _ = writeln!(out, "{},{},{},{}", c.seed, c.target, e.rho, e.value);
            }
        }
    }
    out
}

pub fn summary_csv(report: &RunReport) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for s in &report.per_seed {
        let _ = writeln!(
            out,
            "seed,{},{},{},{},{},{}",
            s.seed,
            s.cells_ok,
            cell(s.train_loss),
            cell(s.source_val_acc),
            cell(s.heldout_acc),
            cell(s.metric_spectral)
        );
    }
    let a = &report.aggregate;
    for (scope, pick) in [("mean", true), ("std", false)] {
        let f = |m: &Option<MeanStd>| cell(m.map(|m| if pick { m.mean } else { m.std }));
        let _ = writeln!(
            out,
            "{scope},,{},{},{},{},{}",
            a.seeds_ok,
            f(&a.train_loss),
            f(&a.source_val_acc),
            f(&a.heldout_acc),
            f(&a.metric_spectral)
        );
    }
    out
}

pub(crate) fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

/// Writes the report into `dir` and returns the paths written.
///
/// JSON: `report.json`. CSV: `cells.csv`, `curvature_fd.csv`, `summary.csv`.
pub fn emit_report(
    report: &RunReport,
    dir: &Path,
    format: OutputFormat,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<(&str, String)> = match format {
        OutputFormat::Json => vec![("report.json", to_json(report))],
        OutputFormat::Csv => vec![
            ("cells.csv", cells_csv(report)),
            ("curvature_fd.csv", curvature_fd_csv(report)),
            ("summary.csv", summary_csv(report)),
        ],
    };
    let mut written = Vec::new();
    for (name, body) in files {
        let path = dir.join(name);
        write_file(&path, &body)?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub command: String,
    pub wall_clock_seconds: f64,
}

pub fn write_timing(dir: &Path, timing: &Timing) -> Result<()> {
    write_file(&dir.join("timing.json"), &to_json(timing))
}
