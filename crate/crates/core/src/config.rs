//! Experiment configuration: a flat `key = value` text format with dotted
//! sections, `#` comments and strict key checking.
//!
//! ```text
//! task = dg
//! optimizer.name = mecam
//! mecam.alpha = 0.1   # SAM-gap weight
//! train.seeds = 0, 1, 2
//! ```
//!
//! Lists are comma separated. Keys that do not exist, or that do not apply
//! to the chosen task/optimizer (e.g. `mecam.beta` with `optimizer.name = sam`),
//! are rejected with their location.

// Diagnostics carry both keys and their source locations; they are built once per run.
#![allow(clippy::result_large_err)]

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::DatasetSpec;
use crate::objectives::DoubleWellSpec;
use crate::optim::{BaseOptimizer, MecamConfig, OptimizerConfig};
use crate::perturbation::{Decay, PerturbConfig, ScheduleConfig, DEFAULT_EPSILON};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Location {
    pub source: String,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.source)
        } else {
            write!(f, "{}:{}", self.source, self.line)
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{at}: syntax error: {message}")]
    Syntax { at: Location, message: String },

    #[error("{at}: key '{key}' given more than once")]
    DuplicateKey { key: String, at: Location },

    #[error("{at}: unknown key '{key}'")]
    UnknownKey { key: String, at: Location },

    #[error("{at}: key '{key}' does not apply: {reason}")]
    InapplicableKey {
        key: String,
        at: Location,
        reason: String,
    },

    #[error("missing required key '{key}'")]
    MissingKey { key: String },

    #[error("{at}: key '{key}' expects {expected}, got '{value}'")]
    TypeMismatch {
        key: String,
        at: Location,
        expected: &'static str,
        value: String,
    },

    #[error("{at}: invalid value for '{key}': {message}")]
    InvalidValue {
        key: String,
        at: Location,
        message: String,
    },

    #[error("constraint between '{first}' ({first_at}) and '{second}' ({second_at}) violated: {message}")]
    Constraint {
        first: String,
        first_at: Location,
        second: String,
        second_at: Location,
        message: String,
    },

    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    DoubleWell,
    Nonconvex,
    Dg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Gd,
    Momentum,
    AdaptiveMoment,
    Sam,
    Mecam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseKind {
    Gd,
    Momentum,
    AdaptiveMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Json,
    Csv,
}

macro_rules! keyword_enum {
    ($ty:ty { $($name:literal => $var:expr),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                $(if self == $var { return $name; })+
                unreachable!()
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($var),)+
                    _ => Err(format!("one of {}", [$($name),+].join(", "))),
                }
            }
        }
    };
}

keyword_enum!(TaskKind {
    "quadratic" => TaskKind::Quadratic,
    "double-well" => TaskKind::DoubleWell,
    "nonconvex" => TaskKind::Nonconvex,
    "dg" => TaskKind::Dg,
});
keyword_enum!(OptimizerKind {
    "gd" => OptimizerKind::Gd,
    "momentum" => OptimizerKind::Momentum,
    "adaptive-moment" => OptimizerKind::AdaptiveMoment,
    "sam" => OptimizerKind::Sam,
    "mecam" => OptimizerKind::Mecam,
});
keyword_enum!(BaseKind {
    "gd" => BaseKind::Gd,
    "momentum" => BaseKind::Momentum,
    "adaptive-moment" => BaseKind::AdaptiveMoment,
});
keyword_enum!(OutputFormat {
    "json" => OutputFormat::Json,
    "csv" => OutputFormat::Csv,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureConfig {
    pub rhos: Vec<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub extent: f64,
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lr: Vec<f64>,
    pub rho: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub optimizer: OptimizerKind,
    /// Update rule that SAM/MeCAM hand their gradient to.
    pub base: BaseKind,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub guard: f64,
    pub schedule: ScheduleConfig,
    pub perturb: PerturbConfig,
    pub alpha: f64,
    pub beta: f64,
    pub mixstyle_beta: f64,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub data: DatasetSpec,
    pub val_fraction: f64,
    /// Held-out domains to evaluate; empty means every domain.
    pub targets: Vec<usize>,
    pub model: ModelConfig,
    pub quadratic_diag: Vec<f64>,
    pub double_well: DoubleWellSpec,
    pub nonconvex_dim: usize,
    /// Starting point for analytic tasks; empty means the task default.
    pub init_point: Vec<f64>,
    pub curvature: CurvatureConfig,
    pub landscape: LandscapeConfig,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
}

pub const DEFAULT_DG_LR: f64 = 3e-3;

impl ExperimentConfig {
    /// Defaults for a task/optimizer pair.
    pub fn defaults(task: TaskKind, optimizer: OptimizerKind) -> Self {
        let lr = match task {
            TaskKind::Quadratic => 0.1,
            TaskKind::DoubleWell => 0.01,
            TaskKind::Nonconvex => 1e-3,
            TaskKind::Dg => DEFAULT_DG_LR,
        };
        let base = match (task, optimizer) {
            (_, OptimizerKind::Gd) => BaseKind::Gd,
            (_, OptimizerKind::Momentum) => BaseKind::Momentum,
            (_, OptimizerKind::AdaptiveMoment) => BaseKind::AdaptiveMoment,
            (TaskKind::Dg, _) => BaseKind::AdaptiveMoment,
            _ => BaseKind::Gd,
        };
        ExperimentConfig {
            task,
            optimizer,
            base,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            guard: 1e-8,
            schedule: ScheduleConfig {
                lr,
                decay: Decay::Constant,
            },
            perturb: PerturbConfig {
                rho: 0.1,
                epsilon: DEFAULT_EPSILON,
                decay: Decay::Constant,
            },
            alpha: 0.1,
            beta: 0.1,
            mixstyle_beta: 0.1,
            steps: if task == TaskKind::Dg { 1500 } else { 1000 },
            seeds: vec![0, 1, 2],
            batch_size: 32,
            checkpoint_every: 50,
            data: DatasetSpec::default(),
            val_fraction: 0.2,
            targets: Vec::new(),
            model: ModelConfig {
                hidden: 32,
                dropout: 0.5,
                weight_decay: 1e-4,
            },
            quadratic_diag: vec![1.0, 4.0],
            double_well: DoubleWellSpec::default(),
            nonconvex_dim: 10,
            init_point: Vec::new(),
            curvature: CurvatureConfig {
                rhos: crate::curvature::DEFAULT_RHOS.to_vec(),
                max_iters: 200,
                tol: 1e-6,
            },
            landscape: LandscapeConfig {
                extent: crate::landscape::DEFAULT_EXTENT,
                resolution: crate::landscape::DEFAULT_RESOLUTION,
            },
            sweep: SweepConfig {
                lr: vec![1e-3, 3e-3, 1e-2],
                rho: vec![0.01, 0.05, 0.1, 0.2],
                alpha: vec![0.05, 0.1, 0.15, 0.2],
                beta: vec![0.05, 0.1, 0.15, 0.2],
            },
            output: OutputConfig {
                dir: PathBuf::from("out"),
                format: OutputFormat::Json,
            },
        }
    }

    pub fn base_optimizer(&self) -> BaseOptimizer {
        match self.base {
            BaseKind::Gd => BaseOptimizer::Gd,
            BaseKind::Momentum => BaseOptimizer::Momentum {
                momentum: self.momentum,
            },
            BaseKind::AdaptiveMoment => BaseOptimizer::AdaptiveMoment {
                beta1: self.beta1,
                beta2: self.beta2,
                guard: self.guard,
            },
        }
    }

    pub fn optimizer_config(&self) -> crate::Result<OptimizerConfig> {
        let base = self.base_optimizer();
        let schedule = ScheduleConfig::new(self.schedule.lr, self.schedule.decay)?;
        let perturb =
            PerturbConfig::new(self.perturb.rho, self.perturb.epsilon, self.perturb.decay)?;
        match self.optimizer {
            OptimizerKind::Gd | OptimizerKind::Momentum | OptimizerKind::AdaptiveMoment => {
                OptimizerConfig::erm(base, schedule)
            }
            OptimizerKind::Sam => OptimizerConfig::sam(base, schedule, perturb),
            OptimizerKind::Mecam => Ok(OptimizerConfig::mecam(MecamConfig::new(
                self.alpha, self.beta, perturb, schedule, base,
            )?)),
        }
    }

    /// Whether `key` may appear for this task/optimizer; `Err` carries the reason.
    fn applicable(&self, key: &str) -> Result<(), String> {
        let section = key.split('.').next().unwrap_or(key);
        let perturbs = matches!(self.optimizer, OptimizerKind::Sam | OptimizerKind::Mecam);
        let opt = self.optimizer.as_str();
        let task = self.task.as_str();
        let ok = match (section, key) {
            (_, "optimizer.base") => perturbs,
            ("perturb", _) | (_, "sweep.rho") => perturbs,
            ("mecam", _) | (_, "sweep.alpha") | (_, "sweep.beta") => {
                self.optimizer == OptimizerKind::Mecam
            }
            ("data", _)
            | ("model", _)
            | (_, "train.batch_size")
            | (_, "train.checkpoint_every") => self.task == TaskKind::Dg,
            ("quadratic", _) => self.task == TaskKind::Quadratic,
            ("double_well", _) => self.task == TaskKind::DoubleWell,
            ("nonconvex", _) => self.task == TaskKind::Nonconvex,
            ("init", _) => self.task != TaskKind::Dg,
            _ => true,
        };
        if ok {
            return Ok(());
        }
        Err(match section {
            "perturb" | "mecam" | "sweep" | "optimizer" => format!("not used by optimizer '{opt}'"),
            _ => format!("not used by task '{task}'"),
        })
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            if self.applicable(key).is_err() || (*key == "init.point" && self.init_point.is_empty())
            {
                continue;
            }
            if *key == "data.targets" && self.targets.is_empty() {
                continue;
            }
            out.push_str(&format!("{key} = {}\n", self.get(key)));
        }
        out
    }

    fn get(&self, key: &str) -> String {
        fn list<T: ToString>(xs: &[T]) -> String {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        }
        match key {
            "task" => self.task.as_str().into(),
            "optimizer.name" => self.optimizer.as_str().into(),
            "optimizer.base" => self.base.as_str().into(),
            "optimizer.momentum" => self.momentum.to_string(),
            "optimizer.beta1" => self.beta1.to_string(),
            "optimizer.beta2" => self.beta2.to_string(),
            "optimizer.guard" => self.guard.to_string(),
            "schedule.lr" => self.schedule.lr.to_string(),
            "schedule.decay" => self.schedule.decay.as_str().into(),
            "perturb.rho" => self.perturb.rho.to_string(),
            "perturb.epsilon" => self.perturb.epsilon.to_string(),
            "perturb.decay" => self.perturb.decay.as_str().into(),
            "mecam.alpha" => self.alpha.to_string(),
            "mecam.beta" => self.beta.to_string(),
            "mecam.mixstyle_beta" => self.mixstyle_beta.to_string(),
            "train.steps" => self.steps.to_string(),
            "train.seeds" => list(&self.seeds),
            "train.batch_size" => self.batch_size.to_string(),
            "train.checkpoint_every" => self.checkpoint_every.to_string(),
            "data.classes" => self.data.classes.to_string(),
            "data.domains" => self.data.domains.to_string(),
            "data.per_domain" => self.data.per_domain.to_string(),
            "data.channels" => self.data.channels.to_string(),
            "data.positions" => self.data.positions.to_string(),
            "data.style_spread" => self.data.style_spread.to_string(),
            "data.val_fraction" => self.val_fraction.to_string(),
            "data.targets" => list(&self.targets),
            "model.hidden" => self.model.hidden.to_string(),
            "model.dropout" => self.model.dropout.to_string(),
            "model.weight_decay" => self.model.weight_decay.to_string(),
            "quadratic.diag" => list(&self.quadratic_diag),
            "double_well.sharp_center" => self.double_well.sharp_center.to_string(),
            "double_well.flat_center" => self.double_well.flat_center.to_string(),
            "double_well.sharp_curvature" => self.double_well.sharp_curvature.to_string(),
            "double_well.flat_curvature" => self.double_well.flat_curvature.to_string(),
            "double_well.sharp_depth" => self.double_well.sharp_depth.to_string(),
            "double_well.flat_depth" => self.double_well.flat_depth.to_string(),
            "nonconvex.dim" => self.nonconvex_dim.to_string(),
            "init.point" => list(&self.init_point),
            "curvature.rhos" => list(&self.curvature.rhos),
            "curvature.max_iters" => self.curvature.max_iters.to_string(),
            "curvature.tol" => self.curvature.tol.to_string(),
            "landscape.extent" => self.landscape.extent.to_string(),
            "landscape.resolution" => self.landscape.resolution.to_string(),
            "sweep.lr" => list(&self.sweep.lr),
            "sweep.rho" => list(&self.sweep.rho),
            "sweep.alpha" => list(&self.sweep.alpha),
            "sweep.beta" => list(&self.sweep.beta),
            "output.dir" => self.output.dir.display().to_string(),
            "output.format" => self.output.format.as_str().into(),
            other => unreachable!("unlisted key {other}"),
        }
    }

    fn set(&mut self, key: &str, value: &str, at: &Location) -> Result<(), ConfigError> {
        let p = Parser { key, value, at };
        match key {
            "task" | "optimizer.name" => {}
            "optimizer.base" => self.base = p.keyword()?,
            "optimizer.momentum" => self.momentum = p.float()?,
            "optimizer.beta1" => self.beta1 = p.float()?,
            "optimizer.beta2" => self.beta2 = p.float()?,
            "optimizer.guard" => self.guard = p.float()?,
            "schedule.lr" => self.schedule.lr = p.float()?,
            "schedule.decay" => self.schedule.decay = p.keyword()?,
            "perturb.rho" => self.perturb.rho = p.float()?,
            "perturb.epsilon" => self.perturb.epsilon = p.float()?,
            "perturb.decay" => self.perturb.decay = p.keyword()?,
            "mecam.alpha" => self.alpha = p.float()?,
            "mecam.beta" => self.beta = p.float()?,
            "mecam.mixstyle_beta" => self.mixstyle_beta = p.float()?,
            "train.steps" => self.steps = p.int()?,
            "train.seeds" => self.seeds = p.list()?,
            "train.batch_size" => self.batch_size = p.int()?,
            "train.checkpoint_every" => self.checkpoint_every = p.int()?,
            "data.classes" => self.data.classes = p.int()?,
            "data.domains" => self.data.domains = p.int()?,
            "data.per_domain" => self.data.per_domain = p.int()?,
            "data.channels" => self.data.channels = p.int()?,
            "data.positions" => self.data.positions = p.int()?,
            "data.style_spread" => self.data.style_spread = p.float()?,
            "data.val_fraction" => self.val_fraction = p.float()?,
            "data.targets" => self.targets = p.list()?,
            "model.hidden" => self.model.hidden = p.int()?,
            "model.dropout" => self.model.dropout = p.float()?,
            "model.weight_decay" => self.model.weight_decay = p.float()?,
            "quadratic.diag" => self.quadratic_diag = p.list()?,
            "double_well.sharp_center" => self.double_well.sharp_center = p.float()?,
            "double_well.flat_center" => self.double_well.flat_center = p.float()?,
            "double_well.sharp_curvature" => self.double_well.sharp_curvature = p.float()?,
            "double_well.flat_curvature" => self.double_well.flat_curvature = p.float()?,
            "double_well.sharp_depth" => self.double_well.sharp_depth = p.float()?,
            "double_well.flat_depth" => self.double_well.flat_depth = p.float()?,
            "nonconvex.dim" => self.nonconvex_dim = p.int()?,
            "init.point" => self.init_point = p.list()?,
            "curvature.rhos" => self.curvature.rhos = p.list()?,
            "curvature.max_iters" => self.curvature.max_iters = p.int()?,
            "curvature.tol" => self.curvature.tol = p.float()?,
            "landscape.extent" => self.landscape.extent = p.float()?,
            "landscape.resolution" => self.landscape.resolution = p.int()?,
            "sweep.lr" => self.sweep.lr = p.list()?,
            "sweep.rho" => self.sweep.rho = p.list()?,
            "sweep.alpha" => self.sweep.alpha = p.list()?,
            "sweep.beta" => self.sweep.beta = p.list()?,
            "output.dir" => self.output.dir = PathBuf::from(value),
            "output.format" => self.output.format = p.keyword()?,
            other => unreachable!("unlisted key {other}"),
        }
        Ok(())
    }

    fn validate(&self, locs: &BTreeMap<String, Location>) -> Result<(), ConfigError> {
        let at = |key: &str| {
            locs.get(key).cloned().unwrap_or(Location {
                source: "default".into(),
                line: 0,
            })
        };
        let invalid = |key: &str, message: String| ConfigError::InvalidValue {
            key: key.into(),
            at: at(key),
            message,
        };
        let positive = |key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be positive")))
            }
        };
        let unit_open = |key: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must lie in (0, 1)")))
            }
        };
        let at_least = |key: &str, v: usize, min: usize| {
            if v >= min {
                Ok(())
            } else {
                Err(invalid(key, format!("{v} must be at least {min}")))
            }
        };

        positive("schedule.lr", self.schedule.lr)?;
        at_least("train.steps", self.steps, 1)?;
        if self.seeds.is_empty() {
            return Err(invalid(
                "train.seeds",
                "at least one seed is required".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid(
                "optimizer.momentum",
                format!("{} outside [0, 1)", self.momentum),
            ));
        }
        unit_open("optimizer.beta1", self.beta1)?;
        unit_open("optimizer.beta2", self.beta2)?;
        positive("optimizer.guard", self.guard)?;
        if matches!(self.optimizer, OptimizerKind::Sam | OptimizerKind::Mecam) {
            positive("perturb.rho", self.perturb.rho)?;
            positive("perturb.epsilon", self.perturb.epsilon)?;
        }
        if self.optimizer == OptimizerKind::Mecam {
            unit_open("mecam.alpha", self.alpha)?;
            unit_open("mecam.beta", self.beta)?;
            positive("mecam.mixstyle_beta", self.mixstyle_beta)?;
            let constraint = |message: String| ConfigError::Constraint {
                first: "mecam.beta".into(),
                first_at: at("mecam.beta"),
                second: "mecam.alpha".into(),
                second_at: at("mecam.alpha"),
                message,
            };
            if self.beta > self.alpha {
                return Err(constraint(format!(
                    "beta = {} must not exceed alpha = {}",
                    self.beta, self.alpha
                )));
            }
            if self.alpha + self.beta >= 1.0 {
                return Err(constraint(format!(
                    "alpha + beta = {} must stay below 1",
                    self.alpha + self.beta
                )));
            }
        }
        match self.task {
            TaskKind::Dg => {
                at_least("train.batch_size", self.batch_size, 2)?;
                at_least("train.checkpoint_every", self.checkpoint_every, 1)?;
                at_least("data.classes", self.data.classes, 2)?;
                at_least("data.domains", self.data.domains, 3)?;
                at_least("data.per_domain", self.data.per_domain, self.data.classes)?;
                at_least("data.channels", self.data.channels, 1)?;
                at_least("data.positions", self.data.positions, 2)?;
                if !(self.data.style_spread >= 0.0) {
                    return Err(invalid("data.style_spread", "must be non-negative".into()));
                }
                unit_open("data.val_fraction", self.val_fraction)?;
                if let Some(t) = self.targets.iter().find(|&&t| t >= self.data.domains) {
                    return Err(invalid(
                        "data.targets",
                        format!("domain {t} does not exist"),
                    ));
                }
                at_least("model.hidden", self.model.hidden, 1)?;
                if !(0.0..1.0).contains(&self.model.dropout) {
                    return Err(invalid(
                        "model.dropout",
                        format!("{} outside [0, 1)", self.model.dropout),
                    ));
                }
                if !(self.model.weight_decay >= 0.0) {
                    return Err(invalid("model.weight_decay", "must be non-negative".into()));
                }
            }
            TaskKind::Quadratic => {
                if self.quadratic_diag.is_empty() {
                    return Err(invalid(
                        "quadratic.diag",
                        "at least one entry is required".into(),
                    ));
                }
                self.check_init("init.point", self.quadratic_diag.len(), &invalid)?;
            }
            TaskKind::DoubleWell => {
                crate::objectives::double_well_objective(self.double_well)
                    .map_err(|e| invalid("double_well.sharp_curvature", e.to_string()))?;
                self.check_init("init.point", 1, &invalid)?;
            }
            TaskKind::Nonconvex => {
                at_least("nonconvex.dim", self.nonconvex_dim, 2)?;
                self.check_init("init.point", self.nonconvex_dim, &invalid)?;
            }
        }
        if self.curvature.rhos.is_empty() {
            return Err(invalid(
                "curvature.rhos",
                "at least one radius is required".into(),
            ));
        }
        for &r in &self.curvature.rhos {
            positive("curvature.rhos", r)?;
        }
        at_least("curvature.max_iters", self.curvature.max_iters, 1)?;
        positive("curvature.tol", self.curvature.tol)?;
        positive("landscape.extent", self.landscape.extent)?;
        at_least("landscape.resolution", self.landscape.resolution, 1)?;
        for (key, xs) in [
            ("sweep.lr", &self.sweep.lr),
            ("sweep.rho", &self.sweep.rho),
            ("sweep.alpha", &self.sweep.alpha),
            ("sweep.beta", &self.sweep.beta),
        ] {
            if xs.is_empty() {
                return Err(invalid(key, "sweep grid must not be empty".into()));
            }
            for &x in xs {
                positive(key, x)?;
            }
        }
        Ok(())
    }

    fn check_init(
        &self,
        key: &str,
        dim: usize,
        invalid: &dyn Fn(&str, String) -> ConfigError,
    ) -> Result<(), ConfigError> {
        if !self.init_point.is_empty() && self.init_point.len() != dim {
            return Err(invalid(
                key,
                format!(
                    "{} coordinates given, the task has dimension {dim}",
                    self.init_point.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Every recognised key, in emission order.
pub const KEYS: &[&str] = &[
    "task",
    "optimizer.name",
    "optimizer.base",
    "optimizer.momentum",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.guard",
    "schedule.lr",
    "schedule.decay",
    "perturb.rho",
    "perturb.epsilon",
    "perturb.decay",
    "mecam.alpha",
    "mecam.beta",
    "mecam.mixstyle_beta",
    "train.steps",
    "train.seeds",
    "train.batch_size",
    "train.checkpoint_every",
    "data.classes",
    "data.domains",
    "data.per_domain",
    "data.channels",
    "data.positions",
    "data.style_spread",
    "data.val_fraction",
    "data.targets",
    "model.hidden",
    "model.dropout",
    "model.weight_decay",
    "quadratic.diag",
    "double_well.sharp_center",
    "double_well.flat_center",
    "double_well.sharp_curvature",
    "double_well.flat_curvature",
    "double_well.sharp_depth",
    "double_well.flat_depth",
    "nonconvex.dim",
    "init.point",
    "curvature.rhos",
    "curvature.max_iters",
    "curvature.tol",
    "landscape.extent",
    "landscape.resolution",
    "sweep.lr",
    "sweep.rho",
    "sweep.alpha",
    "sweep.beta",
    "output.dir",
    "output.format",
];

struct Parser<'a> {
    key: &'a str,
    value: &'a str,
    at: &'a Location,
}

impl Parser<'_> {
    fn mismatch(&self, expected: &'static str) -> ConfigError {
        ConfigError::TypeMismatch {
            key: self.key.into(),
            at: self.at.clone(),
            expected,
            value: self.value.into(),
        }
    }

    fn float(&self) -> Result<f64, ConfigError> {
        match self.value.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.mismatch("a finite number")),
        }
    }

    fn int<T: FromStr>(&self) -> Result<T, ConfigError> {
        self.value
            .parse()
            .map_err(|_| self.mismatch("a non-negative integer"))
    }

    fn keyword<T: FromStr<Err = String>>(&self) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| {
            let expected = match self.key {
                "optimizer.base" => "one of gd, momentum, adaptive-moment",
                "output.format" => "one of json, csv",
                _ => "one of constant, inverse-sqrt",
            };
            self.mismatch(expected)
        })
    }

    fn list<T: ListItem>(&self) -> Result<Vec<T>, ConfigError> {
        if self.value.trim().is_empty() {
            return Ok(Vec::new());
        }
        self.value
            .split(',')
            .map(|s| T::parse_item(s.trim()).ok_or_else(|| self.mismatch(T::EXPECTED)))
            .collect()
    }
}

trait ListItem: Sized {
    const EXPECTED: &'static str;
    fn parse_item(s: &str) -> Option<Self>;
}

impl ListItem for f64 {
    const EXPECTED: &'static str = "a comma-separated list of numbers";
    fn parse_item(s: &str) -> Option<Self> {
        s.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

impl ListItem for u64 {
    const EXPECTED: &'static str = "a comma-separated list of non-negative integers";
    fn parse_item(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

impl ListItem for usize {
    const EXPECTED: &'static str = "a comma-separated list of non-negative integers";
    fn parse_item(s: &str) -> Option<Self> {
        s.parse().ok()
    }
}

struct Entry {
    key: String,
    value: String,
    at: Location,
}

fn lex(text: &str, source: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut entries: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let at = Location {
            source: source.into(),
            line: i + 1,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                at,
                message: format!("expected 'key = value', got '{line}'"),
            });
        };
        let key = k.trim();
        let valid = !key.is_empty()
            && key.split('.').all(|part| {
                !part.is_empty()
                    && part
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
            });
        if !valid {
            return Err(ConfigError::Syntax {
                at,
                message: format!("malformed key '{key}'"),
            });
        }
        if entries.iter().any(|e| e.key == key) {
            return Err(ConfigError::DuplicateKey {
                key: key.into(),
                at,
            });
        }
        entries.push(Entry {
            key: key.into(),
            value: v.trim().into(),
            at,
        });
    }
    Ok(entries)
}

/// Parses config text, then applies `overrides` (e.g. from `--set key=value`) on top.
pub fn parse_config_str(
    text: &str,
    source: &str,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let mut entries = lex(text, source)?;
    for (n, (k, v)) in overrides.iter().enumerate() {
        let flag = format!("{k}={v}");
        let mut one = lex(&flag, "--set")?;
        let mut e = one.pop().ok_or_else(|| ConfigError::Syntax {
            at: Location {
                source: "--set".into(),
                line: n + 1,
            },
            message: "empty override".into(),
        })?;
        e.at.line = n + 1;
        entries.retain(|x| x.key != e.key);
        entries.push(e);
    }

    for e in &entries {
        if !KEYS.contains(&e.key.as_str()) {
            return Err(ConfigError::UnknownKey {
                key: e.key.clone(),
                at: e.at.clone(),
            });
        }
    }
    let find = |key: &str| entries.iter().find(|e| e.key == key);
    let required = |key: &str| find(key).ok_or_else(|| ConfigError::MissingKey { key: key.into() });
    let task_e = required("task")?;
    let task: TaskKind = Parser {
        key: "task",
        value: &task_e.value,
        at: &task_e.at,
    }
    .keyword_with("one of quadratic, double-well, nonconvex, dg")?;
    let opt_e = required("optimizer.name")?;
    let optimizer: OptimizerKind = Parser {
        key: "optimizer.name",
        value: &opt_e.value,
        at: &opt_e.at,
    }
    .keyword_with("one of gd, momentum, adaptive-moment, sam, mecam")?;

    let mut cfg = ExperimentConfig::defaults(task, optimizer);
    let mut locs = BTreeMap::new();
    for e in &entries {
        if let Err(reason) = cfg.applicable(&e.key) {
            return Err(ConfigError::InapplicableKey {
                key: e.key.clone(),
                at: e.at.clone(),
                reason,
            });
        }
        cfg.set(&e.key, &e.value, &e.at)?;
        locs.insert(e.key.clone(), e.at.clone());
    }
    cfg.validate(&locs)?;
    Ok(cfg)
}

impl Parser<'_> {
    fn keyword_with<T: FromStr<Err = String>>(
        &self,
        expected: &'static str,
    ) -> Result<T, ConfigError> {
        self.value.parse().map_err(|_| self.mismatch(expected))
    }
}

pub fn parse_config_file(
    path: &Path,
    overrides: &[(String, String)],
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text, &path.display().to_string(), overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config_str(text, "test.cfg", &[])
    }

    #[test]
    fn minimal_dg_defaults() {
        let cfg = parse("task = dg\noptimizer.name = mecam\n").unwrap();
        assert_eq!(cfg.perturb.rho, 0.1);
        assert_eq!(cfg.alpha, 0.1);
        assert_eq!(cfg.beta, 0.1);
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.model.dropout, 0.5);
        assert_eq!(cfg.model.weight_decay, 1e-4);
        assert_eq!(cfg.base, BaseKind::AdaptiveMoment);
        assert!(cfg.optimizer_config().is_ok());
    }

    #[test]
    fn beta_above_alpha_names_both_keys() {
        let err = parse("task = dg\noptimizer.name = mecam\nmecam.alpha = 0.1\nmecam.beta = 0.2\n")
            .unwrap_err();
        match &err {
            ConfigError::Constraint {
                first,
                second,
                first_at,
                second_at,
                ..
            } => {
                assert_eq!(first, "mecam.beta");
                assert_eq!(second, "mecam.alpha");
                assert_eq!(first_at.line, 4);
                assert_eq!(second_at.line, 3);
            }
            other => panic!("{other:?}"),
        }
        let msg = err.to_string();
        assert!(msg.contains("mecam.alpha") && msg.contains("mecam.beta"));
    }

    #[test]
    fn round_trip() {
        for text in [
            "task = dg\noptimizer.name = mecam\nschedule.lr = 0.003\ntrain.seeds = 4, 5\ndata.targets = 1, 3\n",
            "task = quadratic\noptimizer.name = gd\nquadratic.diag = 1, 4, 9\ninit.point = 1, 0.5, -0.25\n",
            "task = double-well\noptimizer.name = sam\nperturb.rho = 0.3\n",
            "task = nonconvex\noptimizer.name = adaptive-moment\nschedule.decay = inverse-sqrt\n",
        ] {
            let cfg = parse(text).unwrap();
            let again = parse(&cfg.emit()).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(cfg.emit(), again.emit());
        }
    }

    #[test]
    fn distinct_diagnostics() {
        assert!(
            matches!(parse("optimizer.name = gd\n"), Err(ConfigError::MissingKey { key }) if key == "task")
        );
        assert!(matches!(
            parse("task = dg\noptimizer.name = gd\nschedule.lr = fast\n"),
            Err(ConfigError::TypeMismatch { key, at, .. }) if key == "schedule.lr" && at.line == 3
        ));
        assert!(matches!(
            parse("task = dg\noptimizer.name = gd\nschedule.rho = 0.1\n"),
            Err(ConfigError::UnknownKey { key, at }) if key == "schedule.rho" && at.line == 3
        ));
        assert!(matches!(
            parse("task = dg\noptimizer.name = sam\nmecam.beta = 0.1\n"),
            Err(ConfigError::InapplicableKey { key, .. }) if key == "mecam.beta"
        ));
        assert!(matches!(
            parse("task = dg\noptimizer.name = gd\nperturb.rho = 0.1\n"),
            Err(ConfigError::InapplicableKey { .. })
        ));
        assert!(matches!(
            parse("task = quadratic\noptimizer.name = gd\nmodel.hidden = 3\n"),
            Err(ConfigError::InapplicableKey { .. })
        ));
        assert!(matches!(
            parse("task dg\n"),
            Err(ConfigError::Syntax { .. })
        ));
        assert!(matches!(
            parse("task = dg\ntask = dg\n"),
            Err(ConfigError::DuplicateKey { at, .. }) if at.line == 2
        ));
        assert!(matches!(
            parse("task = dg\noptimizer.name = gd\ntrain.seeds =\n"),
            Err(ConfigError::InvalidValue { key, .. }) if key == "train.seeds"
        ));
    }

    #[test]
    fn comments_and_overrides() {
        let text =
            "# experiment\ntask = dg   # synthetic\noptimizer.name = mecam\nmecam.alpha = 0.2\n";
        let cfg = parse_config_str(
            text,
            "x",
            &[
                ("mecam.beta".into(), "0.15".into()),
                ("mecam.alpha".into(), "0.3".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.beta, 0.15);
        let err = parse_config_str(text, "x", &[("mecam.beta".into(), "0.25".into())]).unwrap_err();
        assert!(matches!(err, ConfigError::Constraint { second_at, .. } if second_at.line == 4));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            parse_config_file(Path::new("/nonexistent/cfg"), &[]),
            Err(ConfigError::Io { .. })
        ));
    }
}
