use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use sharpmin_core::config::{
    parse_config_file, parse_config_str, ConfigError, ExperimentConfig, OutputFormat,
};
use sharpmin_core::curvature::CurvatureReport;
use sharpmin_core::experiment::{
    meta_objective_description, run_curvature, run_experiment, run_landscape, run_sweep,
    run_trajectory, with_pool,
};
use sharpmin_core::report::{emit_report, to_json, write_timing, CellStatus, Timing};
use sharpmin_core::Error;

/// Sharpness-aware optimization lab: SAM/MeCAM training, curvature and landscape diagnostics.
#[derive(Parser)]
#[command(name = "sharpmin", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimizer trajectory per seed.
    Optimize(Common),
    /// Leave-one-domain-out sweep on the synthetic multi-domain task.
    Dg(Common),
    /// Curvature sweep at the trained point of each seed.
    Curvature(Common),
    /// Loss-landscape grid around the trained point of each seed.
    Landscape(Common),
    /// Hyperparameter grid search.
    Sweep(Common),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Optimize(_) => "optimize",
            Command::Dg(_) => "dg",
            Command::Curvature(_) => "curvature",
            Command::Landscape(_) => "landscape",
            Command::Sweep(_) => "sweep",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Optimize(c)
            | Command::Dg(c)
            | Command::Curvature(c)
            | Command::Landscape(c)
            | Command::Sweep(c) => c,
        }
    }
}

#[derive(Args)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for several. Replaces `train.seeds`.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory. Replaces `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output format. Replaces `output.format`.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Override a configuration key, e.g. `--set mecam.alpha=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, String)>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got '{s}'"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

enum Failure {
    Config(String),
    AllDiverged(String),
    Io(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::AllDiverged(_) => 3,
            Failure::Io(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::AllDiverged(m) | Failure::Io(m) | Failure::Other(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidSpec(_) => Failure::Config(e.to_string()),
            Error::Io { .. } => Failure::Io(e.to_string()),
            Error::Divergence { .. } => Failure::AllDiverged(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut overrides = common.set.clone();
    if !common.seeds.is_empty() {
        let seeds: Vec<String> = common.seeds.iter().map(|s| s.to_string()).collect();
        overrides.push(("train.seeds".into(), seeds.join(", ")));
    }
    if let Some(out) = &common.out {
        overrides.push(("output.dir".into(), out.display().to_string()));
    }
    if let Some(f) = common.format {
        let name = match f {
            Format::Json => "json",
            Format::Csv => "csv",
        };
        overrides.push(("output.format".into(), name.into()));
    }
    match &common.config {
        Some(path) => parse_config_file(path, &overrides),
        None => parse_config_str("", "<flags>", &overrides),
    }
    .map_err(Failure::from)
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body)
        .map_err(|e| Failure::Io(format!("i/o error on {}: {e}", path.display())))
}

/// Runs `f` per seed; divergences are reported and skipped, and fail the
/// command only when every seed diverged.
fn per_seed<T>(
    cfg: &ExperimentConfig,
    mut f: impl FnMut(u64) -> sharpmin_core::Result<T>,
    mut emit: impl FnMut(u64, T) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let mut diverged = Vec::new();
    for &seed in &cfg.seeds {
        match f(seed) {
            Ok(v) => emit(seed, v)?,
            Err(e @ Error::Divergence { .. }) => {
                eprintln!("seed {seed}: {e}");
                diverged.push(seed);
            }
            Err(e) => return Err(e.into()),
        }
    }
    if diverged.len() == cfg.seeds.len() {
        return Err(Failure::AllDiverged(format!(
            "every seed diverged: {diverged:?}"
        )));
    }
    Ok(())
}

fn curvature_csv(seed: u64, r: &CurvatureReport) -> String {
    let mut out = String::from(
        "seed,rho,metric_fd,grad_sq_norm,lambda_max,metric_spectral,iterations,converged\n",
    );
    for e in &r.metric_fd {
        out.push_str(&format!(
            "{seed},{},{},{},{},{},{},{}\n",
            e.rho,
            e.value,
            r.grad_sq_norm,
            r.lambda_max,
            r.metric_spectral,
            r.iterations,
            r.converged
        ));
    }
    out
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn run(command: &Command, cfg: &ExperimentConfig) -> Result<(), Failure> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    write(&dir.join("config.txt"), &cfg.emit())?;
    let format = cfg.output.format;

    match command {
        Command::Optimize(_) => per_seed(
            cfg,
            |seed| run_trajectory(cfg, seed),
            |seed, tr| {
                let last = tr.records.last().map(|r| r.loss).unwrap_or(f64::NAN);
                println!("seed {seed}: final loss {last:.6e}");
                match format {
                    OutputFormat::Csv => write(
                        &dir.join(format!("trajectory_seed{seed}.csv")),
                        &tr.to_csv(),
                    ),
                    OutputFormat::Json => write(
                        &dir.join(format!("trajectory_seed{seed}.json")),
                        &to_json(&json!({
                            "seed": seed,
                            "optimizer": cfg.optimizer.as_str(),
                            "meta_objective": meta_objective_description(cfg),
                            "records": tr.records,
                            "final_theta": tr.final_theta,
                        })),
                    ),
                }
            },
        ),
        Command::Dg(_) => {
            let report = run_experiment(cfg)?;
            emit_report(&report, dir, format)?;
            for c in &report.cells {
                if let CellStatus::Diverged { step } = c.status {
                    eprintln!(
                        "seed {} target {}: diverged at step {step}",
                        c.seed, c.target
                    );
                }
            }
            if let Some(acc) = &report.aggregate.heldout_acc {
                println!(
                    "held-out accuracy {:.4} ± {:.4} over {} seed(s)",
                    acc.mean, acc.std, report.aggregate.seeds_ok
                );
            }
            let diverged = report
                .cells
                .iter()
                .filter(|c| matches!(c.status, CellStatus::Diverged { .. }))
                .count();
            if diverged == report.cells.len() {
                return Err(Failure::AllDiverged(
                    "every (seed, target) cell diverged".into(),
                ));
            }
            Ok(())
        }
        Command::Curvature(_) => per_seed(
            cfg,
            |seed| run_curvature(cfg, seed),
            |seed, rep| {
                println!(
                    "seed {seed}: lambda_max {} metric_spectral {}",
                    rep.lambda_max, rep.metric_spectral
                );
                match format {
                    OutputFormat::Csv => write(
                        &dir.join(format!("curvature_seed{seed}.csv")),
                        &curvature_csv(seed, &rep),
                    ),
                    OutputFormat::Json => write(
                        &dir.join(format!("curvature_seed{seed}.json")),
                        &to_json(&rep),
                    ),
                }
            },
        ),
        Command::Landscape(_) => per_seed(
            cfg,
            |seed| run_landscape(cfg, seed),
            |seed, grid| {
                println!(
                    "seed {seed}: center loss {} mean rise {}",
                    grid.center_value(),
                    grid.mean_rise()
                );
                grid.write(dir, &format!("landscape_seed{seed}"), seed)
                    .map_err(Failure::from)
            },
        ),
        Command::Sweep(_) => {
            let rep = run_sweep(cfg)?;
            if let Some(i) = rep.selected {
                let p = &rep.entries[i].point;
                println!(
                    "selected lr {} rho {} alpha {} beta {}",
                    p.lr,
                    opt(p.rho),
                    opt(p.alpha),
                    opt(p.beta)
                );
            }
            match format {
                OutputFormat::Json => write(&dir.join("sweep.json"), &to_json(&rep)),
                OutputFormat::Csv => {
                    let mut out =
                        String::from("lr,rho,alpha,beta,score,source_val_acc,heldout_acc,final_loss,failed_runs,selected\n");
                    for (i, e) in rep.entries.iter().enumerate() {
                        out.push_str(&format!(
                            "{},{},{},{},{},{},{},{},{},{}\n",
                            e.point.lr,
                            opt(e.point.rho),
                            opt(e.point.alpha),
                            opt(e.point.beta),
                            opt(e.score),
                            opt(e.source_val_acc),
                            opt(e.heldout_acc),
                            opt(e.final_loss),
                            e.failed_runs,
                            rep.selected == Some(i)
                        ));
                    }
                    write(&dir.join("sweep.csv"), &out)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(cli.command.common()) {
        Ok(cfg) => cfg,
        Err(f) => {
            eprintln!("error: {}", f.message());
            return ExitCode::from(f.code());
        }
    };
    let start = Instant::now();
    let result = with_pool(|| run(&cli.command, &cfg));
    if let Err(f) = result {
        eprintln!("error: {}", f.message());
        return ExitCode::from(f.code());
    }
    let timing = Timing {
        command: cli.command.name().into(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if let Err(e) = write_timing(&cfg.output.dir, &timing) {
        eprintln!("error: {e}");
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
