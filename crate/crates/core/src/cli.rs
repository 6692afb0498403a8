//! Command-line runner.
//!
//! Settings resolve as flags, then the `--config` file, then per-command
//! defaults. Config files hold flat `key = value` lines using the flag names;
//! `-` and `_` are interchangeable in keys.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{self, RunSpec};
use crate::optim::{Hyperparams, OptimizerKind};
use crate::problems::mlp::{fd_check, load_csv, synthetic_conflicting};
use crate::problems::{
    mlp_task_gradients, Didactic2d, MlpProblem, MlpSpec, MultiTaskProblem, QuadraticFamily, QuadraticProblem,
    QuadraticTask,
};
use crate::seeding::{keyed_rng, Domain};
use crate::surgery::Method;
use crate::telemetry::{write_json, RunHeader, RunLog, RunSummary};
use crate::vecmath::Vector;
use crate::verify::{run_suite, SweepConfig, TheoremReport};

/// Largest relative error accepted by `mlp --fd-check`.
pub const FD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "pcgrad", version, about = "Multi-task gradient surgery experiments and verification sweeps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Two-task 2D landscape from the fixed start [0.5, -3].
    Landscape(LandscapeArgs),
    /// Random multi-task quadratic families.
    Quadratic(QuadraticArgs),
    /// Task-conditioned MLP regression with stratified minibatches.
    Mlp(MlpArgs),
    /// Randomized sweeps checking the convergence statements.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Run seed (required here or in the config file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seeds `seed..seed+N` concurrently into `<out>/seed-<s>/`.
    #[arg(long)]
    pub parallel: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub problem: Option<String>,
    /// plain, pcgrad, direction_only or magnitude_only.
    #[arg(long)]
    pub method: Option<String>,
    /// sgd, heavy_ball or adam.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Heavy-ball momentum.
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub iters: Option<u64>,
    /// Telemetry rows and θ snapshots every this many updates, plus the last.
    #[arg(long)]
    pub snapshot_every: Option<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Default, Args)]
pub struct QuadraticArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Smallest Hessian eigenvalue.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Largest Hessian eigenvalue.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// All tasks share one center.
    #[arg(long)]
    pub shared_center: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct MlpArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// CSV of `features…, target, task_id` rows; synthetic data when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Samples per task in each minibatch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Synthetic samples per task.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Synthetic feature count.
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Synthetic task count.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Compare backpropagated and finite-difference gradients before training.
    #[arg(long)]
    pub fd_check: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overrides every sweep's trial count.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Run each sweep on one thread.
    #[arg(long)]
    pub serial: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubcommandKind {
    Landscape,
    Quadratic,
    Mlp,
    Verify,
}

impl SubcommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SubcommandKind::Landscape => "landscape",
            SubcommandKind::Quadratic => "quadratic",
            SubcommandKind::Mlp => "mlp",
            SubcommandKind::Verify => "verify",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        const TRAIN: [&str; 11] = [
            "seed",
            "out",
            "parallel",
            "problem",
            "method",
            "optimizer",
            "lr",
            "momentum",
            "iters",
            "snapshot_every",
            "config",
        ];
        match self {
            SubcommandKind::Landscape => &TRAIN,
            SubcommandKind::Quadratic => &[
                "seed",
                "out",
                "parallel",
                "problem",
                "method",
                "optimizer",
                "lr",
                "momentum",
                "iters",
                "snapshot_every",
                "config",
                "dim",
                "tasks",
                "mu",
                "lambda",
                "shared_center",
            ],
            SubcommandKind::Mlp => &[
                "seed",
                "out",
                "parallel",
                "problem",
                "method",
                "optimizer",
                "lr",
                "momentum",
                "iters",
                "snapshot_every",
                "config",
                "data",
                "hidden",
                "batch",
                "samples",
                "input_dim",
                "tasks",
                "fd_check",
            ],
            SubcommandKind::Verify => &["seed", "out", "parallel", "config", "trials", "serial"],
        }
    }

    fn defaults(self) -> &'static [(&'static str, &'static str)] {
        match self {
            SubcommandKind::Landscape => &[
                ("out", "out/landscape"),
                ("parallel", "1"),
                ("problem", "didactic2d"),
                ("method", "pcgrad"),
                ("optimizer", "adam"),
                ("lr", "0.001"),
                ("iters", "200000"),
                ("snapshot_every", "100"),
            ],
            SubcommandKind::Quadratic => &[
                ("out", "out/quadratic"),
                ("parallel", "1"),
                ("problem", "random"),
                ("method", "pcgrad"),
                ("optimizer", "sgd"),
                ("iters", "1000"),
                ("snapshot_every", "10"),
                ("dim", "10"),
                ("tasks", "2"),
                ("mu", "0.1"),
                ("lambda", "10"),
                ("shared_center", "false"),
            ],
            SubcommandKind::Mlp => &[
                ("out", "out/mlp"),
                ("parallel", "1"),
                ("problem", "synthetic"),
                ("method", "pcgrad"),
                ("optimizer", "adam"),
                ("lr", "0.01"),
                ("iters", "2000"),
                ("snapshot_every", "100"),
                ("hidden", "16"),
                ("batch", "16"),
                ("samples", "128"),
                ("input_dim", "4"),
                ("tasks", "2"),
                ("fd_check", "false"),
            ],
            SubcommandKind::Verify => &[("out", "out/verify"), ("parallel", "1"), ("serial", "false")],
        }
    }
}

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub subcommand: SubcommandKind,
    pub seed: u64,
    pub out: PathBuf,
    pub parallel: usize,
    /// Every resolved key, normalized to `snake_case`.
    pub values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = normalize_key(k);
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
    }
    Ok(out)
}

fn put<T: Display>(m: &mut BTreeMap<String, String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        m.insert(key.to_string(), v.to_string());
    }
}

fn put_flag(m: &mut BTreeMap<String, String>, key: &str, on: bool) {
    if on {
        m.insert(key.to_string(), "true".to_string());
    }
}

fn common_flags(m: &mut BTreeMap<String, String>, c: &CommonArgs) {
    put(m, "seed", &c.seed);
    put(m, "out", &c.out.as_ref().map(|p| p.display().to_string()));
    put(m, "parallel", &c.parallel);
}

fn train_flags(m: &mut BTreeMap<String, String>, t: &TrainArgs) {
    common_flags(m, &t.common);
    put(m, "problem", &t.problem);
    put(m, "method", &t.method);
    put(m, "optimizer", &t.optimizer);
    put(m, "lr", &t.lr);
    put(m, "momentum", &t.momentum);
    put(m, "iters", &t.iters);
    put(m, "snapshot_every", &t.snapshot_every);
}

impl Command {
    pub fn kind(&self) -> SubcommandKind {
        match self {
            Command::Landscape(_) => SubcommandKind::Landscape,
            Command::Quadratic(_) => SubcommandKind::Quadratic,
            Command::Mlp(_) => SubcommandKind::Mlp,
            Command::Verify(_) => SubcommandKind::Verify,
        }
    }

    fn config_path(&self) -> Option<&Path> {
        match self {
            Command::Landscape(a) => a.train.common.config.as_deref(),
            Command::Quadratic(a) => a.train.common.config.as_deref(),
            Command::Mlp(a) => a.train.common.config.as_deref(),
            Command::Verify(a) => a.common.config.as_deref(),
        }
    }

    fn flags(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        match self {
            Command::Landscape(a) => train_flags(&mut m, &a.train),
            Command::Quadratic(a) => {
                train_flags(&mut m, &a.train);
                put(&mut m, "dim", &a.dim);
                put(&mut m, "tasks", &a.tasks);
                put(&mut m, "mu", &a.mu);
                put(&mut m, "lambda", &a.lambda);
                put_flag(&mut m, "shared_center", a.shared_center);
            }
            Command::Mlp(a) => {
                train_flags(&mut m, &a.train);
                put(&mut m, "data", &a.data.as_ref().map(|p| p.display().to_string()));
                put(&mut m, "hidden", &a.hidden);
                put(&mut m, "batch", &a.batch);
                put(&mut m, "samples", &a.samples);
                put(&mut m, "input_dim", &a.input_dim);
                put(&mut m, "tasks", &a.tasks);
                put_flag(&mut m, "fd_check", a.fd_check);
            }
            Command::Verify(a) => {
                common_flags(&mut m, &a.common);
                put(&mut m, "trials", &a.trials);
                put_flag(&mut m, "serial", a.serial);
            }
        }
        m
    }

    /// Merges flags, config file and defaults into a validated [`RunConfig`].
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match self.config_path() {
            Some(p) => parse_config(&fs::read_to_string(p)?)?,
            None => BTreeMap::new(),
        };
        resolve_layers(self.kind(), self.flags(), file)
    }
}

/// Precedence: `flags` over `file` over the command defaults.
pub fn resolve_layers(
    kind: SubcommandKind,
    flags: BTreeMap<String, String>,
    file: BTreeMap<String, String>,
) -> Result<RunConfig> {
    let allowed = kind.keys();
    if let Some(k) = file.keys().find(|k| !allowed.contains(&k.as_str()) || *k == "config") {
        return Err(Error::Config(format!("unknown key `{k}` for `{}`", kind.as_str())));
    }
    let mut values: BTreeMap<String, String> = kind
        .defaults()
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    values.extend(file);
    values.extend(flags);
    let cfg = RunConfig {
        subcommand: kind,
        seed: 0,
        out: PathBuf::new(),
        parallel: 1,
        values,
    };
    let seed = cfg
        .get::<u64>("seed")?
        .ok_or_else(|| Error::Config("a seed is required (--seed or `seed = …`)".into()))?;
    let out = PathBuf::from(cfg.require::<String>("out")?);
    let parallel = cfg.require::<usize>("parallel")?;
    if parallel == 0 {
        return Err(Error::Config("parallel must be at least 1".into()));
    }
    let cfg = RunConfig {
        seed,
        out,
        parallel,
        ..cfg
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("`{key}` = `{v}`: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::Config(format!("missing `{key}`")))
    }

    fn validate(&self) -> Result<()> {
        if self.subcommand == SubcommandKind::Verify {
            if self.get::<u64>("trials")? == Some(0) {
                return Err(Error::Config("trials must be at least 1".into()));
            }
            self.require::<bool>("serial")?;
            return Ok(());
        }
        self.method()?;
        self.optimizer()?;
        if self.require::<u64>("iters")? == 0 {
            return Err(Error::Config("iters must be at least 1".into()));
        }
        if self.require::<u64>("snapshot_every")? == 0 {
            return Err(Error::Config("snapshot_every must be at least 1".into()));
        }
        if let Some(lr) = self.get::<f64>("lr")? {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("lr must be positive and finite, got {lr}")));
            }
        }
        if let Some(m) = self.get::<f64>("momentum")? {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::Config(format!("momentum must lie in [0, 1), got {m}")));
            }
        }
        match self.subcommand {
            SubcommandKind::Landscape => {
                let p = self.require::<String>("problem")?;
                if p != "didactic2d" {
                    return Err(Error::Config(format!("landscape problem must be `didactic2d`, got `{p}`")));
                }
            }
            SubcommandKind::Quadratic => {
                let p = self.require::<String>("problem")?;
                if !["random", "identical", "opposed"].contains(&p.as_str()) {
                    return Err(Error::Config(format!(
                        "quadratic problem must be random, identical or opposed, got `{p}`"
                    )));
                }
                self.require::<bool>("shared_center")?;
                for k in ["dim", "tasks"] {
                    if self.require::<usize>(k)? == 0 {
                        return Err(Error::Config(format!("{k} must be at least 1")));
                    }
                }
            }
            SubcommandKind::Mlp => {
                let p = self.require::<String>("problem")?;
                if p != "synthetic" && p != "csv" {
                    return Err(Error::Config(format!("mlp problem must be synthetic or csv, got `{p}`")));
                }
                self.hidden()?;
                self.require::<bool>("fd_check")?;
                for k in ["batch", "samples", "input_dim", "tasks"] {
                    if self.require::<usize>(k)? == 0 {
                        return Err(Error::Config(format!("{k} must be at least 1")));
                    }
                }
            }
            SubcommandKind::Verify => {}
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        Method::from_str(&self.require::<String>("method")?)
    }

    pub fn optimizer(&self) -> Result<OptimizerKind> {
        OptimizerKind::from_str(&self.require::<String>("optimizer")?)
    }

    fn hidden(&self) -> Result<Vec<usize>> {
        let raw = self.require::<String>("hidden")?;
        raw.split(',')
            .map(|w| {
                w.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&w| w > 0)
                    .ok_or_else(|| Error::Config(format!("bad hidden widths `{raw}`")))
            })
            .collect()
    }

    /// The same settings for another seed, writing under `out`.
    fn for_seed(&self, seed: u64, out: PathBuf) -> RunConfig {
        let mut c = self.clone();
        c.seed = seed;
        c.out = out;
        c.parallel = 1;
        c.values.insert("seed".into(), seed.to_string());
        c.values.insert("out".into(), c.out.display().to_string());
        c
    }

    /// Keys recorded in the run header: everything except plumbing.
    fn header_params(&self) -> BTreeMap<String, String> {
        const PLUMBING: [&str; 10] = [
            "seed",
            "out",
            "parallel",
            "config",
            "method",
            "optimizer",
            "lr",
            "momentum",
            "iters",
            "snapshot_every",
        ];
        self.values
            .iter()
            .filter(|(k, _)| !PLUMBING.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Outcome of one run: whether every check passed, and a one-line digest.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub clean: bool,
    pub line: String,
}

#[derive(Serialize)]
struct Timing {
    wall_seconds: f64,
}

/// Runs a parsed command line. `Ok(true)` means every check passed.
pub fn execute(cli: &Cli) -> Result<bool> {
    let cfg = cli.command.resolve()?;
    let outcomes = run_config(&cfg)?;
    for o in &outcomes {
        println!("{}", o.line);
    }
    Ok(outcomes.iter().all(|o| o.clean))
}

/// Runs one seed, or `parallel` consecutive seeds into `out/seed-<s>/`.
pub fn run_config(cfg: &RunConfig) -> Result<Vec<Outcome>> {
    if cfg.parallel == 1 {
        return Ok(vec![run_single(cfg)?]);
    }
    let runs: Vec<RunConfig> = (0..cfg.parallel as u64)
        .map(|i| {
            let s = cfg.seed + i;
            cfg.for_seed(s, cfg.out.join(format!("seed-{s}")))
        })
        .collect();
    runs.par_iter().map(run_single).collect()
}

fn run_single(cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out)?;
    let start = Instant::now();
    let outcome = match cfg.subcommand {
        SubcommandKind::Landscape => cmd_landscape2d(cfg),
        SubcommandKind::Quadratic => cmd_quadratic(cfg),
        SubcommandKind::Mlp => cmd_mlp(cfg),
        SubcommandKind::Verify => cmd_verify(cfg),
    }?;
    write_json(
        &cfg.out.join("timing.json"),
        &Timing {
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    Ok(outcome)
}

fn header(cfg: &RunConfig, hyper: Hyperparams) -> Result<RunHeader> {
    Ok(RunHeader {
        problem: format!("{}:{}", cfg.subcommand.as_str(), cfg.require::<String>("problem")?),
        method: cfg.method()?.to_string(),
        optimizer: cfg.optimizer()?.to_string(),
        seed: cfg.seed,
        hyper,
        iterations: cfg.require("iters")?,
        snapshot_every: cfg.require("snapshot_every")?,
        params: cfg.header_params(),
    })
}

fn hyperparams(cfg: &RunConfig, default_lr: f64) -> Result<Hyperparams> {
    let mut h = Hyperparams::with_lr(cfg.get("lr")?.unwrap_or(default_lr));
    if let Some(m) = cfg.get("momentum")? {
        h.momentum = m;
    }
    Ok(h)
}

fn run_spec(cfg: &RunConfig, hyper: Hyperparams) -> Result<RunSpec> {
    Ok(RunSpec {
        method: cfg.method()?,
        optimizer: cfg.optimizer()?,
        hyper,
        iterations: cfg.require("iters")?,
        seed: cfg.seed,
        snapshot_every: cfg.require("snapshot_every")?,
    })
}

struct Extras {
    verdicts: BTreeMap<String, bool>,
    measurements: BTreeMap<String, f64>,
}

fn finish<P: MultiTaskProblem + ?Sized>(
    cfg: &RunConfig,
    problem: &P,
    log: &RunLog,
    theta: &Vector,
    extras: Extras,
) -> Result<Outcome> {
    log.write_csv(&cfg.out.join("telemetry.csv"))?;
    log.write_snapshots(&cfg.out.join("theta.csv"))?;
    let final_task_losses = problem.task_losses(theta);
    let final_total_loss = final_task_losses.iter().sum();
    let summary = RunSummary {
        header: log.header.clone(),
        final_task_losses,
        final_total_loss,
        final_theta: theta.iter().copied().collect(),
        verdicts: extras.verdicts,
        measurements: extras.measurements,
    };
    write_json(&cfg.out.join("summary.json"), &summary)?;
    let clean = summary.verdicts.values().all(|&v| v);
    let failed: Vec<&str> = summary
        .verdicts
        .iter()
        .filter(|(_, &v)| !v)
        .map(|(k, _)| k.as_str())
        .collect();
    Ok(Outcome {
        clean,
        line: format!(
            "{} seed={} method={} optimizer={} iters={} final_total_loss={:.10e}{} -> {}",
            log.header.problem,
            cfg.seed,
            log.header.method,
            log.header.optimizer,
            log.header.iterations,
            final_total_loss,
            if failed.is_empty() {
                String::new()
            } else {
                format!(" FAILED[{}]", failed.join(","))
            },
            cfg.out.display()
        ),
    })
}

/// The 2D landscape from `[0.5, -3]`.
pub fn cmd_landscape2d(cfg: &RunConfig) -> Result<Outcome> {
    let problem = Didactic2d;
    let hyper = hyperparams(cfg, 1e-3)?;
    let spec = run_spec(cfg, hyper)?;
    let theta0 = Vector::from(Didactic2d::INIT.to_vec());
    let (log, theta) = experiment::run(&problem, theta0, &spec, header(cfg, hyper)?, |t, _| {
        Ok(problem.task_gradients(t))
    })?;
    let floor = problem.metadata().loss_floor.expect("landscape floor is known");
    let total = problem.total_loss(&theta);
    let measurements = BTreeMap::from([
        ("loss_floor".to_string(), floor),
        ("relative_gap_to_floor".to_string(), (total - floor).abs() / floor.abs()),
    ]);
    finish(
        cfg,
        &problem,
        &log,
        &theta,
        Extras {
            verdicts: BTreeMap::new(),
            measurements,
        },
    )
}

/// Builds the configured quadratic instance.
pub fn quadratic_instance(cfg: &RunConfig) -> Result<QuadraticProblem> {
    let mut fam = QuadraticFamily::new(
        cfg.require("dim")?,
        cfg.require("tasks")?,
        cfg.require("mu")?,
        cfg.require("lambda")?,
    );
    fam.shared_center = cfg.require("shared_center")?;
    match cfg.require::<String>("problem")?.as_str() {
        "identical" => {
            fam.identical = true;
            fam.generate(cfg.seed)
        }
        "opposed" => {
            if fam.num_tasks != 2 {
                return Err(Error::Config("the opposed instance has two tasks".into()));
            }
            fam.identical = true;
            let base = fam.generate(cfg.seed)?;
            let t = &base.tasks()[0];
            let mut c = t.center.clone();
            if c.norm_squared() == 0.0 {
                c[0] = 1.0;
            }
            let neg = c.scaled(-1.0);
            QuadraticProblem::new(vec![
                QuadraticTask::new(t.a.clone(), c)?,
                QuadraticTask::new(t.a.clone(), neg)?,
            ])
        }
        _ => fam.generate(cfg.seed),
    }
}

/// Random quadratic family; SGD and heavy ball default to step `1/L`.
pub fn cmd_quadratic(cfg: &RunConfig) -> Result<Outcome> {
    let problem = quadratic_instance(cfg)?;
    let lipschitz = problem
        .metadata()
        .lipschitz
        .ok_or(Error::MissingMetadata("lipschitz"))?;
    let optimizer = cfg.optimizer()?;
    let default_lr = match optimizer {
        OptimizerKind::Adam => 1e-2,
        _ if lipschitz > 0.0 => 1.0 / lipschitz,
        _ => 1.0,
    };
    let hyper = hyperparams(cfg, default_lr)?;
    let spec = run_spec(cfg, hyper)?;
    let mut rng = keyed_rng(cfg.seed, Domain::Init, 1, 0);
    let theta0 = Vector::from(
        (0..problem.dim())
            .map(|_| rng.random_range(-2.0..=2.0))
            .collect::<Vec<f64>>(),
    );
    let (log, theta) = experiment::run(&problem, theta0, &spec, header(cfg, hyper)?, |t, _| {
        Ok(problem.task_gradients(t))
    })?;
    let conflicted = log.rows.iter().filter(|r| r.triad.pct_conflicting > 0.0).count();
    let mut measurements = BTreeMap::from([
        ("lipschitz".to_string(), lipschitz),
        ("lr".to_string(), hyper.lr),
        (
            "conflicting_row_fraction".to_string(),
            conflicted as f64 / log.len() as f64,
        ),
    ]);
    let mut verdicts = BTreeMap::new();
    if optimizer == OptimizerKind::Sgd && hyper.lr * lipschitz <= 1.0 + 1e-12 && spec.method != Method::Plain {
        let rises = log
            .rows
            .windows(2)
            .filter(|w| w[1].loss_total > w[0].loss_total + 1e-9 * w[0].loss_total.abs().max(1.0))
            .count();
        measurements.insert("loss_increases".to_string(), rises as f64);
        verdicts.insert("monotone_loss".to_string(), rises == 0);
    }
    finish(cfg, &problem, &log, &theta, Extras { verdicts, measurements })
}

/// Builds the configured MLP problem: synthetic data, or `data` when given.
pub fn mlp_instance(cfg: &RunConfig) -> Result<MlpProblem> {
    let hidden = cfg.hidden()?;
    let samples = match cfg.get::<String>("data")? {
        Some(path) => load_csv(Path::new(&path))?,
        None => synthetic_conflicting(
            cfg.seed,
            cfg.require("input_dim")?,
            cfg.require("samples")?,
            cfg.require("tasks")?,
        ),
    };
    let input_dim = samples[0].features.len();
    let num_tasks = samples.iter().map(|s| s.task).max().unwrap_or(0) + 1;
    MlpProblem::new(MlpSpec::new(input_dim, hidden, num_tasks)?, samples)
}

/// MLP regression with per-task stratified minibatches.
pub fn cmd_mlp(cfg: &RunConfig) -> Result<Outcome> {
    let problem = mlp_instance(cfg)?;
    let hyper = hyperparams(cfg, 1e-2)?;
    let spec = run_spec(cfg, hyper)?;
    let per_task: usize = cfg.require("batch")?;
    let theta0 = problem.spec.init_params(cfg.seed);
    let mut verdicts = BTreeMap::new();
    let mut measurements = BTreeMap::new();
    if cfg.require::<bool>("fd_check")? {
        let err = fd_check(&problem, &theta0, 1e-6);
        measurements.insert("fd_max_relative_error".to_string(), err);
        verdicts.insert("fd_check".to_string(), err < FD_TOLERANCE);
    }
    let seed = cfg.seed;
    let (log, theta) = experiment::run(&problem, theta0, &spec, header(cfg, hyper)?, |t, k| {
        mlp_task_gradients(&problem.spec, t, &problem.stratified_batch(seed, k, per_task))
    })?;
    measurements.insert("param_count".to_string(), problem.spec.param_count() as f64);
    finish(cfg, &problem, &log, &theta, Extras { verdicts, measurements })
}

/// The sweep suite; writes `reports.json` and passes iff no report has violations.
pub fn cmd_verify(cfg: &RunConfig) -> Result<Outcome> {
    let reports = verify_reports(cfg)?;
    write_json(&cfg.out.join("reports.json"), &reports)?;
    for r in &reports {
        println!("{}", r.summary_line());
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.theorem_id.as_str())
        .collect();
    Ok(Outcome {
        clean: failed.is_empty(),
        line: format!(
            "verify seed={} reports={} failed={} -> {}",
            cfg.seed,
            reports.len(),
            if failed.is_empty() {
                "none".to_string()
            } else {
                failed.join(",")
            },
            cfg.out.display()
        ),
    })
}

pub fn verify_reports(cfg: &RunConfig) -> Result<Vec<TheoremReport>> {
    let mut sweep = SweepConfig::new(cfg.seed);
    if let Some(n) = cfg.get::<u64>("trials")? {
        sweep = sweep.with_trials(n);
    }
    sweep.parallel = !cfg.require::<bool>("serial")?;
    run_suite(&sweep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("pcgrad").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn config_lines_and_comments() {
        let m = parse_config("# c\nlr = 0.5\n--snapshot-every=3 # trailing\n\n").unwrap();
        assert_eq!(m["lr"], "0.5");
        assert_eq!(m["snapshot_every"], "3");
        assert!(parse_config("lr 0.5").is_err());
        assert!(parse_config("lr = 1\nlr = 2").is_err());
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let file = parse_config("seed = 3\nlr = 0.5\niters = 7").unwrap();
        let flags = parse(&["landscape", "--lr", "0.25"]).command.flags();
        let cfg = resolve_layers(SubcommandKind::Landscape, flags, file).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.require::<f64>("lr").unwrap(), 0.25);
        assert_eq!(cfg.require::<u64>("iters").unwrap(), 7);
        assert_eq!(cfg.require::<String>("optimizer").unwrap(), "adam");
    }

    #[test]
    fn seed_is_mandatory() {
        let flags = parse(&["landscape"]).command.flags();
        assert!(resolve_layers(SubcommandKind::Landscape, flags, BTreeMap::new()).is_err());
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let bad = [
            vec!["landscape", "--seed", "0", "--iters", "0"],
            vec!["landscape", "--seed", "0", "--lr=-1"],
            vec!["landscape", "--seed", "0", "--method", "mgda"],
            vec!["quadratic", "--seed", "0", "--mu", "5", "--lambda", "1"],
            vec!["mlp", "--seed", "0", "--hidden", "4,0"],
            vec!["verify", "--seed", "0", "--trials", "0"],
        ];
        for args in bad {
            let cmd = parse(&args).command;
            let res = cmd.resolve().and_then(|c| match c.subcommand {
                SubcommandKind::Quadratic => quadratic_instance(&c).map(|_| ()),
                _ => Ok(()),
            });
            assert!(res.is_err(), "{args:?}");
        }
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let file = parse_config("seed = 1\ntrials = 5").unwrap();
        assert!(resolve_layers(SubcommandKind::Landscape, BTreeMap::new(), file).is_err());
    }

    #[test]
    fn opposed_instance_conflicts() {
        let cfg = parse(&["quadratic", "--seed", "2", "--problem", "opposed", "--dim", "4"])
            .command
            .resolve()
            .unwrap();
        let p = quadratic_instance(&cfg).unwrap();
        let g = p.task_gradients(&Vector::zeros(4));
        assert!(crate::vecmath::dot(g.get(0), g.get(1)).unwrap() < 0.0);
    }
}
