//! Command-line driver behind the `dept` binary.
//!
//! Exit codes: 0 on success, 1 for configuration errors (bad flags, unreadable
//! or invalid config, scenario and checkpoint files), 2 for failures while
//! running. Every failure prints one `dept: ...` line on stderr.

use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::PrefitConfig;
use crate::controllers::{run_episode, Controller, FixedTime, MaxPressure};
use crate::encoder::{check_model_gradients, gradient_check_setup, AttentionDump, EncoderConfig};
use crate::numerics::Tensor;
use crate::sim::{FlowPreset, Metrics, Scenario, DECISION_INTERVAL};
use crate::trainer::{
    build_model, collect_round, train_with, AblationFlags, Behavior, Checkpoint, DeptController, TrainConfig, TrainError,
    TrainSchedule,
};

pub const EXPERIMENT_VERSION: u32 = 1;

/// Largest relative gradient error `grad-check` accepts.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn config_err(e: impl Display) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Named ablation arms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    #[default]
    Full,
    NoPreFit,
    NoCone,
    Tte,
}

impl Arm {
    pub fn flags(self) -> AblationFlags {
        match self {
            Arm::Full => AblationFlags::FULL,
            Arm::NoPreFit => AblationFlags::NO_PRE_FIT,
            Arm::NoCone => AblationFlags::NO_CONE,
            Arm::Tte => AblationFlags::TTE,
        }
    }
}

/// Experiment description loaded with `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Scenario file, relative to the config file. The built-in 3×3
    /// Grid-Bi scenario is used when absent.
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default = "default_encoder")]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub ablation: Arm,
    #[serde(default)]
    pub prefit: PrefitConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_encoder() -> EncoderConfig {
    TrainConfig::default().encoder
}

fn default_out() -> PathBuf {
    PathBuf::from("dept-out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: EXPERIMENT_VERSION,
            scenario: None,
            encoder: default_encoder(),
            schedule: TrainSchedule::default(),
            ablation: Arm::Full,
            prefit: PrefitConfig::default(),
            seed: 0,
            out: default_out(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let c: Self = serde_json::from_str(text).map_err(config_err)?;
        if c.version != EXPERIMENT_VERSION {
            return Err(CliError::Config(format!(
                "unsupported experiment config version {} (expected {EXPERIMENT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    /// Reads the config and resolves its scenario path.
    pub fn load(path: &Path) -> Result<(Self, Scenario), CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let config = Self::from_json(&text).map_err(|e| match e {
            CliError::Config(m) | CliError::Runtime(m) => CliError::Config(format!("{}: {m}", path.display())),
        })?;
        let scenario = match &config.scenario {
            Some(rel) => {
                let full = path.parent().unwrap_or(Path::new(".")).join(rel);
                let text = fs::read_to_string(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
                Scenario::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?
            }
            None => default_scenario(),
        };
        Ok((config, scenario))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            encoder: self.encoder.clone(),
            schedule: self.schedule.clone(),
            ablation: self.ablation.flags(),
            prefit: self.prefit.clone(),
        }
    }
}

pub fn default_scenario() -> Scenario {
    Scenario::grid(3, 3, FlowPreset::GridBi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ControllerKind {
    FixedTime,
    MaxPressure,
    Dept,
}

#[derive(Debug, Parser)]
#[command(name = "dept", version, about = "Delayed propagation transformer for traffic-signal control")]
#[command(subcommand_required = true)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Threads for per-sample gradient work.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Runs one episode under a controller and prints its metrics.
    Simulate {
        #[arg(long, value_enum, default_value_t = ControllerKind::MaxPressure)]
        controller: ControllerKind,
        /// Model for `--controller dept`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Trains a model; writes learning_curve.csv and checkpoint.json.
    Train {
        #[arg(long, value_enum)]
        ablation: Option<Arm>,
    },
    /// Replays a checkpoint greedily and prints its metrics.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Finite-difference check of every gradient of a small model.
    GradCheck,
    /// Writes the score decomposition of one attention head as CSV.
    DumpAttention {
        /// Trained model; a freshly initialized (and pre-fitted) one otherwise.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum)]
        ablation: Option<Arm>,
        #[arg(long, default_value_t = 0)]
        block: usize,
        #[arg(long, default_value_t = 0)]
        head: usize,
        /// Decision step at which the history is taken.
        #[arg(long, default_value_t = 30)]
        step: usize,
    },
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            if matches!(e.kind(), ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand | ErrorKind::MissingSubcommand) {
                eprintln!("dept: config error: missing subcommand (simulate | train | evaluate | grad-check | dump-attention)");
                return 1;
            }
            let text = e.to_string();
            let line = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("dept: config error: {}", line.trim_start_matches("error: "));
            return 1;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dept: {e}");
            e.exit_code()
        }
    }
}

struct Context {
    config: ExperimentConfig,
    scenario: Scenario,
    /// Whether the scenario came from `--config` rather than the default.
    explicit_scenario: bool,
    seed: u64,
    out: PathBuf,
    explicit_out: bool,
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let (mut config, scenario, explicit_scenario) = match &cli.config {
        Some(path) => {
            let (c, s) = ExperimentConfig::load(path)?;
            (c, s, true)
        }
        None => (ExperimentConfig::default(), default_scenario(), false),
    };
    if let Some(w) = cli.workers {
        config.schedule.workers = w;
    }
    let seed = cli.seed.unwrap_or(config.seed);
    let out = cli.out.clone().unwrap_or_else(|| config.out.clone());
    Ok(Context {
        config,
        scenario,
        explicit_scenario,
        seed,
        out,
        explicit_out: cli.out.is_some(),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    let ctx = context(&cli)?;
    match cli.command {
        Command::Simulate { controller, checkpoint } => simulate(&ctx, controller, checkpoint.as_deref()),
        Command::Train { ablation } => train_cmd(ctx, ablation),
        Command::Evaluate { checkpoint } => evaluate_cmd(&ctx, &checkpoint),
        Command::GradCheck => grad_check(&ctx),
        Command::DumpAttention {
            checkpoint,
            ablation,
            block,
            head,
            step,
        } => dump_attention(ctx, checkpoint.as_deref(), ablation, block, head, step),
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn create_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
    let fail = |e: &dyn Display| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(|e| fail(&e))?;
    for row in rows {
        w.serialize(row).map_err(|e| fail(&e))?;
    }
    w.flush().map_err(|e| fail(&e))
}

#[derive(Serialize)]
struct MetricsRow<'a> {
    controller: &'a str,
    seed: u64,
    duration: u64,
    avg_travel_time: f64,
    avg_queue: f64,
    entered: usize,
    exited: usize,
}

fn report_metrics(ctx: &Context, name: &str, duration: u64, m: &Metrics, file: &str) -> Result<(), CliError> {
    println!(
        "{name}: AvgTT {:.2} s, AvgQue {:.3}, entered {}, exited {}",
        m.avg_travel_time, m.avg_queue, m.entered, m.exited
    );
    if ctx.explicit_out {
        create_out(&ctx.out)?;
        let row = MetricsRow {
            controller: name,
            seed: ctx.seed,
            duration,
            avg_travel_time: m.avg_travel_time,
            avg_queue: m.avg_queue,
            entered: m.entered,
            exited: m.exited,
        };
        write_csv(&ctx.out.join(file), [row])?;
    }
    Ok(())
}

fn simulate(ctx: &Context, kind: ControllerKind, checkpoint: Option<&Path>) -> Result<(), CliError> {
    if kind == ControllerKind::Dept {
        let path = checkpoint.ok_or_else(|| CliError::Config("--controller dept needs --checkpoint".into()))?;
        return evaluate_cmd(ctx, path);
    }
    let scenario = &ctx.scenario;
    let mut sim = scenario.simulation(ctx.seed).map_err(config_err)?;
    let mut controller: Box<dyn Controller> = match kind {
        ControllerKind::FixedTime => Box::new(FixedTime::for_network(&sim.network).map_err(config_err)?),
        _ => Box::new(MaxPressure),
    };
    let m = run_episode(controller.as_mut(), &mut sim, scenario.duration).map_err(runtime_err)?;
    let name = controller.name().to_string();
    report_metrics(ctx, &name, scenario.duration, &m, "simulate.csv")
}

fn evaluate_cmd(ctx: &Context, path: &Path) -> Result<(), CliError> {
    let checkpoint = load_checkpoint(path)?;
    let (model, store) = checkpoint.restore().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let scenario = if ctx.explicit_scenario { &ctx.scenario } else { &checkpoint.scenario };
    let mut sim = scenario.simulation(ctx.seed).map_err(config_err)?;
    let mut controller = DeptController::new(&model, &store, &sim.network).map_err(config_err)?;
    let m = run_episode(&mut controller, &mut sim, scenario.duration).map_err(runtime_err)?;
    report_metrics(ctx, "dept", scenario.duration, &m, "evaluate.csv")
}

#[derive(Serialize)]
struct CurveRow {
    round: usize,
    stage: String,
    loss: f64,
    avg_travel_time: f64,
    avg_queue: f64,
    epsilon: f64,
    rollout_avg_travel_time: f64,
    rollout_avg_queue: f64,
}

fn train_cmd(mut ctx: Context, ablation: Option<Arm>) -> Result<(), CliError> {
    if let Some(arm) = ablation {
        ctx.config.ablation = arm;
    }
    let config = ctx.config.train_config();
    config.schedule.validate().map_err(config_err)?;
    config.encoder.validate().map_err(config_err)?;
    config.ablation.validate().map_err(config_err)?;
    create_out(&ctx.out)?;

    let curve_path = ctx.out.join("learning_curve.csv");
    let io = |e: &dyn Display| CliError::Runtime(format!("{}: {e}", curve_path.display()));
    let mut writer = csv::Writer::from_path(&curve_path).map_err(|e| io(&e))?;
    let mut write_error = None;
    let result = train_with(&config, &ctx.scenario, ctx.seed, |p| {
        println!(
            "round {:>3} {} loss {:.4} AvgTT {:.2} AvgQue {:.3} epsilon {:.3}",
            p.round, p.stage, p.loss, p.avg_travel_time, p.avg_queue, p.epsilon
        );
        let row = CurveRow {
            round: p.round,
            stage: p.stage.to_string(),
            loss: p.loss,
            avg_travel_time: p.avg_travel_time,
            avg_queue: p.avg_queue,
            epsilon: p.epsilon,
            rollout_avg_travel_time: p.rollout.avg_travel_time,
            rollout_avg_queue: p.rollout.avg_queue,
        };
        if let Err(e) = writer.serialize(row).and_then(|_| writer.flush().map_err(Into::into)) {
            write_error.get_or_insert(e);
        }
    });
    if let Some(e) = write_error {
        return Err(io(&e));
    }
    match result {
        Ok(outcome) => {
            let path = ctx.out.join("checkpoint.json");
            outcome.checkpoint.save(&path).map_err(runtime_err)?;
            println!("wrote {} and {}", curve_path.display(), path.display());
            Ok(())
        }
        Err(TrainError::Diverged { round, reason, checkpoint }) => {
            let path = ctx.out.join("diverged_checkpoint.json");
            checkpoint.save(&path).map_err(runtime_err)?;
            Err(CliError::Runtime(format!(
                "training diverged in round {round} ({reason}); last good parameters in {}",
                path.display()
            )))
        }
        Err(e @ TrainError::Config(_)) => Err(config_err(e)),
        Err(e) => Err(runtime_err(e)),
    }
}

fn grad_check(ctx: &Context) -> Result<(), CliError> {
    let (config, graph) = gradient_check_setup();
    let report = check_model_gradients(config, graph, ctx.seed).map_err(runtime_err)?;
    let worst = report.worst.as_ref().map_or_else(String::new, |(n, i)| format!(" (worst {n}[{i}])"));
    println!(
        "max relative error {:.3e} over {} coordinates{worst}",
        report.max_rel_error, report.coordinates
    );
    if report.max_rel_error < GRAD_CHECK_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check failed: {:.3e} ≥ {GRAD_CHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

/// One entry of an attention matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionRow {
    pub block: usize,
    pub head: usize,
    pub step: usize,
    pub query_node: usize,
    pub query_lag: usize,
    pub key_node: usize,
    pub key_lag: usize,
    pub masked: bool,
    pub value: f64,
}

/// File names written by `dump-attention`, paired with the matrix each holds.
pub const ATTENTION_FILES: [&str; 5] = [
    "attention_cone.csv",
    "attention_time_lut.csv",
    "attention_residual.csv",
    "attention_total.csv",
    "attention_weights.csv",
];

fn attention_rows(dump: &AttentionDump, m: &Tensor, num_nodes: usize, step: usize) -> Vec<AttentionRow> {
    let n = m.rows();
    let mut rows = Vec::with_capacity(n * n);
    for q in 0..n {
        for k in 0..n {
            rows.push(AttentionRow {
                block: dump.block,
                head: dump.head,
                step,
                query_node: q % num_nodes,
                query_lag: q / num_nodes,
                key_node: k % num_nodes,
                key_lag: k / num_nodes,
                masked: dump.mask.is_masked(q, k),
                value: m.get(q, k),
            });
        }
    }
    rows
}

fn dump_attention(
    mut ctx: Context,
    checkpoint: Option<&Path>,
    ablation: Option<Arm>,
    block: usize,
    head: usize,
    step: usize,
) -> Result<(), CliError> {
    if let Some(arm) = ablation {
        ctx.config.ablation = arm;
    }
    let (model, store, scenario) = match checkpoint {
        Some(path) => {
            let c = load_checkpoint(path)?;
            let (model, store) = c.restore().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let scenario = if ctx.explicit_scenario { ctx.scenario.clone() } else { c.scenario };
            (model, store, scenario)
        }
        None => {
            let config = ctx.config.train_config();
            config.encoder.validate().map_err(config_err)?;
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            let (model, store, _) = build_model(&config, &ctx.scenario, &mut rng).map_err(config_err)?;
            (model, store, ctx.scenario.clone())
        }
    };
    // the teacher drives, so the history does not depend on the model
    let mut sim = scenario.simulation(ctx.seed).map_err(config_err)?;
    let t_max = model.config.t_max;
    let episode = collect_round(
        Behavior::Teacher(&mut MaxPressure),
        &mut sim,
        step as u64 * DECISION_INTERVAL,
        t_max,
    )
    .map_err(runtime_err)?;
    let history = episode.history(step, t_max);
    let (_, dump) = model.attention_components(&store, &history, block, head).map_err(config_err)?;

    let n = model.num_nodes();
    let mut worst: f64 = 0.0;
    for q in 0..dump.total.rows() {
        for k in 0..dump.total.cols() {
            if !dump.mask.is_masked(q, k) {
                let sum = dump.cone.get(q, k) + dump.time_lut.get(q, k) + dump.residual.get(q, k);
                worst = worst.max((sum - dump.total.get(q, k)).abs());
            }
        }
    }
    create_out(&ctx.out)?;
    let matrices = [&dump.cone, &dump.time_lut, &dump.residual, &dump.total, &dump.weights];
    for (file, m) in ATTENTION_FILES.iter().zip(matrices) {
        write_csv(&ctx.out.join(file), attention_rows(&dump, m, n, step))?;
    }
    println!(
        "block {block} head {head} step {step}: {} tokens, max |cone + time_lut + residual - total| = {worst:.2e}; wrote {}",
        dump.total.rows(),
        ctx.out.display()
    );
    Ok(())
}
