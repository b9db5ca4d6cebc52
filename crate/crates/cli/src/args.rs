use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::{fail, CliResult, ExitWith};
use edrisk_core::proxies::Architecture;

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_HORIZON: usize = 36;

#[derive(Parser, Debug)]
#[command(name = "edrisk", version, about = "Dispatch risk assessment with optimization proxies")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    /// JSON file with default values for any flag; flags given on the
    /// command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct Global {
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for sampling, rollouts and grid search.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Grid JSON; the bundled 6-bus system when omitted.
    #[arg(long, global = true)]
    pub grid: Option<PathBuf>,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(1).max(1)
    }

    pub fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Grid data checks.
    Grid {
        #[command(subcommand)]
        command: GridCommand,
    },
    /// Load-profile fitting and scenario sampling.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Train a dispatch proxy by grid search.
    Train(TrainArgs),
    /// Roll out scenarios with the oracle and/or trained proxies.
    Simulate(SimulateArgs),
    /// Risk metrics and plot data from trajectory files.
    Risk(RiskArgs),
    /// Time sequential oracle rollouts against batched proxy rollouts.
    CompareTiming(TimingArgs),
}

#[derive(Subcommand, Debug)]
pub enum GridCommand {
    Validate,
}

#[derive(Subcommand, Debug)]
pub enum ScenarioCommand {
    Fit(FitArgs),
    Sample(SampleArgs),
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct HistoryArgs {
    /// Daily load-ratio CSV, one day per row. Synthetic when omitted.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Days of synthetic history.
    #[arg(long)]
    pub days: Option<usize>,
    /// Steps per scenario for synthetic history.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub history: HistoryArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SampleArgs {
    /// Fitted profile JSON; fitted on the fly when omitted.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub history: HistoryArgs,
}

impl SampleArgs {
    pub fn count(&self) -> usize {
        self.count.unwrap_or(1024)
    }
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: Option<Architecture>,
    /// Scenario CSV; sampled with `--count` when omitted.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub sample: SampleArgs,
    #[arg(long, value_delimiter = ',')]
    pub lr_grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub hidden_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub plateau_patience: Option<usize>,
    #[arg(long)]
    pub early_stop_patience: Option<usize>,
    #[arg(long)]
    pub encoder_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub slack: Option<usize>,
    #[arg(long)]
    pub dc3_steps: Option<usize>,
    #[arg(long)]
    pub dc3_step_size: Option<f64>,
    /// Train DC3 through completion only and correct at inference.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub dc3_post_hoc: Option<bool>,
    /// Checkpoint directory; `<out>/model_<arch>` by default.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct RolloutArgs {
    /// First reported step (0-based).
    #[arg(long)]
    pub window_start: Option<usize>,
    /// One past the last reported step.
    #[arg(long)]
    pub window_end: Option<usize>,
    /// Keep proxy outputs unclipped against the tightened bounds.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_clip: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// Comma-separated backends: oracle, dnn, deepopf, dc3, e2elr.
    #[arg(long, value_delimiter = ',')]
    pub backend: Option<Vec<String>>,
    /// Scenario CSV; `<out>/scenarios.csv` by default.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    /// Checkpoint directory for a single proxy backend.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rollout: RolloutArgs,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct RiskArgs {
    /// Trajectory sets as `tag` (reads `<out>/trajectories_<tag>.csv`) or
    /// `tag=path`. Every trajectory file in the output directory by default.
    #[arg(long, value_delimiter = ',')]
    pub trajectories: Option<Vec<String>>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Use the lower tail for CVaR.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub left_tail: Option<bool>,
    #[arg(long)]
    pub window_start: Option<usize>,
    #[arg(long)]
    pub window_end: Option<usize>,
    /// Also render SVG charts next to the CSVs.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub svg: Option<bool>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct TimingArgs {
    /// Proxy checkpoint directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub rollout: RolloutArgs,
}

/// Parsed invocation with config defaults folded in.
#[derive(Debug)]
pub struct Invocation {
    pub global: Global,
    pub command: Command,
    pub config: Option<PathBuf>,
}

fn section_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Grid { .. } => "grid_validate",
        Command::Scenario { command: ScenarioCommand::Fit(_) } => "scenario_fit",
        Command::Scenario { command: ScenarioCommand::Sample(_) } => "scenario_sample",
        Command::Train(_) => "train",
        Command::Simulate(_) => "simulate",
        Command::Risk(_) => "risk",
        Command::CompareTiming(_) => "compare_timing",
    }
}

/// Fills every unset field of `args` from the config: first from the
/// command's own section, then from top-level keys.
fn fill<T: Serialize + DeserializeOwned>(args: T, section: &Map<String, Value>, top: &Map<String, Value>) -> CliResult<T> {
    let mut v = serde_json::to_value(args).exit(1)?;
    let obj = v.as_object_mut().expect("argument structs serialize to objects");
    for (k, slot) in obj.iter_mut() {
        if slot.is_null() {
            if let Some(x) = section.get(k).or_else(|| top.get(k)) {
                *slot = x.clone();
            }
        }
    }
    serde_json::from_value(v).exit(2)
}

pub fn resolve(cli: Cli) -> CliResult<Invocation> {
    let Some(path) = cli.config.clone() else {
        return Ok(Invocation {
            global: cli.global,
            command: cli.command,
            config: None,
        });
    };
    let text = std::fs::read_to_string(&path).map_err(|e| crate::Failure {
        code: 2,
        msg: format!("cannot read config {}: {e}", path.display()),
    })?;
    let top: Map<String, Value> = match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => m,
        Ok(_) => return fail(2, format!("config {} must be a JSON object", path.display())),
        Err(e) => return fail(2, format!("config {}: {e}", path.display())),
    };
    let name = section_name(&cli.command);
    let section = match top.get(name) {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return fail(2, format!("config section `{name}` must be an object")),
        None => Map::new(),
    };
    let global = fill(cli.global, &section, &top)?;
    let command = match cli.command {
        Command::Grid { command } => Command::Grid { command },
        Command::Scenario { command } => Command::Scenario {
            command: match command {
                ScenarioCommand::Fit(a) => ScenarioCommand::Fit(fill(a, &section, &top)?),
                ScenarioCommand::Sample(a) => ScenarioCommand::Sample(fill(a, &section, &top)?),
            },
        },
        Command::Train(a) => Command::Train(fill(a, &section, &top)?),
        Command::Simulate(a) => Command::Simulate(fill(a, &section, &top)?),
        Command::Risk(a) => Command::Risk(fill(a, &section, &top)?),
        Command::CompareTiming(a) => Command::CompareTiming(fill(a, &section, &top)?),
    };
    Ok(Invocation {
        global,
        command,
        config: Some(path),
    })
}
