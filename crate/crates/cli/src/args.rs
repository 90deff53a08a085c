//! Command-line surface and `--config` merging.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use handstate_core::model_state::ModelKind;
use handstate_core::types::FeatureSubset;
use serde::{Deserialize, Serialize};

/// Environment variable naming the default dataset directory.
pub const DATA_ENV: &str = "HANDSTATE_DATA";

#[derive(Debug, Parser)]
#[command(name = "handstate", version, about = "Hand opening and compliance estimation from exoskeleton and EMG signals")]
#[command(args_override_self = true)]
pub struct Cli {
    /// JSON file whose keys mirror the flags of the subcommand. Flags given
    /// on the command line win. A run.json from an earlier run also works.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate(GenerateArgs),
    /// Train one model on all sequences of a user.
    Train(TrainArgs),
    /// Run an evaluation protocol over an architecture/feature grid.
    Crossval(CrossvalArgs),
    /// Replay a recording (or live JSON lines on stdin) through a model.
    Replay(ReplayArgs),
    /// Render the grouped-bar figure from a results CSV.
    Plot(PlotArgs),
}

impl Command {
    pub const NAMES: [&'static str; 5] = ["generate", "train", "crossval", "replay", "plot"];
}

/// Comma-separated list taken as one flag value, so a later occurrence
/// replaces an earlier one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| e.to_string()))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 5)]
    pub users: usize,
    /// Drawn at random and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, env = DATA_ENV)]
    pub out: PathBuf,
    /// Session index; sessions differ by armband placement.
    #[arg(long, default_value_t = 1)]
    pub session: u32,
    /// Also write one modality-switching session per user under `online/`.
    #[arg(long)]
    pub online_session: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainingArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Hidden widths, e.g. 32,32.
    #[arg(long)]
    pub hidden: Option<List<usize>>,
    /// Drawn at random and recorded when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub arch: ModelKind,
    #[arg(long, default_value = "full")]
    pub features: FeatureSubset,
    #[arg(long)]
    pub user: String,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Output directory for model.json and run.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Add recordings spliced at 30 s so the model follows behaviour
    /// changes within a session.
    #[arg(long)]
    pub switching: bool,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    PerUser,
    Louo,
    CrossSession,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CrossvalArgs {
    #[arg(long, value_enum, default_value = "per-user")]
    pub protocol: Protocol,
    #[arg(long, env = DATA_ENV)]
    pub data: PathBuf,
    /// Second-session dataset for the cross-session protocol.
    #[arg(long)]
    pub test_data: Option<PathBuf>,
    #[arg(long, default_value = "dummy,linear,mlp,svr,lstm")]
    pub archs: List<ModelKind>,
    #[arg(long, default_value = "full,exo,emg")]
    pub features: List<FeatureSubset>,
    #[arg(long, default_value_t = 0)]
    pub fold_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub training: TrainingArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory; without it, stream records are read from stdin.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sequence id within the dataset; defaults to the first one.
    #[arg(long)]
    pub sequence: Option<String>,
    /// Real-time multiplier; omitted runs unpaced.
    #[arg(long)]
    pub pace: Option<f64>,
    /// Write the four-panel trace figure here.
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Output directory for predictions.jsonl and run.json; predictions go
    /// to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Turns a JSON object into flags: `{"users": 2, "online_session": true}`
/// becomes `--users 2 --online-session`. Arrays join with commas; `false`
/// and `null` are dropped.
pub fn config_flags(config: &serde_json::Value) -> anyhow::Result<Vec<String>> {
    use serde_json::Value;
    let obj = match config.get("config") {
        Some(inner @ Value::Object(_)) => inner,
        _ => config,
    };
    let Value::Object(map) = obj else {
        bail!("config must be a JSON object");
    };
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(anyhow::anyhow!("unsupported config value {other}")),
    };
    let mut out = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                let parts = items.iter().map(scalar).collect::<anyhow::Result<Vec<_>>>()?;
                out.push(flag);
                out.push(parts.join(","));
            }
            // Flattened groups such as `training`.
            Value::Object(_) => out.extend(config_flags(value)?),
            v => {
                out.push(flag);
                out.push(scalar(v)?);
            }
        }
    }
    Ok(out)
}

/// Splices the flags of a `--config` file right after the subcommand name,
/// so explicit flags that follow take precedence.
pub fn expand_config(args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let flags = read_config(Path::new(&path))?;
    let Some(pos) = args.iter().position(|a| Command::NAMES.contains(&a.as_str())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn read_config(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    config_flags(&value)
}
