use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use lrgcn_core::data::{GeneratorConfig, LabelRule};
use lrgcn_core::model::ModelConfig;
use lrgcn_core::pipeline::{self, BuildOptions};
use lrgcn_core::train::TrainConfig;
use lrgcn_core::{Error, Execution};

#[derive(Parser, Debug)]
#[command(name = "lrgcn", version, about = "Path failure classification on time-evolving graphs")]
struct Cli {
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic raw dataset directory.
    Generate {
        /// Generator config JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Label, split and scale a raw dataset directory in place.
    Build {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, value_enum)]
        rule: Option<Rule>,
        /// Alarm count that makes a telecom label positive.
        #[arg(long)]
        threshold: Option<usize>,
    },
    /// Train on a built dataset and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        model: PathBuf,
        /// Training config JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Write test-split probabilities for selected paths.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated path ids; all paths when omitted.
        #[arg(long, value_delimiter = ',')]
        paths: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-node attention of every path at one prediction time.
    ExportAttention {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Prediction time; the last labelled time when omitted.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients on a tiny instance.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train and test every model variant and write the averaged table.
    Benchmark {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: TrainOverrides,
        /// Comma-separated seeds to average over.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Args, Debug)]
struct TrainOverrides {
    /// Model config JSON.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Seed for initialization and shuffling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden width of the graph recurrence.
    #[arg(long)]
    hop: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Rule {
    Telecom,
    Traffic,
}

enum Failure {
    Usage(String),
    Fault(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = Result<Value, Failure>;

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(path).map_err(|_| Failure::Run(Error::MissingFile(path.to_owned())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn summary(value: impl serde::Serialize) -> Outcome {
    serde_json::to_value(value).map_err(|e| Failure::Run(e.into()))
}

fn configs(overrides: &TrainOverrides, config: Option<&Path>) -> Result<(ModelConfig, TrainConfig), Failure> {
    let mut model: ModelConfig = read_config(overrides.model_config.as_deref())?;
    let mut train: TrainConfig = read_config(config)?;
    if let Some(seed) = overrides.seed {
        model.seed = seed;
        train.seed = seed;
    }
    if let Some(epochs) = overrides.epochs {
        train.max_epochs = epochs;
    }
    if let Some(lr) = overrides.learning_rate {
        train.learning_rate = lr;
    }
    if let Some(batch) = overrides.batch_size {
        train.batch_size = batch;
    }
    if let Some(hop) = overrides.hop {
        model.hop = hop;
    }
    Ok((model, train))
}

fn run(command: Command, exec: Execution) -> Outcome {
    match command {
        Command::Generate { config, out, seed } => {
            let mut config: GeneratorConfig = read_config(config.as_deref())?;
            if let Some(seed) = seed {
                config.seed = seed;
            }
            summary(pipeline::generate(&config, &out)?)
        }
        Command::Build { data, window, horizon, rule, threshold } => {
            let mut options = BuildOptions::default();
            options.window = window.unwrap_or(options.window);
            options.horizon = horizon.unwrap_or(options.horizon);
            options.rule = match (rule, threshold) {
                (Some(Rule::Traffic), Some(_)) => {
                    return Err(Failure::Usage("--threshold applies only to --rule telecom".into()))
                }
                (Some(Rule::Traffic), None) => LabelRule::Traffic,
                (_, Some(threshold)) => LabelRule::Telecom { threshold },
                (Some(Rule::Telecom), None) => LabelRule::Telecom { threshold: 1 },
                (None, None) => options.rule,
            };
            summary(pipeline::build(&data, &options, exec)?)
        }
        Command::Train { data, model, config, overrides, history } => {
            let (model_config, train_config) = configs(&overrides, config.as_deref())?;
            summary(pipeline::train(&data, &model_config, &train_config, &model, history.as_deref(), exec)?)
        }
        Command::Evaluate { data, model, report } => summary(pipeline::evaluate(&data, &model, &report, exec)?),
        Command::Predict { data, model, paths, out } => {
            let rows = pipeline::predict(&data, &model, paths.as_deref(), &out, exec)?;
            Ok(json!({ "rows": rows }))
        }
        Command::ExportAttention { data, model, out, t } => {
            let rows = pipeline::export_attention(&data, &model, t, &out, exec)?;
            Ok(json!({ "rows": rows }))
        }
        Command::Gradcheck { seed } => {
            let report = pipeline::gradient_check(seed, exec)?;
            if report.failures > 0 {
                return Err(Failure::Fault(format!(
                    "{} of {} gradient coordinates disagree, worst {}",
                    report.failures,
                    report.coordinates,
                    report.worst.as_deref().unwrap_or("?")
                )));
            }
            summary(report)
        }
        Command::Benchmark { data, out, config, overrides, seeds } => {
            let (model_config, train_config) = configs(&overrides, config.as_deref())?;
            let seeds = seeds.unwrap_or_else(|| overrides.seed.map_or(vec![0, 1, 2], |s| vec![s]));
            let results = pipeline::benchmark(&data, &model_config, &train_config, &seeds, &out, exec)?;
            summary(json!({ "variants": results }))
        }
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Generate { .. } => "generate",
        Command::Build { .. } => "build",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Predict { .. } => "predict",
        Command::ExportAttention { .. } => "export-attention",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Benchmark { .. } => "benchmark",
    }
}

/// Clap's multi-line error condensed to one line, without the usage hint.
fn one_line(err: &clap::Error) -> String {
    let text = err.render().to_string();
    let parts: Vec<&str> = text
        .lines()
        .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect();
    parts.join(" ").trim_start_matches("error: ").to_string()
}

fn status_line(command: Option<&str>, fields: Value) -> String {
    let mut line = Map::new();
    if let Some(command) = command {
        line.insert("command".into(), command.into());
    }
    if let Value::Object(extra) = fields {
        line.extend(extra);
    }
    Value::Object(line).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => {
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            println!("{}", status_line(None, json!({ "status": "error", "message": one_line(&err) })));
            return ExitCode::from(1);
        }
    };
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    let name = command_name(&cli.command);
    match run(cli.command, exec) {
        Ok(value) => {
            let fields = match value {
                Value::Object(mut map) => {
                    map.insert("status".into(), "ok".into());
                    Value::Object(map)
                }
                other => json!({ "status": "ok", "result": other }),
            };
            println!("{}", status_line(Some(name), fields));
            ExitCode::SUCCESS
        }
        Err(failure) => {
            let (message, code) = match failure {
                Failure::Usage(message) => (message, 1),
                Failure::Fault(message) => (message, 2),
                Failure::Run(e) => {
                    let code = if e.is_validation() { 1 } else { 2 };
                    (e.to_string(), code)
                }
            };
            println!("{}", status_line(Some(name), json!({ "status": "error", "message": message })));
            ExitCode::from(code)
        }
    }
}
