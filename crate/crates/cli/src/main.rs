//! `s2pd`: synthetic data, teacher training, distillation, evaluation and
//! deployment benchmarks from one binary.

mod commands;
mod run_dir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use s2pd::config::RunConfig;
use s2pd::error::{Error, Result};
use s2pd::eval::HorizonMode;

#[derive(Parser, Debug)]
#[command(name = "s2pd", version, about = "Sequence-to-point distillation for GPU-node load forecasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for data generation, initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON run config; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Override one config key, e.g. `--set epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic telemetry CSV.
    Synth {
        #[arg(long)]
        minutes: Option<usize>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Train the sequence teacher and write a run directory.
    TrainTeacher {
        #[arg(long)]
        data: PathBuf,
    },
    /// Distill a student from a frozen teacher checkpoint.
    DistillStudent {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        /// Train on ground truth only (the ablation baseline).
        #[arg(long)]
        no_distill: bool,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::OneStep)]
        mode: Mode,
        /// Also report errors in watts.
        #[arg(long)]
        watts: bool,
        /// Write a `t,truth,pred` CSV of the first test steps.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        trace_steps: Option<usize>,
        #[arg(long)]
        skip_embed_head: bool,
    },
    /// Measure size and single-thread CPU latency of a checkpoint.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        skip_embed_head: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    OneStep,
    Trajectory,
}

impl From<Mode> for HorizonMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::OneStep => HorizonMode::OneStep,
            Mode::Trajectory => HorizonMode::Trajectory,
        }
    }
}

fn apply_overrides(cfg: RunConfig, overrides: &[String]) -> Result<RunConfig> {
    if overrides.is_empty() {
        return Ok(cfg);
    }
    let mut value = serde_json::to_value(&cfg)?;
    let map = value.as_object_mut().expect("config serializes to an object");
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {item:?}")))?;
        let slot = map
            .get_mut(key)
            .ok_or_else(|| Error::Config(format!("--set: unknown config key {key:?}")))?;
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.into()));
    }
    serde_json::from_value(value).map_err(|e| Error::Config(format!("--set: {e}")))
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::from_json_file(path)?,
        None => RunConfig::default(),
    };
    cfg = apply_overrides(cfg, &cli.common.overrides)?;
    if let Some(seed) = cli.common.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Synth { minutes: Some(m), .. } => cfg.minutes = *m,
        Command::Evaluate {
            trace_steps: Some(n), ..
        } => cfg.trace_steps = *n,
        Command::Bench {
            batch, warmup, iters, ..
        } => {
            cfg.bench_batch = batch.unwrap_or(cfg.bench_batch);
            cfg.warmup = warmup.unwrap_or(cfg.warmup);
            cfg.iters = iters.unwrap_or(cfg.iters);
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out_dir = &cli.common.out_dir;
    match &cli.command {
        Command::Synth { output, .. } => commands::synth(&cfg, output),
        Command::TrainTeacher { data } => {
            let dir = commands::train_teacher_cmd(&cfg, data, out_dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::DistillStudent {
            data,
            teacher,
            no_distill,
        } => {
            let dir = commands::distill_student_cmd(&cfg, data, teacher, *no_distill, out_dir)?;
            println!("{}", dir.display());
            Ok(())
        }
        Command::Evaluate {
            model,
            data,
            mode,
            watts,
            trace,
            skip_embed_head,
            ..
        } => {
            let json = commands::evaluate(
                &cfg,
                &commands::EvalArgs {
                    model,
                    data,
                    mode: (*mode).into(),
                    watts: *watts,
                    trace: trace.as_deref(),
                    skip_embed_head: *skip_embed_head,
                },
            )?;
            println!("{json}");
            Ok(())
        }
        Command::Bench {
            model, skip_embed_head, ..
        } => {
            let report = commands::bench(&cfg, model, *skip_embed_head)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
