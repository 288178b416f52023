//! `prlstm` command-line entry point.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "prlstm", version, about = "Parallel recursive LSTM: train, evaluate and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat JSON config file with dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Named defaults: desk or full.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Output directory (bench also accepts a .csv path).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Worker threads (default: PRLSTM_WORKERS, else all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and evaluate it on the held-out lengths.
    Train {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        refine_stages: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        clip: Option<f32>,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a saved training run.
    Eval {
        /// Training output directory holding model.prl and model.json.
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        samples: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Time forward passes across sequence lengths.
    Bench {
        /// Comma-separated variants (pr-lstm, pr-rnn, seq-lstm, seq-rnn, empty).
        #[arg(long)]
        variant: Option<String>,
        /// Comma-separated ascending lengths.
        #[arg(long)]
        lengths: Option<String>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        threshold_ms: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the ablation grid and summarise best-of-seeds scores.
    Ablate {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Write task samples as JSON lines.
    GenData {
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        min_len: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
        /// Samples per length.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the scan schedule for one sequence length.
    PlanInspect {
        #[arg(long = "T", short = 'T')]
        len: Option<usize>,
        #[arg(long)]
        csv: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn put(map: &mut Map<String, Value>, key: &str, value: Option<impl Into<Value>>) {
    if let Some(v) = value {
        map.insert(key.to_string(), v.into());
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| CliError::Config(format!("bad {what} entry {x:?}"))))
        .collect()
}

fn env_workers() -> Result<Option<usize>, CliError> {
    match std::env::var("PRLSTM_WORKERS") {
        Ok(v) => v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("PRLSTM_WORKERS={v:?} is not a positive integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut o = Map::new();
    let common = match &cli.command {
        Command::Train { task, seed, variant, hidden, refine_stages, steps, batch, lr, clip, common } => {
            put(&mut o, "task", task.clone());
            put(&mut o, "train.seed", *seed);
            put(&mut o, "model.variant", variant.clone());
            put(&mut o, "model.hidden", *hidden);
            put(&mut o, "model.refine_stages", *refine_stages);
            put(&mut o, "train.steps", *steps);
            put(&mut o, "train.batch", *batch);
            put(&mut o, "train.learning_rate", lr.map(|x| json!(x)));
            put(&mut o, "train.clip_norm", clip.map(|x| json!(x)));
            common
        }
        Command::Eval { checkpoint, task, samples, common } => {
            put(&mut o, "eval.checkpoint", checkpoint.clone());
            put(&mut o, "task", task.clone());
            put(&mut o, "train.eval_samples", *samples);
            common
        }
        Command::Bench { variant, lengths, batch, repeats, threshold_ms, hidden, common } => {
            if let Some(v) = variant {
                o.insert("bench.variants".into(), json!(parse_list::<String>(v, "variant")?));
            }
            if let Some(l) = lengths {
                o.insert("bench.lengths".into(), json!(parse_list::<usize>(l, "length")?));
            }
            put(&mut o, "bench.batch", *batch);
            put(&mut o, "bench.repeats", *repeats);
            put(&mut o, "bench.threshold_ms", *threshold_ms);
            put(&mut o, "bench.hidden", *hidden);
            common
        }
        Command::Ablate { task, seed, seeds, steps, common } => {
            put(&mut o, "task", task.clone());
            put(&mut o, "train.seed", *seed);
            put(&mut o, "train.seeds", *seeds);
            put(&mut o, "train.steps", *steps);
            common
        }
        Command::GenData { task, min_len, max_len, count, seed, common } => {
            put(&mut o, "task", task.clone());
            put(&mut o, "data.min_len", *min_len);
            put(&mut o, "data.max_len", *max_len);
            put(&mut o, "data.count", *count);
            put(&mut o, "data.seed", *seed);
            common
        }
        Command::PlanInspect { len, common, .. } => {
            put(&mut o, "plan.len", *len);
            common
        }
    };
    put(&mut o, "preset", common.preset.clone());
    put(&mut o, "out_dir", common.out.clone());
    put(&mut o, "workers", common.workers);
    for s in &common.set {
        let (k, v) = config::parse_assignment(s)?;
        o.insert(k, v);
    }
    let file = common.config.as_deref().map(config::read_file).transpose()?;
    let resolved = config::resolve(file, o)?;

    let workers = match resolved.config.workers {
        0 => env_workers()?.unwrap_or_else(prlstm::bench::default_workers),
        n => n,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;

    match &cli.command {
        Command::Train { .. } => commands::train_cmd(&resolved),
        Command::Eval { .. } => commands::eval_cmd(&resolved),
        Command::Bench { .. } => commands::bench_cmd(&resolved, workers),
        Command::Ablate { .. } => commands::ablate_cmd(&resolved),
        Command::GenData { .. } => commands::gen_data_cmd(&resolved),
        Command::PlanInspect { csv, .. } => commands::plan_inspect_cmd(&resolved, *csv),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
