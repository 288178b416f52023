use std::io::Write;
use std::path::{Path, PathBuf};

use prlstm::bench::{self, BenchConfig, Target};
use prlstm::model::{count_params, parameter_matched_hidden, Model, ModelConfig, Variant};
use prlstm::scan::{ScanPlan, StepKind};
use prlstm::tasks::Task;
use prlstm::train::{self, EvalReport, Summary, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Resolved, RunConfig};
use crate::error::CliError;

pub const CHECKPOINT: &str = "model.prl";
pub const MODEL_SIDECAR: &str = "model.json";

fn task(c: &RunConfig) -> Result<Task, CliError> {
    Ok(c.task.parse()?)
}

fn train_config(c: &RunConfig) -> TrainConfig {
    TrainConfig {
        steps: c.train_steps,
        batch: c.train_batch,
        learning_rate: c.train_learning_rate,
        clip_norm: c.train_clip_norm,
        seed: c.train_seed,
        train_min_len: c.train_min_len,
        train_max_len: c.train_max_len,
        eval_min_len: c.eval_min_len,
        eval_max_len: c.eval_max_len,
        eval_samples: c.eval_samples,
        eval_seed: c.eval_seed,
    }
}

fn model_config(c: &RunConfig, task: Task) -> Result<ModelConfig, CliError> {
    let variant: Variant = c.model_variant.parse()?;
    let mc = ModelConfig::new(variant, c.model_hidden, task.input_size(), task.output_size())
        .with_refine_stages(c.model_refine_stages);
    mc.validate()?;
    Ok(mc)
}

fn out_dir(c: &RunConfig) -> PathBuf {
    PathBuf::from(&c.out_dir)
}

/// Trains one model, evaluates it and writes all run outputs into `dir`.
fn train_one(
    mc: ModelConfig,
    task: Task,
    tc: &TrainConfig,
    dir: &Path,
    hash: &str,
    log_prefix: &str,
) -> Result<Summary, CliError> {
    std::fs::create_dir_all(dir)?;
    let log_every = (tc.steps / 20).max(1);
    let mut window = Vec::with_capacity(log_every);
    let outcome = train::train_with(mc.clone(), task, tc, |p| {
        window.push(p.loss);
        if (p.step + 1) % log_every == 0 {
            let mean = window.iter().sum::<f32>() / window.len() as f32;
            eprintln!("{log_prefix}step {} loss {mean:.5} ({:.1}s)", p.step + 1, p.wall_ms / 1e3);
            window.clear();
        }
    })?;
    outcome.model.save(dir.join(CHECKPOINT))?;
    train::write_json(&mc, dir.join(MODEL_SIDECAR))?;
    train::write_loss_csv(&outcome.trace, dir.join("loss.csv"))?;
    let lengths: Vec<usize> = tc.eval_lengths().collect();
    let report = train::evaluate(&outcome.model, task, &lengths, tc.eval_samples, tc.eval_seed, tc.seed)?;
    train::write_eval_csv(&report, dir.join("eval.csv"))?;
    let summary = Summary {
        task: task.name().to_string(),
        variant: mc.variant.name().to_string(),
        hidden: mc.hidden,
        refine_stages: mc.refine_stages,
        seed: tc.seed,
        steps: tc.steps,
        final_loss: outcome.trace.last().map(|p| p.loss),
        score: report.score,
        success: report.success,
        config_hash: hash.to_string(),
    };
    train::write_json(&summary, dir.join("summary.json"))?;
    Ok(summary)
}

pub fn train_cmd(r: &Resolved) -> Result<(), CliError> {
    let c = &r.config;
    let task = task(c)?;
    let mc = model_config(c, task)?;
    let tc = train_config(c);
    tc.validate()?;
    let dir = out_dir(c);
    r.write_beside(&dir)?;
    let s = train_one(mc, task, &tc, &dir, &r.hash, "")?;
    println!("task={} variant={} seed={} score={:.4} success={}", s.task, s.variant, s.seed, s.score, s.success);
    Ok(())
}

pub fn eval_cmd(r: &Resolved) -> Result<(), CliError> {
    let c = &r.config;
    let task = task(c)?;
    let ckpt = c
        .eval_checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("eval needs eval.checkpoint (a training output directory)".into()))?;
    let ckpt = PathBuf::from(ckpt);
    let mc: ModelConfig = serde_json::from_reader(std::fs::File::open(ckpt.join(MODEL_SIDECAR))?)?;
    if mc.input != task.input_size() || mc.outputs != task.output_size() {
        return Err(CliError::Config(format!("checkpoint widths do not fit task {task}")));
    }
    let model = Model::load(mc, ckpt.join(CHECKPOINT))?;
    let tc = train_config(c);
    if tc.eval_min_len > tc.eval_max_len {
        return Err(CliError::Config("eval lengths must form a nonempty range".into()));
    }
    let dir = out_dir(c);
    r.write_beside(&dir)?;
    let lengths: Vec<usize> = tc.eval_lengths().collect();
    let report = train::evaluate(&model, task, &lengths, tc.eval_samples, tc.eval_seed, tc.seed)?;
    train::write_eval_csv(&report, dir.join("eval.csv"))?;
    train::write_json(&EvalSummary { task: task.name(), report: &report, config_hash: &r.hash }, dir.join("summary.json"))?;
    println!("task={task} score={:.4} success={}", report.score, report.success);
    Ok(())
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    task: &'static str,
    #[serde(flatten)]
    report: &'a EvalReport,
    config_hash: &'a str,
}

fn available_memory() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    Some(line.split_whitespace().nth(1)?.parse::<u64>().ok()? * 1024)
}

pub fn bench_cmd(r: &Resolved, workers: usize) -> Result<(), CliError> {
    let c = &r.config;
    let targets = c.bench_variants.iter().map(|v| v.parse::<Target>()).collect::<prlstm::Result<Vec<_>>>()?;
    if targets.is_empty() {
        return Err(CliError::Config("bench.variants is empty".into()));
    }
    let memory_limit = c.bench_memory_limit_bytes.or_else(|| available_memory().map(|m| m / 2));
    let out = PathBuf::from(&c.out_dir);
    let (dir, csv_path) = if out.extension().is_some_and(|e| e == "csv") {
        (out.parent().map(Path::to_path_buf).unwrap_or_default(), out.clone())
    } else {
        (out.clone(), out.join("bench.csv"))
    };
    r.write_beside(if dir.as_os_str().is_empty() { Path::new(".") } else { &dir })?;
    let mut records = Vec::new();
    let mut reports = Vec::new();
    for target in targets {
        let cfg = BenchConfig {
            target,
            lengths: c.bench_lengths.clone(),
            batch: c.bench_batch,
            repeats: c.bench_repeats,
            threshold_ms: c.bench_threshold_ms,
            workers,
            hidden: c.bench_hidden,
            seed: c.bench_seed,
            memory_limit_bytes: memory_limit,
        };
        let report = bench::profile_inference(&cfg)?;
        for rec in &report.records {
            eprintln!("{} T={} mean={:.3}ms std={:.3}ms {:?}", rec.variant, rec.length, rec.mean_ms, rec.std_ms, rec.termination);
        }
        records.extend(report.records.iter().cloned());
        reports.push(report);
    }
    bench::emit_csv(&records, &csv_path)?;
    let structure = csv_path.with_file_name("bench_structure.json");
    train::write_json(&reports, structure)?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// The ablation grid: label, variant, hidden size, refinement stages.
pub fn ablation_grid(hidden: usize) -> Vec<(&'static str, Variant, usize, usize)> {
    let matched = parameter_matched_hidden(hidden);
    vec![
        ("baseline", Variant::PrLstm, hidden, 1),
        ("param-matched", Variant::PrLstm, matched, 1),
        ("refine-0", Variant::PrLstm, hidden, 0),
        ("refine-2", Variant::PrLstm, hidden, 2),
        ("pr-rnn-0", Variant::PrRnn, hidden, 0),
        ("pr-rnn-1", Variant::PrRnn, hidden, 1),
        ("pr-rnn-2", Variant::PrRnn, hidden, 2),
    ]
}

#[derive(Serialize)]
struct AblationRow {
    label: &'static str,
    variant: &'static str,
    hidden: usize,
    refine_stages: usize,
    encoder_weights: usize,
    best_seed: u64,
    best_score: f64,
    success: bool,
    seed_scores: Vec<f64>,
}

pub fn ablate_cmd(r: &Resolved) -> Result<(), CliError> {
    let c = &r.config;
    let task = task(c)?;
    let base = train_config(c);
    base.validate()?;
    let dir = out_dir(c);
    r.write_beside(&dir)?;
    let seeds = train::seed_list(c.train_seed, c.train_seeds.max(1));
    let mut rows = Vec::new();
    for (label, variant, hidden, stages) in ablation_grid(c.model_hidden) {
        let mc = ModelConfig::new(variant, hidden, task.input_size(), task.output_size()).with_refine_stages(stages);
        let sweep = train::run_seeds(&seeds, false, |seed| {
            let tc = TrainConfig { seed, ..base.clone() };
            let run_dir = dir.join(format!("{label}-seed{seed}"));
            let s = train_one(mc.clone(), task, &tc, &run_dir, &r.hash, &format!("[{label} seed {seed}] "))?;
            Ok::<_, CliError>(EvalReport { seed, per_length: Vec::new(), score: s.score, success: s.success })
        })?;
        let best = sweep.best_report();
        let row = AblationRow {
            label,
            variant: variant.name(),
            hidden,
            refine_stages: stages,
            encoder_weights: count_params(&mc).encoder_weights,
            best_seed: best.seed,
            best_score: best.score,
            success: best.success,
            seed_scores: sweep.scores(),
        };
        println!("{label}: best score {:.4} (seed {})", row.best_score, row.best_seed);
        rows.push(row);
    }
    let mut w = csv::Writer::from_path(dir.join("ablation.csv")).map_err(prlstm::Error::from)?;
    w.write_record(["label", "variant", "hidden", "refine_stages", "encoder_weights", "best_seed", "best_score", "success"])
        .map_err(prlstm::Error::from)?;
    for row in &rows {
        w.write_record([
            row.label.to_string(),
            row.variant.to_string(),
            row.hidden.to_string(),
            row.refine_stages.to_string(),
            row.encoder_weights.to_string(),
            row.best_seed.to_string(),
            row.best_score.to_string(),
            row.success.to_string(),
        ])
        .map_err(prlstm::Error::from)?;
    }
    w.flush()?;
    train::write_json(&rows, dir.join("ablation.json"))?;
    Ok(())
}

#[derive(Serialize)]
struct DataLine<'a> {
    task: &'a str,
    input: &'a [usize],
    target: &'a [usize],
    mask: &'a [bool],
    seed: u64,
}

pub fn gen_data_cmd(r: &Resolved) -> Result<(), CliError> {
    let c = &r.config;
    let task = task(c)?;
    if c.data_min_len > c.data_max_len {
        return Err(CliError::Config("data.min_len exceeds data.max_len".into()));
    }
    let lengths = task.lengths_in(c.data_min_len..=c.data_max_len);
    if lengths.is_empty() {
        return Err(CliError::Config(format!("no valid {task} length in the data range")));
    }
    let dir = out_dir(c);
    r.write_beside(&dir)?;
    let path = dir.join(format!("{}.jsonl", task.name()));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    let mut index = 0u64;
    for len in lengths {
        for _ in 0..c.data_count {
            let seed = c.data_seed.wrapping_add(index);
            index += 1;
            let s = task.generate(len, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let line = DataLine { task: task.name(), input: &s.input, target: &s.target, mask: &s.mask, seed };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    println!("wrote {} samples to {}", index, path.display());
    Ok(())
}

pub fn plan_inspect_cmd(r: &Resolved, csv: bool) -> Result<(), CliError> {
    let plan = ScanPlan::build(r.config.plan_len)?;
    let mut out = std::io::stdout().lock();
    if csv {
        writeln!(out, "level,kind,left,right,out")?;
        for (k, level) in plan.levels().iter().enumerate() {
            for s in level {
                let kind = if s.kind == StepKind::Pair { "pair" } else { "fill" };
                writeln!(out, "{k},{kind},{},{},{}", s.left, s.right, s.out)?;
            }
        }
    } else {
        for (k, level) in plan.levels().iter().enumerate() {
            let pairs = level.iter().filter(|s| s.kind == StepKind::Pair).count();
            writeln!(out, "level {k}: {} steps (pair={pairs}, fill={})", level.len(), level.len() - pairs)?;
        }
        writeln!(out, "depth={} ops={}", plan.depth(), plan.op_count())?;
    }
    Ok(())
}
