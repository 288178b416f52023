//! Forward-only inference timing and structural cost accounting.

use std::fmt;
use std::hint::black_box;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{InferStats, Model, ModelConfig, Variant};
use crate::scan::ScanPlan;

/// Repeats discarded before timing starts.
pub const WARMUP: usize = 3;

/// What a sweep runs at each length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Model(Variant),
    /// Walks the scan plan with a no-op combiner; measures harness overhead.
    EmptyCombiner,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Model(v) => v.name(),
            Target::EmptyCombiner => "empty",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "empty" {
            Ok(Target::EmptyCombiner)
        } else {
            s.parse().map(Target::Model)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub target: Target,
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub repeats: usize,
    pub threshold_ms: f64,
    pub workers: usize,
    pub hidden: usize,
    pub seed: u64,
    /// Sweeps stop with a memory termination once the state buffers of a
    /// length would exceed this many bytes.
    pub memory_limit_bytes: Option<u64>,
}

/// Input width used for benchmark models (two symbols plus padding).
pub const BENCH_INPUT: usize = 3;
pub const BENCH_OUTPUT: usize = 2;

impl BenchConfig {
    pub fn new(target: Target, lengths: Vec<usize>) -> Self {
        Self {
            target,
            lengths,
            batch: 1024,
            repeats: 100,
            threshold_ms: 500.0,
            workers: default_workers(),
            hidden: 64,
            seed: 0,
            memory_limit_bytes: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() || self.lengths.contains(&0) {
            return invalid("lengths must be nonempty and positive");
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("lengths must be strictly ascending");
        }
        if self.repeats == 0 || self.batch == 0 || self.workers == 0 || self.hidden == 0 {
            return invalid("repeats, batch, workers and hidden must be positive");
        }
        if !(self.threshold_ms >= 0.0) {
            return invalid("threshold must be non-negative");
        }
        Ok(())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    TimeThreshold,
    Memory,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: String,
    pub length: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// Bytes held by latent-state buffers (structural, exact).
    pub peak_mem_bytes: u64,
    pub termination: Termination,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub target: Target,
    pub workers: usize,
    pub batch: usize,
    pub records: Vec<BenchRecord>,
    /// Structural counts per record (zeros for a memory termination).
    pub structure: Vec<InferStats>,
    pub termination: Termination,
    /// Process peak resident set after the sweep, where the OS reports it.
    pub resident_peak_bytes: Option<u64>,
}

/// Latent-state bytes a parallel or sequential forward pass will hold.
pub fn state_bytes(target: Target, hidden: usize, length: usize, batch: usize) -> u64 {
    let per_state = match target {
        Target::Model(v) if v.has_cell() => 2 * hidden * 4,
        Target::Model(_) => hidden * 4,
        Target::EmptyCombiner => 0,
    } as u64;
    let slots = match target {
        Target::Model(v) if v.is_parallel() => length,
        Target::Model(_) => 1,
        Target::EmptyCombiner => 0,
    } as u64;
    per_state * slots * batch as u64
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn empty_sweep(len: usize, batch: usize) -> Result<InferStats> {
    let plan = ScanPlan::build(len)?;
    let (mut depth, mut work) = (0, 0);
    for level in plan.levels() {
        depth += 1;
        for step in level {
            work += 1;
            black_box(step);
        }
    }
    black_box(batch);
    Ok(InferStats { depth, work, stored_states: 0, state_bytes: 0 })
}

/// Times forward passes over the configured lengths.
pub fn profile_inference(config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
    let model = match config.target {
        Target::Model(v) => {
            Some(Model::init(ModelConfig::new(v, config.hidden, BENCH_INPUT, BENCH_OUTPUT), config.seed)?)
        }
        Target::EmptyCombiner => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::new();
    let mut structure = Vec::new();
    let mut termination = Termination::Completed;
    for &length in &config.lengths {
        let expected = state_bytes(config.target, config.hidden, length, config.batch);
        let record = |mean_ms, std_ms, termination| BenchRecord {
            variant: config.target.name().to_string(),
            length,
            mean_ms,
            std_ms,
            peak_mem_bytes: expected,
            termination,
        };
        if config.memory_limit_bytes.is_some_and(|limit| expected > limit) {
            records.push(record(0.0, 0.0, Termination::Memory));
            structure.push(InferStats::default());
            termination = Termination::Memory;
            break;
        }
        let tokens: Vec<Vec<usize>> =
            (0..config.batch).map(|_| (0..length).map(|_| rng.gen_range(0..BENCH_INPUT)).collect()).collect();
        let last = [length - 1];
        let run = || -> Result<InferStats> {
            match &model {
                Some(m) => pool.install(|| m.infer_logits(&tokens, &last)).map(|(logits, stats)| {
                    black_box(logits);
                    stats
                }),
                None => pool.install(|| empty_sweep(length, config.batch)),
            }
        };
        let mut times = Vec::with_capacity(config.repeats);
        let mut stats = InferStats::default();
        let mut oom = false;
        for i in 0..WARMUP + config.repeats {
            let start = Instant::now();
            match run() {
                Ok(s) => stats = s,
                Err(Error::OutOfMemory { .. }) => {
                    oom = true;
                    break;
                }
                Err(e) => return Err(e),
            }
            if i >= WARMUP {
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
        }
        if oom {
            records.push(record(0.0, 0.0, Termination::Memory));
            structure.push(InferStats::default());
            termination = Termination::Memory;
            break;
        }
        let (mean, std) = mean_std(&times);
        let over = mean >= config.threshold_ms;
        records.push(record(mean, std, if over { Termination::TimeThreshold } else { Termination::Completed }));
        structure.push(stats);
        if over {
            termination = Termination::TimeThreshold;
            break;
        }
    }
    Ok(BenchReport {
        target: config.target,
        workers: config.workers,
        batch: config.batch,
        records,
        structure,
        termination,
        resident_peak_bytes: resident_peak_bytes(),
    })
}

/// Peak resident set size from `/proc/self/status`, if available.
pub fn resident_peak_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// Work and depth of one forward pass (per sample), and the Brent bound
/// `τ_N + τ₁/p` in combiner-application units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RuntimePrediction {
    pub work: usize,
    pub depth: usize,
    pub bound: f64,
}

pub fn predict_runtime(variant: Variant, len: usize, workers: usize) -> Result<RuntimePrediction> {
    if len == 0 || workers == 0 {
        return invalid("length and worker count must be positive");
    }
    let (work, depth) = if variant.is_parallel() {
        let dw = ScanPlan::build(len)?.depth_work();
        (dw.work, dw.depth)
    } else {
        (len, len)
    };
    Ok(RuntimePrediction { work, depth, bound: depth as f64 + work as f64 / workers as f64 })
}

/// Milliseconds per bound unit, fitted by least squares through the origin.
pub fn fit_op_cost(records: &[BenchRecord], variant: Variant, workers: usize) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for r in records.iter().filter(|r| r.termination != Termination::Memory) {
        let b = predict_runtime(variant, r.length, workers)?.bound;
        num += b * r.mean_ms;
        den += b * b;
    }
    if den == 0.0 {
        return invalid("no timed records to fit");
    }
    Ok(num / den)
}

/// Exact integer fit `y = c1·x + c2` through every point, if one exists.
pub fn exact_linear_fit(points: &[(usize, usize)]) -> Option<(i64, i64)> {
    let (&(x0, y0), rest) = points.split_first()?;
    let Some(&(x1, y1)) = rest.iter().find(|(x, _)| *x != x0) else {
        return rest.iter().all(|&(_, y)| y == y0).then_some((0, y0 as i64));
    };
    let (dx, dy) = (x1 as i64 - x0 as i64, y1 as i64 - y0 as i64);
    if dy % dx != 0 {
        return None;
    }
    let c1 = dy / dx;
    let c2 = y0 as i64 - c1 * x0 as i64;
    points.iter().all(|&(x, y)| c1 * x as i64 + c2 == y as i64).then_some((c1, c2))
}

pub fn emit_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["variant", "length", "mean_ms", "std_ms", "peak_mem_bytes", "termination"])?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let records = r.deserialize().collect::<std::result::Result<Vec<BenchRecord>, _>>()?;
    Ok(records)
}
