//! Optimisation loop, length-generalisation evaluation and seed sweeps.

use std::io::Write;
use std::ops::RangeInclusive;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tasks::{Batch, Task};

/// Score at or above which a run counts as generalising.
pub const SUCCESS_THRESHOLD: f64 = 0.90;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f32,
    /// Global gradient-norm bound; `0` disables clipping.
    pub clip_norm: f32,
    pub seed: u64,
    pub train_min_len: usize,
    pub train_max_len: usize,
    pub eval_min_len: usize,
    pub eval_max_len: usize,
    /// Samples drawn per evaluation length.
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl TrainConfig {
    /// Small-machine preset: evaluation up to length 200.
    pub fn desk() -> Self {
        Self { steps: 20_000, eval_max_len: 200, eval_samples: 256, ..Self::full() }
    }

    pub fn full() -> Self {
        Self {
            steps: 40_000,
            batch: 128,
            learning_rate: 1e-3,
            clip_norm: 1.0,
            seed: 0,
            train_min_len: 1,
            train_max_len: 40,
            eval_min_len: 41,
            eval_max_len: 500,
            eval_samples: 1024,
            eval_seed: 1_000_003,
        }
    }

    pub fn train_lengths(&self) -> RangeInclusive<usize> {
        self.train_min_len..=self.train_max_len
    }

    pub fn eval_lengths(&self) -> RangeInclusive<usize> {
        self.eval_min_len..=self.eval_max_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.eval_samples == 0 {
            return invalid("batch and eval_samples must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return invalid(format!("clip norm {} must be finite and non-negative", self.clip_norm));
        }
        if self.train_min_len == 0 || self.train_min_len > self.train_max_len {
            return invalid("train lengths must form a nonempty range starting at 1 or more");
        }
        if self.eval_min_len > self.eval_max_len {
            return invalid("eval lengths must form a nonempty range");
        }
        if self.eval_min_len <= self.train_max_len {
            return invalid(format!(
                "eval lengths must exceed the training maximum {} (got {})",
                self.train_max_len, self.eval_min_len
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Applies one update from the gradients held by `model`'s parameters.
    pub fn step(&mut self, model: &mut Model) {
        let mut params = model.params_mut();
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            let Some(g) = p.grad().map(<[f32]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of all parameter gradients.
pub fn grad_norm(model: &Model) -> f64 {
    model
        .params()
        .iter()
        .filter_map(|(_, p)| p.grad())
        .flat_map(|g| g.iter())
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(model: &mut Model, max_norm: f32) -> f64 {
    let norm = grad_norm(model);
    if max_norm > 0.0 && norm > max_norm as f64 {
        let scale = (max_norm as f64 / norm) as f32;
        for (_, p) in model.params_mut() {
            if let Some(g) = p.grad() {
                let scaled: Vec<f32> = g.iter().map(|x| x * scale).collect();
                p.zero_grad();
                p.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub wall_ms: f64,
    pub loss: f32,
}

/// Model plus optimiser state.
pub struct Trainer {
    pub model: Model,
    pub optimizer: Adam,
    pub clip_norm: f32,
}

impl Trainer {
    pub fn new(model: Model, learning_rate: f32, clip_norm: f32) -> Self {
        Self { model, optimizer: Adam::new(learning_rate), clip_norm }
    }

    /// One optimisation step on `batch`; returns the pre-update loss.
    pub fn step(&mut self, batch: &Batch) -> Result<f32> {
        let mut fwd = self.model.forward(&batch.tokens)?;
        let loss = fwd.loss(&batch.positions, &batch.labels)?;
        let value = fwd.tape.value(loss).data()[0];
        if !value.is_finite() {
            return Err(Error::Divergence { step: self.optimizer.steps_taken() as usize, loss: value });
        }
        self.model.zero_grad();
        fwd.backward_into(loss, &mut self.model)?;
        clip_grad_norm(&mut self.model, self.clip_norm);
        self.optimizer.step(&mut self.model);
        Ok(value)
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<LossPoint>,
}

/// Trains a freshly initialised model; `observe` sees every loss point.
pub fn train_with(
    model_config: ModelConfig,
    task: Task,
    config: &TrainConfig,
    mut observe: impl FnMut(&LossPoint),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_task_fits(&model_config, task)?;
    let model = Model::init(model_config, config.seed)?;
    let mut trainer = Trainer::new(model, config.learning_rate, config.clip_norm);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xDA7A);
    let range = config.train_lengths();
    let start = Instant::now();
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let len = task.sample_length(&range, &mut rng)?;
        let batch = task.batch(len, config.batch, &mut rng)?;
        let loss = trainer.step(&batch).map_err(|e| match e {
            Error::Divergence { loss, .. } => Error::Divergence { step, loss },
            e => e,
        })?;
        let point = LossPoint { step, wall_ms: start.elapsed().as_secs_f64() * 1e3, loss };
        observe(&point);
        trace.push(point);
    }
    Ok(TrainOutcome { model: trainer.model, trace })
}

pub fn train(model_config: ModelConfig, task: Task, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model_config, task, config, |_| {})
}

fn check_task_fits(config: &ModelConfig, task: Task) -> Result<()> {
    if config.input != task.input_size() || config.outputs != task.output_size() {
        return invalid(format!(
            "model widths ({} in, {} out) do not match task {} ({} in, {} out)",
            config.input,
            config.outputs,
            task,
            task.input_size(),
            task.output_size()
        ));
    }
    Ok(())
}

/// Anything that labels output positions of a token batch.
pub trait Predictor {
    /// Class per (position, sample), position-major.
    fn predict(&self, tokens: &[Vec<usize>], positions: &[usize]) -> Result<Vec<usize>>;
}

impl Predictor for Model {
    fn predict(&self, tokens: &[Vec<usize>], positions: &[usize]) -> Result<Vec<usize>> {
        Model::predict(self, tokens, positions)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthAccuracy {
    pub length: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub per_length: Vec<LengthAccuracy>,
    pub score: f64,
    pub success: bool,
}

impl EvalReport {
    pub fn from_accuracies(seed: u64, per_length: Vec<LengthAccuracy>) -> Self {
        let score = if per_length.is_empty() {
            0.0
        } else {
            per_length.iter().map(|l| l.accuracy).sum::<f64>() / per_length.len() as f64
        };
        Self { seed, per_length, score, success: score >= SUCCESS_THRESHOLD }
    }
}

/// Samples for one evaluation length; fixed by `(eval_seed, length)`.
pub fn eval_batch(task: Task, length: usize, samples: usize, eval_seed: u64) -> Result<Batch> {
    let mut rng = ChaCha8Rng::seed_from_u64(eval_seed ^ (length as u64).wrapping_mul(0x2545_F491_4F6C_DD1D));
    task.batch(length, samples, &mut rng)
}

/// Accuracy of `predictor` on one batch: mean exact match over masked positions.
pub fn batch_accuracy(predictor: &impl Predictor, batch: &Batch) -> Result<f64> {
    const CHUNK: usize = 256;
    let mut correct = 0usize;
    let n = batch.len();
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let tokens = &batch.tokens[start..end];
        let preds = predictor.predict(tokens, &batch.positions)?;
        let rows = end - start;
        for (i, _) in batch.positions.iter().enumerate() {
            for b in 0..rows {
                correct += (preds[i * rows + b] == batch.labels[i * n + start + b]) as usize;
            }
        }
    }
    Ok(correct as f64 / (n * batch.positions.len()) as f64)
}

/// Scores `predictor` over the valid task lengths in `lengths`.
pub fn evaluate(
    predictor: &impl Predictor,
    task: Task,
    lengths: &[usize],
    samples: usize,
    eval_seed: u64,
    seed: u64,
) -> Result<EvalReport> {
    let valid: Vec<usize> = lengths.iter().copied().filter(|&l| task.valid_length(l)).collect();
    if valid.is_empty() {
        return invalid(format!("no valid {task} length to evaluate"));
    }
    let mut per_length = Vec::with_capacity(valid.len());
    for length in valid {
        let batch = eval_batch(task, length, samples, eval_seed)?;
        per_length.push(LengthAccuracy { length, accuracy: batch_accuracy(predictor, &batch)? });
    }
    Ok(EvalReport::from_accuracies(seed, per_length))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSweep {
    pub reports: Vec<EvalReport>,
    pub best: usize,
}

impl SeedSweep {
    pub fn best_report(&self) -> &EvalReport {
        &self.reports[self.best]
    }

    pub fn scores(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.score).collect()
    }
}

/// Runs `run` per seed and keeps the maximum score (first on ties). With
/// `stop_on_success` the sweep ends at the first successful seed.
pub fn run_seeds<E: From<Error>>(
    seeds: &[u64],
    stop_on_success: bool,
    mut run: impl FnMut(u64) -> std::result::Result<EvalReport, E>,
) -> std::result::Result<SeedSweep, E> {
    if seeds.is_empty() {
        return Err(Error::InvalidInput("at least one seed is required".into()).into());
    }
    let mut reports: Vec<EvalReport> = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let report = run(seed)?;
        let done = stop_on_success && report.success;
        reports.push(report);
        if done {
            break;
        }
    }
    let best = (0..reports.len()).fold(0, |b, i| if reports[i].score > reports[b].score { i } else { b });
    Ok(SeedSweep { reports, best })
}

/// Random seeds for a sweep, derived from one base seed.
pub fn seed_list(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..n).map(|i| if i == 0 { base } else { rng.gen() }).collect()
}

pub fn write_loss_csv(trace: &[LossPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "wall_ms", "loss"])?;
    for p in trace {
        w.write_record([p.step.to_string(), format!("{:.3}", p.wall_ms), p.loss.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_eval_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["length", "accuracy"])?;
    for l in &report.per_length {
        w.write_record([l.length.to_string(), l.accuracy.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-run summary written as JSON next to the other outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub variant: String,
    pub hidden: usize,
    pub refine_stages: usize,
    pub seed: u64,
    pub steps: usize,
    pub final_loss: Option<f32>,
    pub score: f64,
    pub success: bool,
    pub config_hash: String,
}

pub fn write_json(value: &impl Serialize, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
