//! Independent f64 PR-LSTM built from named parameter tensors: scalar loops
//! for every affine map and a recursive odd/even prefix walk.

#![allow(dead_code)]

use std::cell::Cell;
use std::collections::HashMap;

use prlstm::model::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Params = HashMap<String, Vec<f64>>;

pub struct Reference {
    pub d: usize,
    pub dx: usize,
    pub stages: usize,
    pub p: Params,
    /// Per-application copies of the composition/refinement parameters.
    pub untied: Option<Vec<Params>>,
}

#[derive(Clone)]
pub struct State {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(p: &Params, w: &str, b: &str, x: &[f64]) -> Vec<f64> {
    let (w, b) = (&p[w], &p[b]);
    (0..b.len()).map(|r| b[r] + (0..x.len()).map(|j| w[r * x.len() + j] * x[j]).sum::<f64>()).collect()
}

pub fn jax_scan<S: Clone>(xs: &[S], f: &dyn Fn(&S, &S) -> S) -> Vec<S> {
    if xs.len() < 2 {
        return xs.to_vec();
    }
    let reduced: Vec<S> = xs.chunks_exact(2).map(|p| f(&p[0], &p[1])).collect();
    let odd = jax_scan(&reduced, f);
    xs.iter()
        .enumerate()
        .map(|(t, x)| match t {
            0 => x.clone(),
            t if t % 2 == 1 => odd[t / 2].clone(),
            t => f(&odd[t / 2 - 1], x),
        })
        .collect()
}

impl Reference {
    pub fn new(model: &Model) -> Self {
        let cfg = &model.config;
        let p = model
            .to_named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.data().iter().map(|&v| v as f64).collect()))
            .collect();
        Self { d: cfg.hidden, dx: cfg.input, stages: cfg.refine_stages, p, untied: None }
    }

    pub fn leaf(&self, tok: usize) -> State {
        let d = self.d;
        let col = |w: &str, b: &str| -> Vec<f64> {
            let (w, b) = (&self.p[w], &self.p[b]);
            (0..b.len()).map(|r| w[r * self.dx + tok] + b[r]).collect()
        };
        let io: Vec<f64> = col("embed.W_io", "embed.b_io").into_iter().map(sigmoid).collect();
        let u: Vec<f64> = col("embed.W_u", "embed.b_u").into_iter().map(f64::tanh).collect();
        let c: Vec<f64> = (0..d).map(|j| io[j] * u[j]).collect();
        let h = (0..d).map(|j| io[d + j] * c[j].tanh()).collect();
        State { h, c }
    }

    pub fn combine(&self, p: &Params, l: &State, r: &State) -> State {
        let d = self.d;
        let x: Vec<f64> = l.h.iter().chain(&r.h).copied().collect();
        let g: Vec<f64> = affine(p, "comp.W_g2", "comp.b_g2", &x).into_iter().map(sigmoid).collect();
        let u: Vec<f64> = affine(p, "comp.W_u2", "comp.b_u2", &x).into_iter().map(f64::tanh).collect();
        let mut c: Vec<f64> = (0..d).map(|j| g[2 * d + j] * u[j] + g[j] * l.c[j] + g[d + j] * r.c[j]).collect();
        let mut h: Vec<f64> = (0..d).map(|j| g[3 * d + j] * c[j].tanh()).collect();
        for s in 0..self.stages {
            let g: Vec<f64> = affine(p, &format!("refine.{s}.W_g1"), &format!("refine.{s}.b_g1"), &h)
                .into_iter()
                .map(sigmoid)
                .collect();
            let u: Vec<f64> =
                affine(p, &format!("refine.{s}.W_u1"), &format!("refine.{s}.b_u1"), &h).into_iter().map(f64::tanh).collect();
            c = (0..d).map(|j| g[d + j] * u[j] + g[j] * c[j]).collect();
            h = (0..d).map(|j| g[2 * d + j] * c[j].tanh()).collect();
        }
        State { h, c }
    }

    pub fn prefix_states(&self, tokens: &[usize]) -> Vec<State> {
        let leaves: Vec<State> = tokens.iter().map(|&t| self.leaf(t)).collect();
        let counter = Cell::new(0usize);
        jax_scan(&leaves, &|l, r| {
            let k = counter.get();
            counter.set(k + 1);
            match &self.untied {
                Some(copies) => self.combine(&copies[k], l, r),
                None => self.combine(&self.p, l, r),
            }
        })
    }

    pub fn loss(&self, tokens: &[Vec<usize>], positions: &[usize], labels: &[usize]) -> f64 {
        let batch = tokens.len();
        let states: Vec<Vec<State>> = tokens.iter().map(|s| self.prefix_states(s)).collect();
        let mut total = 0.0;
        for (i, &pos) in positions.iter().enumerate() {
            for (b, st) in states.iter().enumerate() {
                let z = affine(&self.p, "head.W", "head.b", &st[pos].h);
                let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - z[labels[i * batch + b]];
            }
        }
        total / (positions.len() * batch) as f64
    }
}

pub struct Instance {
    pub model: Model,
    pub tokens: Vec<Vec<usize>>,
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_len: usize, max_hidden: usize) -> Instance {
    let d = rng.gen_range(1..=max_hidden);
    let len = rng.gen_range(1..=max_len);
    let dx = rng.gen_range(2..=4);
    let k = rng.gen_range(2..=3);
    let stages = rng.gen_range(0..=2);
    let cfg = ModelConfig::new(Variant::PrLstm, d, dx, k).with_refine_stages(stages);
    let model = Model::init(cfg, rng.gen()).unwrap();
    let batch = rng.gen_range(1..=3);
    let tokens: Vec<Vec<usize>> = (0..batch).map(|_| (0..len).map(|_| rng.gen_range(0..dx)).collect()).collect();
    let mut positions: Vec<usize> = (0..len).filter(|_| rng.gen_bool(0.5)).collect();
    if positions.is_empty() {
        positions.push(len - 1);
    }
    let labels = (0..positions.len() * batch).map(|_| rng.gen_range(0..k)).collect();
    Instance { model, tokens, positions, labels }
}

pub fn tape_gradients(inst: &mut Instance) -> (f32, Vec<(String, Vec<f32>)>) {
    let mut fwd = inst.model.forward(&inst.tokens).unwrap();
    let loss = fwd.loss(&inst.positions, &inst.labels).unwrap();
    let value = fwd.tape.value(loss).data()[0];
    inst.model.zero_grad();
    fwd.backward_into(loss, &mut inst.model).unwrap();
    let grads = inst
        .model
        .params()
        .into_iter()
        .map(|(n, t)| (n, t.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.numel()])))
        .collect();
    (value, grads)
}

/// Relative error. The floor stops coordinates below 1e-4, whose f32
/// rounding error (~1e-9 absolute) dominates, from reading as mismatches.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_FLOOR: f64 = 1e-4;

/// Compares tape gradients with central differences of the f64 reference
/// on `instances` random models; returns the worst relative error.
pub fn central_difference_check(seed: u64, instances: usize, max_len: usize, max_hidden: usize) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mut inst = random_instance(&mut rng, max_len, max_hidden);
        let (_, grads) = tape_gradients(&mut inst);
        let mut reference = Reference::new(&inst.model);
        for (name, g) in &grads {
            for i in 0..g.len() {
                let orig = reference.p[name][i];
                reference.p.get_mut(name).unwrap()[i] = orig + FD_STEP;
                let up = reference.loss(&inst.tokens, &inst.positions, &inst.labels);
                reference.p.get_mut(name).unwrap()[i] = orig - FD_STEP;
                let down = reference.loss(&inst.tokens, &inst.positions, &inst.labels);
                reference.p.get_mut(name).unwrap()[i] = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                let err = rel_err(g[i] as f64, fd, FD_FLOOR);
                worst = worst.max(err);
                if !(err < 1e-4) {
                    return Err(format!("{name}[{i}]: tape {} vs fd {fd} (rel {err:e})", g[i]));
                }
            }
        }
    }
    Ok(worst)
}
