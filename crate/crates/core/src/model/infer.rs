//! Forward-only evaluation without a tape.
//!
//! The parallel variants keep one in-place buffer of `len × batch` states and
//! run each scan level as a set of independent row blocks spread over the
//! current rayon pool. Sequential variants advance one position at a time,
//! splitting the batch rows of every step across the pool. Arithmetic matches
//! the tape path operation for operation, so the two agree bit for bit.

use rayon::prelude::*;
use serde::Serialize;

use super::forward::batch_shape;
use super::{Affine, CompositionParams, EmbedParams, Encoder, LstmCellParams, Model, RefineParams};
use crate::error::{invalid, Error, Result};
use crate::scan::ScanPlan;
use crate::tensor::kernels;

/// Rows per parallel block within a scan level.
const BLOCK_ROWS: usize = 256;

/// Structural cost of one inference call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct InferStats {
    /// Sequential levels executed (scan levels, or time steps).
    pub depth: usize,
    /// Combiner (or cell) applications per sample.
    pub work: usize,
    /// Latent states resident in the working buffer.
    pub stored_states: usize,
    /// Bytes held by the state buffers.
    pub state_bytes: usize,
}

/// Hidden vectors at the requested positions: `hidden[(i·batch + b)·d_h ..]`
/// is `h` of sample `b` at `positions[i]`.
#[derive(Clone, Debug)]
pub struct Inference {
    pub hidden: Vec<f32>,
    pub positions: Vec<usize>,
    pub batch: usize,
    pub stats: InferStats,
}

fn alloc(len: usize) -> Result<Vec<f32>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len).map_err(|_| Error::OutOfMemory { bytes: len.saturating_mul(4) })?;
    v.resize(len, 0.0);
    Ok(v)
}

#[derive(Clone, Copy)]
struct SharedMut(*mut f32);
unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}

fn affine_rows(a: &Affine, x: &[f32], rows: usize) -> Vec<f32> {
    let (out, input) = (a.out_dim(), a.in_dim());
    let mut y = vec![0.0; rows * out];
    kernels::linear(x, a.w.data(), a.b.data(), rows, input, out, &mut y);
    y
}

/// Leaf `(h, c)` for every input symbol, computed on identity rows.
fn leaf_table(embed: &EmbedParams, input: usize) -> (Vec<f32>, Vec<f32>) {
    let d = embed.u.out_dim();
    let eye: Vec<f32> = (0..input * input).map(|i| if i / input == i % input { 1.0 } else { 0.0 }).collect();
    let mut io = affine_rows(&embed.io, &eye, input);
    kernels::sigmoid_inplace(&mut io);
    let mut u = affine_rows(&embed.u, &eye, input);
    kernels::tanh_inplace(&mut u);
    let mut h = vec![0.0; input * d];
    let mut c = vec![0.0; input * d];
    for v in 0..input {
        for j in 0..d {
            let cv = io[v * 2 * d + j] * u[v * d + j];
            c[v * d + j] = cv;
            h[v * d + j] = io[v * 2 * d + d + j] * cv.tanh();
        }
    }
    (h, c)
}

/// In-place gated update `c = i⊙u + f₁⊙c₁ (+ f₂⊙c₂)`, `h = o⊙tanh(c)`.
fn gated_update(gates: &[f32], u: &[f32], cells: &[&[f32]], d: usize, h: &mut [f32], c: &mut [f32]) {
    let blocks = cells.len() + 2;
    let rows = u.len() / d;
    for r in 0..rows {
        let g = &gates[r * blocks * d..(r + 1) * blocks * d];
        for j in 0..d {
            let (i, o) = (g[cells.len() * d + j], g[(cells.len() + 1) * d + j]);
            let mut acc = i * u[r * d + j];
            for (k, cell) in cells.iter().enumerate() {
                acc += g[k * d + j] * cell[r * d + j];
            }
            c[r * d + j] = acc;
            h[r * d + j] = o * acc.tanh();
        }
    }
}

fn refine_rows(stages: &[RefineParams], rows: usize, d: usize, h: &mut Vec<f32>, c: &mut Vec<f32>) {
    for stage in stages {
        let mut g = affine_rows(&stage.gates, h, rows);
        kernels::sigmoid_inplace(&mut g);
        let mut u = affine_rows(&stage.update, h, rows);
        kernels::tanh_inplace(&mut u);
        let prev = c.clone();
        gated_update(&g, &u, &[&prev], d, h, c);
    }
}

fn compose_rows(
    comp: &CompositionParams,
    refine: &[RefineParams],
    joined: &[f32],
    c_left: &[f32],
    c_right: &[f32],
    d: usize,
) -> (Vec<f32>, Vec<f32>) {
    let rows = c_left.len() / d;
    let mut g = affine_rows(&comp.gates, joined, rows);
    kernels::sigmoid_inplace(&mut g);
    let mut u = affine_rows(&comp.update, joined, rows);
    kernels::tanh_inplace(&mut u);
    let mut h = vec![0.0; rows * d];
    let mut c = vec![0.0; rows * d];
    gated_update(&g, &u, &[c_left, c_right], d, &mut h, &mut c);
    refine_rows(refine, rows, d, &mut h, &mut c);
    (h, c)
}

fn fc_rows(comp: &Affine, refine: &[Affine], joined: &[f32], rows: usize) -> Vec<f32> {
    let mut h = affine_rows(comp, joined, rows);
    kernels::relu_inplace(&mut h);
    for stage in refine {
        h = affine_rows(stage, &h, rows);
        kernels::relu_inplace(&mut h);
    }
    h
}

/// Executes `plan` over slot-major buffers (`slot·batch + b` rows of width
/// `d`). `combine` maps `(joined [rows × 2d], left rows, right rows)` to new
/// `(h, c)` rows; `c` buffers are empty for hidden-only variants. Returns the
/// number of levels and steps actually executed.
fn run_levels(
    plan: &ScanPlan,
    batch: usize,
    d: usize,
    h_buf: &mut [f32],
    c_buf: &mut [f32],
    combine: impl Fn(&[f32], &[f32], &[f32], usize) -> (Vec<f32>, Vec<f32>) + Sync,
) -> (usize, usize) {
    let has_cell = !c_buf.is_empty();
    let h_ptr = SharedMut(h_buf.as_mut_ptr());
    let c_ptr = SharedMut(c_buf.as_mut_ptr());
    let (mut levels, mut steps) = (0, 0);
    for level in plan.levels() {
        levels += 1;
        steps += level.len();
        let total = level.len() * batch;
        let blocks = total.div_ceil(BLOCK_ROWS);
        (0..blocks).into_par_iter().for_each(|blk| {
            let (h_ptr, c_ptr) = (h_ptr, c_ptr);
            let start = blk * BLOCK_ROWS;
            let end = (start + BLOCK_ROWS).min(total);
            let rows = end - start;
            let mut joined = vec![0.0f32; rows * 2 * d];
            let mut cl = vec![0.0f32; if has_cell { rows * d } else { 0 }];
            let mut cr = vec![0.0f32; cl.len()];
            // SAFETY: a validated plan never writes a slot that another step
            // of the same level reads or writes, and each (step, sample) row
            // belongs to exactly one block. Reads of this block's own output
            // rows happen before the writes below.
            unsafe {
                for (r, row) in (start..end).enumerate() {
                    let step = &level[row / batch];
                    let b = row % batch;
                    let (li, ri) = ((step.left * batch + b) * d, (step.right * batch + b) * d);
                    let src_l = std::slice::from_raw_parts(h_ptr.0.add(li), d);
                    let src_r = std::slice::from_raw_parts(h_ptr.0.add(ri), d);
                    joined[r * 2 * d..r * 2 * d + d].copy_from_slice(src_l);
                    joined[r * 2 * d + d..(r + 1) * 2 * d].copy_from_slice(src_r);
                    if has_cell {
                        cl[r * d..(r + 1) * d].copy_from_slice(std::slice::from_raw_parts(c_ptr.0.add(li), d));
                        cr[r * d..(r + 1) * d].copy_from_slice(std::slice::from_raw_parts(c_ptr.0.add(ri), d));
                    }
                }
                let (h, c) = combine(&joined, &cl, &cr, rows);
                for (r, row) in (start..end).enumerate() {
                    let step = &level[row / batch];
                    let o = (step.out * batch + row % batch) * d;
                    std::ptr::copy_nonoverlapping(h[r * d..].as_ptr(), h_ptr.0.add(o), d);
                    if has_cell {
                        std::ptr::copy_nonoverlapping(c[r * d..].as_ptr(), c_ptr.0.add(o), d);
                    }
                }
            }
        });
    }
    (levels, steps)
}

fn lstm_step(cell: &LstmCellParams, z: &[f32], c_prev: &[f32], d: usize) -> (Vec<f32>, Vec<f32>) {
    let rows = c_prev.len() / d;
    let mut g = affine_rows(&cell.gates, z, rows);
    kernels::sigmoid_inplace(&mut g);
    let mut u = affine_rows(&cell.update, z, rows);
    kernels::tanh_inplace(&mut u);
    let mut h = vec![0.0; rows * d];
    let mut c = vec![0.0; rows * d];
    gated_update(&g, &u, &[c_prev], d, &mut h, &mut c);
    (h, c)
}

impl Model {
    /// Hidden vectors at `positions` for a batch of equal-length sequences.
    pub fn infer(&self, tokens: &[Vec<usize>], positions: &[usize]) -> Result<Inference> {
        let (batch, len) = batch_shape(tokens)?;
        let (d, dx) = (self.config.hidden, self.config.input);
        if let Some(&p) = positions.iter().find(|&&p| p >= len) {
            return invalid(format!("output position {p} outside sequence of {len}"));
        }
        if let Some(&tok) = tokens.iter().flatten().find(|&&t| t >= dx) {
            return invalid(format!("token id {tok} outside input width {dx}"));
        }
        let mut hidden = alloc(positions.len() * batch * d)?;
        let collect = |hidden: &mut [f32], pos_idx: usize, rows: &[f32]| {
            hidden[pos_idx * batch * d..(pos_idx + 1) * batch * d].copy_from_slice(rows);
        };

        let stats = match &self.encoder {
            Encoder::PrLstm { embed, comp, refine } => {
                let plan = ScanPlan::build(len)?;
                let (th, tc) = leaf_table(embed, dx);
                let mut h_buf = alloc(len * batch * d)?;
                let mut c_buf = alloc(len * batch * d)?;
                fill_leaves(tokens, batch, d, &th, &mut h_buf);
                fill_leaves(tokens, batch, d, &tc, &mut c_buf);
                let (depth, work) = run_levels(&plan, batch, d, &mut h_buf, &mut c_buf, |joined, cl, cr, _| {
                    compose_rows(comp, refine, joined, cl, cr, d)
                });
                for (i, &p) in positions.iter().enumerate() {
                    collect(&mut hidden, i, &h_buf[p * batch * d..(p + 1) * batch * d]);
                }
                InferStats {
                    depth,
                    work,
                    stored_states: len * batch,
                    state_bytes: (h_buf.len() + c_buf.len()) * 4,
                }
            }
            Encoder::PrRnn { embed, comp, refine } => {
                let plan = ScanPlan::build(len)?;
                let eye: Vec<f32> = (0..dx * dx).map(|i| if i / dx == i % dx { 1.0 } else { 0.0 }).collect();
                let mut table = affine_rows(embed, &eye, dx);
                kernels::relu_inplace(&mut table);
                let mut h_buf = alloc(len * batch * d)?;
                fill_leaves(tokens, batch, d, &table, &mut h_buf);
                let (depth, work) = run_levels(&plan, batch, d, &mut h_buf, &mut [], |joined, _, _, rows| {
                    (fc_rows(comp, refine, joined, rows), Vec::new())
                });
                for (i, &p) in positions.iter().enumerate() {
                    collect(&mut hidden, i, &h_buf[p * batch * d..(p + 1) * batch * d]);
                }
                InferStats {
                    depth,
                    work,
                    stored_states: len * batch,
                    state_bytes: h_buf.len() * 4,
                }
            }
            Encoder::SeqLstm { cell } => {
                let mut h = alloc(batch * d)?;
                let mut c = alloc(batch * d)?;
                for t in 0..len {
                    let z = step_inputs(tokens, t, dx, &h, d);
                    let blocks: Vec<(Vec<f32>, Vec<f32>)> = z
                        .par_chunks(BLOCK_ROWS * (dx + d))
                        .zip(c.par_chunks(BLOCK_ROWS * d))
                        .map(|(zb, cb)| lstm_step(cell, zb, cb, d))
                        .collect();
                    for (k, (hb, cb)) in blocks.into_iter().enumerate() {
                        let o = k * BLOCK_ROWS * d;
                        h[o..o + hb.len()].copy_from_slice(&hb);
                        c[o..o + cb.len()].copy_from_slice(&cb);
                    }
                    for (i, _) in positions.iter().enumerate().filter(|(_, &p)| p == t) {
                        collect(&mut hidden, i, &h);
                    }
                }
                InferStats { depth: len, work: len, stored_states: batch, state_bytes: (h.len() + c.len()) * 4 }
            }
            Encoder::SeqRnn { cell } => {
                let mut h = alloc(batch * d)?;
                for t in 0..len {
                    let z = step_inputs(tokens, t, dx, &h, d);
                    let blocks: Vec<Vec<f32>> = z
                        .par_chunks(BLOCK_ROWS * (dx + d))
                        .map(|zb| {
                            let mut y = affine_rows(cell, zb, zb.len() / (dx + d));
                            kernels::tanh_inplace(&mut y);
                            y
                        })
                        .collect();
                    for (k, hb) in blocks.into_iter().enumerate() {
                        let o = k * BLOCK_ROWS * d;
                        h[o..o + hb.len()].copy_from_slice(&hb);
                    }
                    for (i, _) in positions.iter().enumerate().filter(|(_, &p)| p == t) {
                        collect(&mut hidden, i, &h);
                    }
                }
                InferStats { depth: len, work: len, stored_states: batch, state_bytes: h.len() * 4 }
            }
        };
        Ok(Inference { hidden, positions: positions.to_vec(), batch, stats })
    }

    /// Head logits at `positions`, rows ordered position-major.
    pub fn infer_logits(&self, tokens: &[Vec<usize>], positions: &[usize]) -> Result<(Vec<f32>, InferStats)> {
        let inf = self.infer(tokens, positions)?;
        let rows = positions.len() * inf.batch;
        Ok((affine_rows(&self.head, &inf.hidden, rows), inf.stats))
    }

    /// Arg-max class at `positions` (ties to the lowest index), position-major.
    pub fn predict(&self, tokens: &[Vec<usize>], positions: &[usize]) -> Result<Vec<usize>> {
        let (logits, _) = self.infer_logits(tokens, positions)?;
        Ok(logits.chunks_exact(self.config.outputs).map(kernels::argmax).collect())
    }
}

fn fill_leaves(tokens: &[Vec<usize>], batch: usize, d: usize, table: &[f32], buf: &mut [f32]) {
    for (b, seq) in tokens.iter().enumerate() {
        for (t, &tok) in seq.iter().enumerate() {
            let o = (t * batch + b) * d;
            buf[o..o + d].copy_from_slice(&table[tok * d..(tok + 1) * d]);
        }
    }
}

/// `[onehot(x_t) | h]` rows for one time step.
fn step_inputs(tokens: &[Vec<usize>], t: usize, dx: usize, h: &[f32], d: usize) -> Vec<f32> {
    let w = dx + d;
    let mut z = vec![0.0f32; tokens.len() * w];
    for (b, seq) in tokens.iter().enumerate() {
        z[b * w + seq[t]] = 1.0;
        z[b * w + dx..(b + 1) * w].copy_from_slice(&h[b * d..(b + 1) * d]);
    }
    z
}
