use super::encoder::{self, CompositionVars, EmbedVars, RefineVars, StateVars};
use super::{BoundAffine, Encoder, Model};
use crate::error::{invalid, Result};
use crate::scan::ScanPlan;
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Clone, Debug)]
enum BoundEncoder {
    PrLstm { embed: EmbedVars, comp: CompositionVars, refine: Vec<RefineVars> },
    PrRnn { embed: BoundAffine, comp: BoundAffine, refine: Vec<BoundAffine> },
    SeqLstm { gates: BoundAffine, update: BoundAffine },
    SeqRnn { cell: BoundAffine },
}

/// Model parameters recorded as tape leaves.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: BoundEncoder,
    head: BoundAffine,
    /// Same order as [`Model::params`].
    vars: Vec<Var>,
}

impl BoundModel {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Per-position encoder output on the tape; `c` is absent for hidden-only
/// variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionState {
    pub h: Var,
    pub c: Option<Var>,
}

/// A recorded forward pass over a batch of equal-length sequences.
pub struct Forward {
    pub tape: Tape,
    pub bound: BoundModel,
    /// One entry per position, each `[batch × d_h]`.
    pub states: Vec<PositionState>,
    pub batch: usize,
    /// Number of combiner levels executed (sequence length for sequential
    /// variants).
    pub depth: usize,
}

/// Position-major one-hot rows: row `t·batch + b` encodes token `t` of
/// sample `b`.
pub fn one_hot_rows(tokens: &[Vec<usize>], width: usize) -> Result<Tensor> {
    let (batch, len) = batch_shape(tokens)?;
    let mut data = vec![0.0f32; len * batch * width];
    for (b, seq) in tokens.iter().enumerate() {
        for (t, &tok) in seq.iter().enumerate() {
            if tok >= width {
                return invalid(format!("token id {tok} outside input width {width}"));
            }
            data[(t * batch + b) * width + tok] = 1.0;
        }
    }
    Tensor::new(vec![len * batch, width], data)
}

/// `(batch, len)` of a non-empty batch of equal-length, non-empty sequences.
pub(crate) fn batch_shape(tokens: &[Vec<usize>]) -> Result<(usize, usize)> {
    let Some(first) = tokens.first() else {
        return invalid("empty batch");
    };
    let len = first.len();
    if len == 0 {
        return invalid("empty sequence");
    }
    if tokens.iter().any(|s| s.len() != len) {
        return invalid("sequences in a batch must share one length");
    }
    Ok((tokens.len(), len))
}

impl Model {
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let mut vars = Vec::new();
        let mut b = |a: &super::Affine| {
            let bound = a.bind(tape);
            vars.push(bound.w);
            vars.push(bound.b);
            bound
        };
        let encoder = match &self.encoder {
            Encoder::PrLstm { embed, comp, refine } => BoundEncoder::PrLstm {
                embed: EmbedVars { io: b(&embed.io), u: b(&embed.u) },
                comp: CompositionVars { gates: b(&comp.gates), update: b(&comp.update) },
                refine: refine.iter().map(|r| RefineVars { gates: b(&r.gates), update: b(&r.update) }).collect(),
            },
            Encoder::PrRnn { embed, comp, refine } => BoundEncoder::PrRnn {
                embed: b(embed),
                comp: b(comp),
                refine: refine.iter().map(&mut b).collect(),
            },
            Encoder::SeqLstm { cell } => BoundEncoder::SeqLstm { gates: b(&cell.gates), update: b(&cell.update) },
            Encoder::SeqRnn { cell } => BoundEncoder::SeqRnn { cell: b(cell) },
        };
        let head = b(&self.head);
        BoundModel { encoder, head, vars }
    }

    /// Adds the gradient of every bound parameter into its gradient slot.
    pub fn accumulate_grads(&mut self, bound: &BoundModel, grads: &Gradients) -> Result<()> {
        for (&var, (_, tensor)) in bound.vars.iter().zip(self.params_mut()) {
            grads.accumulate_into(var, tensor)?;
        }
        Ok(())
    }

    /// Records the encoder over `tokens` (a batch of equal-length id
    /// sequences) and returns the per-position states.
    pub fn forward(&self, tokens: &[Vec<usize>]) -> Result<Forward> {
        let (batch, len) = batch_shape(tokens)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf_owned(one_hot_rows(tokens, self.config.input)?);
        let split = vec![batch; len];
        let (states, depth) = match &bound.encoder {
            BoundEncoder::PrLstm { embed, comp, refine } => {
                let leaves = encoder::state_embed(&mut tape, x, embed)?;
                let hs = tape.split_rows(leaves.h, &split)?;
                let cs = tape.split_rows(leaves.c, &split)?;
                let buf: Vec<StateVars> = hs.into_iter().zip(cs).map(|(h, c)| StateVars { h, c }).collect();
                let plan = ScanPlan::build(len)?;
                let buf = run_plan(&mut tape, &plan, buf, batch, |tape, l, r| {
                    encoder::compose(tape, l, r, comp, refine)
                }, |tape, parts| {
                    let h = gather(tape, &parts.iter().map(|s| s.h).collect::<Vec<_>>())?;
                    let c = gather(tape, &parts.iter().map(|s| s.c).collect::<Vec<_>>())?;
                    Ok(StateVars { h, c })
                }, |tape, s, sizes| {
                    let hs = scatter(tape, s.h, sizes)?;
                    let cs = scatter(tape, s.c, sizes)?;
                    Ok(hs.into_iter().zip(cs).map(|(h, c)| StateVars { h, c }).collect())
                })?;
                (buf.into_iter().map(|s| PositionState { h: s.h, c: Some(s.c) }).collect(), plan.depth())
            }
            BoundEncoder::PrRnn { embed, comp, refine } => {
                let pre = tape.linear(x, embed.w, embed.b)?;
                let leaves = tape.relu(pre);
                let buf = tape.split_rows(leaves, &split)?;
                let plan = ScanPlan::build(len)?;
                let buf = run_plan(
                    &mut tape,
                    &plan,
                    buf,
                    batch,
                    |tape, l, r| encoder::fc_compose_refined(tape, l, r, comp, refine),
                    |tape, parts| gather(tape, parts),
                    |tape, h, sizes| scatter(tape, h, sizes),
                )?;
                (buf.into_iter().map(|h| PositionState { h, c: None }).collect(), plan.depth())
            }
            BoundEncoder::SeqLstm { gates, update } => {
                let xs = tape.split_rows(x, &split)?;
                let d = self.config.hidden;
                let mut h = tape.leaf_owned(Tensor::zeros(&[batch, d])?);
                let mut c = tape.leaf_owned(Tensor::zeros(&[batch, d])?);
                let mut out = Vec::with_capacity(len);
                for xt in xs {
                    let z = tape.concat_last(&[xt, h])?;
                    let pre = tape.linear(z, gates.w, gates.b)?;
                    let act = tape.sigmoid(pre);
                    let g = tape.split_last(act, &[d, d, d])?;
                    let pre_u = tape.linear(z, update.w, update.b)?;
                    let u = tape.tanh(pre_u);
                    let s = encoder::forget_add_activate(&mut tape, &[(g[0], c)], g[1], u, g[2])?;
                    (h, c) = (s.h, s.c);
                    out.push(PositionState { h, c: Some(c) });
                }
                (out, len)
            }
            BoundEncoder::SeqRnn { cell } => {
                let xs = tape.split_rows(x, &split)?;
                let mut h = tape.leaf_owned(Tensor::zeros(&[batch, self.config.hidden])?);
                let mut out = Vec::with_capacity(len);
                for xt in xs {
                    let z = tape.concat_last(&[xt, h])?;
                    let pre = tape.linear(z, cell.w, cell.b)?;
                    h = tape.tanh(pre);
                    out.push(PositionState { h, c: None });
                }
                (out, len)
            }
        };
        Ok(Forward { tape, bound, states, batch, depth })
    }
}

fn gather(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    if parts.len() == 1 {
        Ok(parts[0])
    } else {
        tape.concat_rows(parts)
    }
}

fn scatter(tape: &mut Tape, v: Var, sizes: &[usize]) -> Result<Vec<Var>> {
    if sizes.len() == 1 {
        Ok(vec![v])
    } else {
        tape.split_rows(v, sizes)
    }
}

/// Runs `plan` level by level, batching every step of a level into one
/// combiner call over stacked rows.
fn run_plan<S: Copy>(
    tape: &mut Tape,
    plan: &ScanPlan,
    mut buf: Vec<S>,
    batch: usize,
    combine: impl Fn(&mut Tape, S, S) -> Result<S>,
    stack: impl Fn(&mut Tape, &[S]) -> Result<S>,
    unstack: impl Fn(&mut Tape, S, &[usize]) -> Result<Vec<S>>,
) -> Result<Vec<S>> {
    for level in plan.levels() {
        let lefts: Vec<S> = level.iter().map(|s| buf[s.left]).collect();
        let rights: Vec<S> = level.iter().map(|s| buf[s.right]).collect();
        let l = stack(tape, &lefts)?;
        let r = stack(tape, &rights)?;
        let merged = combine(tape, l, r)?;
        let outs = unstack(tape, merged, &vec![batch; level.len()])?;
        for (step, out) in level.iter().zip(outs) {
            buf[step.out] = out;
        }
    }
    Ok(buf)
}

impl Forward {
    /// `h` at `position` as `[batch × d_h]` row-major values.
    pub fn hidden(&self, position: usize) -> &[f32] {
        self.tape.value(self.states[position].h).data()
    }

    pub fn cell(&self, position: usize) -> Option<&[f32]> {
        self.states[position].c.map(|c| self.tape.value(c).data())
    }

    /// Head logits at `positions`, rows ordered position-major
    /// (`positions[i]`, then sample).
    pub fn logits(&mut self, positions: &[usize]) -> Result<Var> {
        if positions.is_empty() {
            return invalid("no output positions");
        }
        if let Some(&p) = positions.iter().find(|&&p| p >= self.states.len()) {
            return invalid(format!("output position {p} outside sequence of {}", self.states.len()));
        }
        let hs: Vec<Var> = positions.iter().map(|&p| self.states[p].h).collect();
        let h = gather(&mut self.tape, &hs)?;
        let head = self.bound.head;
        self.tape.linear(h, head.w, head.b)
    }

    /// Mean cross-entropy over `positions`; `labels[i·batch + b]` is the
    /// target of sample `b` at `positions[i]`.
    pub fn loss(&mut self, positions: &[usize], labels: &[usize]) -> Result<Var> {
        let logits = self.logits(positions)?;
        self.tape.softmax_cross_entropy(logits, labels)
    }

    /// Backpropagates `loss` and accumulates parameter gradients into `model`.
    pub fn backward_into(&self, loss: Var, model: &mut Model) -> Result<()> {
        let grads = self.tape.backward(loss)?;
        model.accumulate_grads(&self.bound, &grads)
    }
}
