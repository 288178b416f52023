//! PR-LSTM and its baselines.
//!
//! A model is a per-token state embedding, an encoder that turns the
//! embedded sequence into one latent state per position, and a shared affine
//! head that reads the hidden vector `h` at output positions.
//!
//! | variant  | encoder                                                  |
//! |----------|----------------------------------------------------------|
//! | PR-LSTM  | gated composition + `R` gated refinements over the scan  |
//! | PR-RNN   | ReLU composition + `R` ReLU refinements, no cell state   |
//! | SEQ-LSTM | left-to-right 4-matrix LSTM cell                         |
//! | SEQ-RNN  | left-to-right tanh recurrence                            |

pub mod encoder;
mod forward;
pub mod infer;

pub use forward::{BoundModel, Forward};
pub use infer::{InferStats, Inference};

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{checkpoint, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "pr-lstm")]
    PrLstm,
    #[serde(rename = "pr-rnn")]
    PrRnn,
    #[serde(rename = "seq-lstm")]
    SeqLstm,
    #[serde(rename = "seq-rnn")]
    SeqRnn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::PrLstm, Variant::PrRnn, Variant::SeqLstm, Variant::SeqRnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::PrLstm => "pr-lstm",
            Variant::PrRnn => "pr-rnn",
            Variant::SeqLstm => "seq-lstm",
            Variant::SeqRnn => "seq-rnn",
        }
    }

    /// Whether the encoder runs over the balanced scan schedule.
    pub fn is_parallel(self) -> bool {
        matches!(self, Variant::PrLstm | Variant::PrRnn)
    }

    /// Whether states carry a cell vector next to `h`.
    pub fn has_cell(self) -> bool {
        matches!(self, Variant::PrLstm | Variant::SeqLstm)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// `d_h`.
    pub hidden: usize,
    /// `d_x`, the one-hot input width.
    pub input: usize,
    /// Output vocabulary size of the head.
    pub outputs: usize,
    /// Refinement stages after each composition (parallel variants only).
    pub refine_stages: usize,
}

impl ModelConfig {
    pub fn new(variant: Variant, hidden: usize, input: usize, outputs: usize) -> Self {
        Self { variant, hidden, input, outputs, refine_stages: 1 }
    }

    pub fn with_refine_stages(mut self, stages: usize) -> Self {
        self.refine_stages = stages;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.input == 0 || self.outputs == 0 {
            return invalid(format!("model dimensions must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Hidden size whose 14-matrix encoder matches the parameter budget of a
/// 4-matrix LSTM cell of size `base`: `round(base · √(4/14))`.
pub fn parameter_matched_hidden(base: usize) -> usize {
    (base as f64 * (4.0f64 / 14.0).sqrt()).round() as usize
}

/// Learned affine map `y = W x + b` with `W: [out × in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub w: Tensor,
    pub b: Tensor,
}

impl Affine {
    pub fn zeros(out: usize, input: usize) -> Self {
        Self {
            w: Tensor::zeros(&[out, input]).expect("positive extents"),
            b: Tensor::zeros(&[out]).expect("positive extents"),
        }
    }

    /// Weights uniform in `±√(6/(fan_in + fan_out))`, biases zero.
    pub fn init(out: usize, input: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input + out) as f64).sqrt() as f32;
        Self {
            w: Tensor::from_fn(&[out, input], |_| rng.gen_range(-bound..=bound)).expect("positive extents"),
            b: Tensor::zeros(&[out]).expect("positive extents"),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.w.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.w.shape()[1]
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundAffine {
        BoundAffine { w: tape.leaf(&self.w), b: tape.leaf(&self.b) }
    }
}

/// An [`Affine`] recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundAffine {
    pub w: Var,
    pub b: Var,
}

/// Leaf state embedding: `[i, o] = σ(W_io x + b_io)`, `u = tanh(W_u x + b_u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedParams {
    pub io: Affine,
    pub u: Affine,
}

/// Two-state gates: `[f₁, f₂, i, o] = σ(W_g2 h′ + b_g2)`, `u = tanh(W_u2 h′ + b_u2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompositionParams {
    pub gates: Affine,
    pub update: Affine,
}

/// One-state gates: `[f₁, i, o] = σ(W_g1 h + b_g1)`, `u = tanh(W_u1 h + b_u1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineParams {
    pub gates: Affine,
    pub update: Affine,
}

/// Standard LSTM cell over `[x; h]`: `[f, i, o]` from `gates`, `u` from `update`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub gates: Affine,
    pub update: Affine,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Encoder {
    PrLstm { embed: EmbedParams, comp: CompositionParams, refine: Vec<RefineParams> },
    PrRnn { embed: Affine, comp: Affine, refine: Vec<Affine> },
    SeqLstm { cell: LstmCellParams },
    SeqRnn { cell: Affine },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub head: Affine,
}

/// Stored parameter counts, split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub encoder_weights: usize,
    pub encoder_biases: usize,
    pub embed_weights: usize,
    pub embed_biases: usize,
    pub head_weights: usize,
    pub head_biases: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.encoder_weights
            + self.encoder_biases
            + self.embed_weights
            + self.embed_biases
            + self.head_weights
            + self.head_biases
    }
}

/// Closed-form parameter counts for a configuration.
///
/// PR-LSTM encoder: `10·d²` for composition plus `4·d²` per refinement stage
/// (so `14·d²` at `R = 1`), biases `5·d + 4·d·R`; embedding `3·d·d_x + 3·d`.
pub fn count_params(config: &ModelConfig) -> ParamCount {
    let (d, dx, r, k) = (config.hidden, config.input, config.refine_stages, config.outputs);
    let (encoder_weights, encoder_biases, embed_weights, embed_biases) = match config.variant {
        Variant::PrLstm => (10 * d * d + 4 * d * d * r, 5 * d + 4 * d * r, 3 * d * dx, 3 * d),
        Variant::PrRnn => (2 * d * d + d * d * r, d + d * r, d * dx, d),
        Variant::SeqLstm => (4 * d * (d + dx), 4 * d, 0, 0),
        Variant::SeqRnn => (d * (d + dx), d, 0, 0),
    };
    ParamCount {
        encoder_weights,
        encoder_biases,
        embed_weights,
        embed_biases,
        head_weights: k * d,
        head_biases: k,
    }
}

impl Model {
    /// Fresh parameters drawn in canonical order from `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, dx) = (config.hidden, config.input);
        let rng = &mut rng;
        let encoder = match config.variant {
            Variant::PrLstm => Encoder::PrLstm {
                embed: EmbedParams { io: Affine::init(2 * d, dx, rng), u: Affine::init(d, dx, rng) },
                comp: CompositionParams {
                    gates: Affine::init(4 * d, 2 * d, rng),
                    update: Affine::init(d, 2 * d, rng),
                },
                refine: (0..config.refine_stages)
                    .map(|_| RefineParams { gates: Affine::init(3 * d, d, rng), update: Affine::init(d, d, rng) })
                    .collect(),
            },
            Variant::PrRnn => Encoder::PrRnn {
                embed: Affine::init(d, dx, rng),
                comp: Affine::init(d, 2 * d, rng),
                refine: (0..config.refine_stages).map(|_| Affine::init(d, d, rng)).collect(),
            },
            Variant::SeqLstm => Encoder::SeqLstm {
                cell: LstmCellParams {
                    gates: Affine::init(3 * d, dx + d, rng),
                    update: Affine::init(d, dx + d, rng),
                },
            },
            Variant::SeqRnn => Encoder::SeqRnn { cell: Affine::init(d, dx + d, rng) },
        };
        let head = Affine::init(config.outputs, d, rng);
        Ok(Self { config, encoder, head })
    }

    /// All parameters with zero values (useful for hand-set tests).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Self::init(config, 0)?;
        for (_, t) in m.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(m)
    }

    /// Affine blocks in canonical order with their checkpoint names.
    fn affines(&self) -> Vec<(String, String, &Affine)> {
        let mut out = Vec::new();
        let mut push = |w: String, b: String, a| out.push((w, b, a));
        match &self.encoder {
            Encoder::PrLstm { embed, comp, refine } => {
                push("embed.W_io".into(), "embed.b_io".into(), &embed.io);
                push("embed.W_u".into(), "embed.b_u".into(), &embed.u);
                push("comp.W_g2".into(), "comp.b_g2".into(), &comp.gates);
                push("comp.W_u2".into(), "comp.b_u2".into(), &comp.update);
                for (k, r) in refine.iter().enumerate() {
                    push(format!("refine.{k}.W_g1"), format!("refine.{k}.b_g1"), &r.gates);
                    push(format!("refine.{k}.W_u1"), format!("refine.{k}.b_u1"), &r.update);
                }
            }
            Encoder::PrRnn { embed, comp, refine } => {
                push("embed.W".into(), "embed.b".into(), embed);
                push("comp.W".into(), "comp.b".into(), comp);
                for (k, r) in refine.iter().enumerate() {
                    push(format!("refine.{k}.W"), format!("refine.{k}.b"), r);
                }
            }
            Encoder::SeqLstm { cell } => {
                push("cell.W_g".into(), "cell.b_g".into(), &cell.gates);
                push("cell.W_u".into(), "cell.b_u".into(), &cell.update);
            }
            Encoder::SeqRnn { cell } => push("cell.W".into(), "cell.b".into(), cell),
        }
        push("head.W".into(), "head.b".into(), &self.head);
        out
    }

    fn affines_mut(&mut self) -> Vec<&mut Affine> {
        let mut out: Vec<&mut Affine> = Vec::new();
        match &mut self.encoder {
            Encoder::PrLstm { embed, comp, refine } => {
                out.push(&mut embed.io);
                out.push(&mut embed.u);
                out.push(&mut comp.gates);
                out.push(&mut comp.update);
                for r in refine {
                    out.push(&mut r.gates);
                    out.push(&mut r.update);
                }
            }
            Encoder::PrRnn { embed, comp, refine } => {
                out.push(embed);
                out.push(comp);
                out.extend(refine.iter_mut());
            }
            Encoder::SeqLstm { cell } => {
                out.push(&mut cell.gates);
                out.push(&mut cell.update);
            }
            Encoder::SeqRnn { cell } => out.push(cell),
        }
        out.push(&mut self.head);
        out
    }

    /// Named parameters in canonical order.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.affines()
            .into_iter()
            .flat_map(|(wn, bn, a)| [(wn, &a.w), (bn, &a.b)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.params().into_iter().map(|(n, _)| n).collect();
        let tensors = self.affines_mut().into_iter().flat_map(|a| [&mut a.w, &mut a.b]);
        names.into_iter().zip(tensors).collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in self.params_mut() {
            t.zero_grad();
        }
    }

    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params().into_iter().map(|(n, t)| (n, t.detached())).collect()
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        checkpoint::save(path, &self.to_named_tensors())
    }

    /// Loads parameters for `config`; names and shapes must match exactly.
    pub fn from_named_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let expected: Vec<(String, Vec<usize>)> =
            model.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, checkpoint has {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, shape), (slot_name, slot), (got_name, got)) in expected
            .iter()
            .zip(model.params_mut())
            .zip(tensors)
            .map(|((e, s), g)| (e, s, g))
        {
            debug_assert_eq!(name, &slot_name);
            if name != &got_name || shape.as_slice() != got.shape() {
                return Err(Error::Format(format!(
                    "expected {name} {shape:?}, found {got_name} {:?}",
                    got.shape()
                )));
            }
            slot.data_mut().copy_from_slice(got.data());
        }
        Ok(model)
    }

    pub fn load(config: ModelConfig, path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_named_tensors(config, checkpoint::load(path)?)
    }

    /// Parameter counts measured on the stored tensors.
    pub fn stored_param_count(&self) -> ParamCount {
        let mut c = ParamCount::default();
        for (name, t) in self.params() {
            let is_weight = name.rsplit('.').next().is_some_and(|s| s.starts_with('W'));
            let n = t.numel();
            let bucket = if name.starts_with("head.") {
                if is_weight { &mut c.head_weights } else { &mut c.head_biases }
            } else if name.starts_with("embed.") {
                if is_weight { &mut c.embed_weights } else { &mut c.embed_biases }
            } else if is_weight {
                &mut c.encoder_weights
            } else {
                &mut c.encoder_biases
            };
            *bucket += n;
        }
        c
    }
}
