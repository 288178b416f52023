//! Formal-language tasks: generators, labelling rules and token encodings.
//!
//! A task string of length `T` is fed as-is for single-label tasks (the label
//! is read at the last position). Sequence-output tasks append `PAD` tokens,
//! one per output symbol, and are read at those positions.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const PAD: &str = "PAD";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    #[serde(rename = "R")]
    Regular,
    #[serde(rename = "DCF")]
    DeterministicContextFree,
    #[serde(rename = "CS")]
    ContextSensitive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    EvenPairs,
    Parity,
    CycleNavigation,
    ModularArithmetic,
    ReverseString,
    StackManipulation,
    MissingDuplicate,
    DuplicateString,
    BucketSort,
}

/// Static description of a task.
#[derive(Clone, Debug, Serialize)]
pub struct TaskSpec {
    pub name: &'static str,
    pub level: Level,
    /// Input symbols; the last entry is always `PAD`.
    pub input_vocab: Vec<&'static str>,
    pub output_vocab: Vec<&'static str>,
}

/// One encoded example. `target[i]` is the label at the `i`-th position
/// where `mask` is set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSample {
    pub input: Vec<usize>,
    pub target: Vec<usize>,
    pub mask: Vec<bool>,
}

impl TaskSample {
    pub fn positions(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

/// Same-length samples in model layout: `labels[i·batch + b]` is the target
/// of sample `b` at `positions[i]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[TaskSample]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return invalid("empty batch");
        };
        if samples.iter().any(|s| s.mask != first.mask) {
            return invalid("batch samples must share one output mask");
        }
        let positions = first.positions();
        let mut labels = Vec::with_capacity(positions.len() * samples.len());
        for i in 0..positions.len() {
            labels.extend(samples.iter().map(|s| s.target[i]));
        }
        Ok(Self { tokens: samples.iter().map(|s| s.input.clone()).collect(), positions, labels })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

// Symbol ids per task, in input-vocabulary order.
const STAY: usize = 0;
const INC: usize = 1;
const PLUS: usize = 5;
const MINUS: usize = 6;
const TIMES: usize = 7;
const POP: usize = 2;
const PUSH0: usize = 3;
const PUSH1: usize = 4;
const MASK: usize = 2;
const EMPTY: usize = 2;

impl Task {
    pub const ALL: [Task; 9] = [
        Task::EvenPairs,
        Task::Parity,
        Task::CycleNavigation,
        Task::ModularArithmetic,
        Task::ReverseString,
        Task::StackManipulation,
        Task::MissingDuplicate,
        Task::DuplicateString,
        Task::BucketSort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::EvenPairs => "even-pairs",
            Task::Parity => "parity",
            Task::CycleNavigation => "cycle-navigation",
            Task::ModularArithmetic => "modular-arithmetic",
            Task::ReverseString => "reverse-string",
            Task::StackManipulation => "stack-manipulation",
            Task::MissingDuplicate => "missing-duplicate",
            Task::DuplicateString => "duplicate-string",
            Task::BucketSort => "bucket-sort",
        }
    }

    pub fn spec(self) -> TaskSpec {
        let (level, input, output): (Level, &[&'static str], &[&'static str]) = match self {
            Task::EvenPairs | Task::Parity => (Level::Regular, &["0", "1"], &["0", "1"]),
            Task::CycleNavigation => (Level::Regular, &["STAY", "+1", "-1"], &["0", "1", "2", "3", "4"]),
            Task::ModularArithmetic => {
                (Level::Regular, &["0", "1", "2", "3", "4", "+", "-", "*"], &["0", "1", "2", "3", "4"])
            }
            Task::ReverseString => (Level::DeterministicContextFree, &["0", "1"], &["0", "1"]),
            Task::DuplicateString => (Level::ContextSensitive, &["0", "1"], &["0", "1"]),
            Task::StackManipulation => {
                (Level::DeterministicContextFree, &["0", "1", "POP", "PUSH0", "PUSH1"], &["0", "1", "EMPTY"])
            }
            Task::MissingDuplicate => (Level::ContextSensitive, &["0", "1", "MASK"], &["0", "1"]),
            Task::BucketSort => (Level::ContextSensitive, &["0", "1", "2", "3", "4"], &["0", "1", "2", "3", "4"]),
        };
        let mut input_vocab = input.to_vec();
        input_vocab.push(PAD);
        TaskSpec { name: self.name(), level, input_vocab, output_vocab: output.to_vec() }
    }

    /// Model input width (task symbols plus `PAD`).
    pub fn input_size(self) -> usize {
        self.spec().input_vocab.len()
    }

    pub fn output_size(self) -> usize {
        self.spec().output_vocab.len()
    }

    pub fn pad(self) -> usize {
        self.input_size() - 1
    }

    /// Whether a task string of length `len` exists.
    pub fn valid_length(self, len: usize) -> bool {
        match self {
            Task::ModularArithmetic => len % 2 == 1,
            Task::MissingDuplicate => len >= 2 && len % 2 == 0,
            _ => len >= 1,
        }
    }

    /// Number of output symbols for a task string of length `len`.
    pub fn output_len(self, len: usize) -> usize {
        match self {
            Task::ReverseString | Task::BucketSort | Task::StackManipulation => len,
            Task::DuplicateString => 2 * len,
            _ => 1,
        }
    }

    pub fn is_sequence_output(self) -> bool {
        matches!(self, Task::ReverseString | Task::StackManipulation | Task::DuplicateString | Task::BucketSort)
    }

    /// Model sequence length for a task string of length `len`.
    pub fn sequence_len(self, len: usize) -> usize {
        if self.is_sequence_output() {
            len + self.output_len(len)
        } else {
            len
        }
    }

    /// Output-class ids for a well-formed task string.
    pub fn label(self, s: &[usize]) -> Result<Vec<usize>> {
        self.check_string(s)?;
        Ok(match self {
            Task::EvenPairs => vec![(s[0] == s[s.len() - 1]) as usize],
            Task::Parity => vec![s.iter().sum::<usize>() % 2],
            Task::CycleNavigation => vec![s.iter().fold(0, |p, &m| match m {
                STAY => p,
                INC => (p + 1) % 5,
                _ => (p + 4) % 5,
            })],
            Task::ModularArithmetic => {
                let mut acc = s[0];
                for pair in s[1..].chunks_exact(2) {
                    acc = match pair[0] {
                        PLUS => (acc + pair[1]) % 5,
                        MINUS => (acc + 5 - pair[1]) % 5,
                        TIMES => (acc * pair[1]) % 5,
                        _ => unreachable!("checked"),
                    };
                }
                vec![acc]
            }
            Task::ReverseString => s.iter().rev().copied().collect(),
            Task::DuplicateString => s.iter().chain(s).copied().collect(),
            Task::BucketSort => {
                let mut v = s.to_vec();
                v.sort_unstable();
                v
            }
            Task::StackManipulation => {
                let split = s.iter().position(|&x| x > 1).unwrap_or(s.len());
                // Top of the stack is the first listed symbol; keep it at the end here.
                let mut stack: Vec<usize> = s[..split].iter().rev().copied().collect();
                for &a in &s[split..] {
                    match a {
                        POP => {
                            stack.pop();
                        }
                        PUSH0 => stack.push(0),
                        PUSH1 => stack.push(1),
                        _ => unreachable!("checked"),
                    }
                }
                let mut out: Vec<usize> = stack.into_iter().rev().collect();
                out.resize(s.len(), EMPTY);
                out
            }
            Task::MissingDuplicate => {
                let half = s.len() / 2;
                let at = s.iter().position(|&x| x == MASK).expect("checked");
                let twin = if at < half { at + half } else { at - half };
                vec![s[twin]]
            }
        })
    }

    fn check_string(self, s: &[usize]) -> Result<()> {
        if !self.valid_length(s.len()) {
            return invalid(format!("length {} is not valid for {}", s.len(), self.name()));
        }
        let symbols = self.input_size() - 1;
        if let Some(&x) = s.iter().find(|&&x| x >= symbols) {
            return invalid(format!("symbol {x} outside the {} alphabet", self.name()));
        }
        let ok = match self {
            Task::EvenPairs | Task::Parity | Task::ReverseString | Task::DuplicateString => true,
            Task::CycleNavigation | Task::BucketSort => true,
            Task::ModularArithmetic => s.iter().enumerate().all(|(i, &x)| (i % 2 == 0) == (x < 5)),
            Task::StackManipulation => {
                let split = s.iter().position(|&x| x > 1).unwrap_or(s.len());
                s[split..].iter().all(|&x| x > 1)
            }
            Task::MissingDuplicate => {
                let half = s.len() / 2;
                let masks: Vec<usize> = (0..s.len()).filter(|&i| s[i] == MASK).collect();
                masks.len() == 1 && (0..half).all(|i| i == masks[0] % half || s[i] == s[i + half])
            }
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("malformed {} string", self.name()))
        }
    }

    /// Uniform random task string of length `len`.
    pub fn random_string(self, len: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if !self.valid_length(len) {
            return invalid(format!("length {len} is not valid for {}", self.name()));
        }
        let symbols = self.input_size() - 1;
        Ok(match self {
            Task::ModularArithmetic => {
                (0..len).map(|i| if i % 2 == 0 { rng.gen_range(0..5) } else { rng.gen_range(5..8) }).collect()
            }
            Task::StackManipulation => {
                let split = rng.gen_range(0..=len);
                (0..len).map(|i| if i < split { rng.gen_range(0..2) } else { rng.gen_range(2..5) }).collect()
            }
            Task::MissingDuplicate => {
                let half: Vec<usize> = (0..len / 2).map(|_| rng.gen_range(0..2)).collect();
                let mut s: Vec<usize> = half.iter().chain(&half).copied().collect();
                s[rng.gen_range(0..len)] = MASK;
                s
            }
            _ => (0..len).map(|_| rng.gen_range(0..symbols)).collect(),
        })
    }

    /// Encodes a task string and its labels as a model sample.
    pub fn sample_from_string(self, s: &[usize]) -> Result<TaskSample> {
        let target = self.label(s)?;
        let mut input = s.to_vec();
        let mut mask = vec![false; s.len()];
        if self.is_sequence_output() {
            input.resize(self.sequence_len(s.len()), self.pad());
            mask.resize(input.len(), true);
        } else {
            mask[s.len() - 1] = true;
        }
        Ok(TaskSample { input, target, mask })
    }

    pub fn generate(self, len: usize, rng: &mut impl Rng) -> Result<TaskSample> {
        let s = self.random_string(len, rng)?;
        self.sample_from_string(&s)
    }

    pub fn batch(self, len: usize, size: usize, rng: &mut impl Rng) -> Result<Batch> {
        let samples = (0..size).map(|_| self.generate(len, rng)).collect::<Result<Vec<_>>>()?;
        Batch::from_samples(&samples)
    }

    /// Valid task lengths within `range`.
    pub fn lengths_in(self, range: RangeInclusive<usize>) -> Vec<usize> {
        range.filter(|&l| self.valid_length(l)).collect()
    }

    /// Uniform draw among the valid lengths in `range`.
    pub fn sample_length(self, range: &RangeInclusive<usize>, rng: &mut impl Rng) -> Result<usize> {
        let valid = self.lengths_in(range.clone());
        if valid.is_empty() {
            return invalid(format!("no valid {} length in {range:?}", self.name()));
        }
        Ok(valid[rng.gen_range(0..valid.len())])
    }

    /// Token ids for input symbol names.
    pub fn encode_symbols(self, symbols: &[&str]) -> Result<Vec<usize>> {
        let vocab = self.spec().input_vocab;
        symbols
            .iter()
            .map(|s| match vocab.iter().position(|v| v == s) {
                Some(i) => Ok(i),
                None => invalid(format!("unknown {} token {s:?}", self.name())),
            })
            .collect()
    }

    pub fn decode_symbols(self, ids: &[usize]) -> Result<Vec<&'static str>> {
        let vocab = self.spec().input_vocab;
        ids.iter()
            .map(|&i| match vocab.get(i) {
                Some(s) => Ok(*s),
                None => invalid(format!("token id {i} outside the {} vocabulary", self.name())),
            })
            .collect()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity-check" => return Ok(Task::Parity),
            "cycle-nav" => return Ok(Task::CycleNavigation),
            "modular-arithmetic-simple" | "mod-arithmetic" => return Ok(Task::ModularArithmetic),
            _ => {}
        }
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .map_or_else(|| invalid(format!("unknown task {s:?}")), Ok)
    }
}

/// One-hot `[n × len × width]` tensor of equal-length token sequences.
pub fn one_hot(tokens: &[Vec<usize>], width: usize) -> Result<Tensor> {
    let Some(len) = tokens.first().map(Vec::len) else {
        return invalid("empty batch");
    };
    if tokens.iter().any(|s| s.len() != len) {
        return invalid("sequences in a batch must share one length");
    }
    let mut data = vec![0.0; tokens.len() * len * width];
    for (i, &tok) in tokens.iter().flatten().enumerate() {
        if tok >= width {
            return invalid(format!("token id {tok} outside vocabulary of {width}"));
        }
        data[i * width + tok] = 1.0;
    }
    Tensor::new(vec![tokens.len(), len, width], data)
}

/// Inverse of [`one_hot`]: arg-max channel per position.
pub fn from_one_hot(t: &Tensor) -> Result<Vec<Vec<usize>>> {
    let &[n, len, width] = t.shape() else {
        return invalid(format!("expected a rank-3 tensor, got shape {:?}", t.shape()));
    };
    let rows: Vec<usize> = t.data().chunks_exact(width).map(crate::tensor::kernels::argmax).collect();
    Ok((0..n).map(|i| rows[i * len..(i + 1) * len].to_vec()).collect())
}
