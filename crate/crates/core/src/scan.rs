//! Balanced prefix schedule for an arbitrary (possibly non-associative)
//! binary combiner.
//!
//! The schedule is the recursive odd-even scan: combine neighbouring pairs,
//! scan the half-length sequence of pair results, then fill the remaining
//! positions by combining the preceding prefix with the element at that
//! position. Position 1 is never touched.
//!
//! Plans operate in place on a buffer of exactly `len` slots. Slot `t` starts
//! as leaf `t` and ends holding prefix `t`; intermediate values overwrite it
//! on the way. Within a level, no step reads a slot written by another step
//! of the same level, so every level can run in parallel.

use serde::Serialize;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    /// Combine two neighbouring elements of the current recursion level.
    Pair,
    /// Combine a finished prefix with the element that follows it.
    Fill,
}

/// One combiner application: `buf[out] = combine(buf[left], buf[right])`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ScanStep {
    pub kind: StepKind,
    pub left: usize,
    pub right: usize,
    pub out: usize,
}

/// Total combiner applications and the longest dependent chain of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DepthWork {
    /// Total combiner applications.
    pub work: usize,
    /// Number of sequential levels.
    pub depth: usize,
}

impl DepthWork {
    /// Brent bound `depth + work / p` in units of one combiner application.
    pub fn brent_bound(&self, workers: usize) -> f64 {
        self.depth as f64 + self.work as f64 / workers.max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPlan {
    len: usize,
    levels: Vec<Vec<ScanStep>>,
}

/// Where a step reads a value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Leaf(usize),
    Step(usize),
}

impl ScanPlan {
    pub fn build(len: usize) -> Result<Self> {
        if len == 0 {
            return invalid("scan plan needs at least one element");
        }
        let mut up = Vec::new();
        let mut strides = Vec::new();
        let mut stride = 1;
        while len / stride >= 2 {
            let n = len / stride;
            let pairs = (0..n / 2)
                .map(|j| ScanStep {
                    kind: StepKind::Pair,
                    left: (2 * j + 1) * stride - 1,
                    right: (2 * j + 2) * stride - 1,
                    out: (2 * j + 2) * stride - 1,
                })
                .collect();
            up.push(pairs);
            strides.push(stride);
            stride *= 2;
        }
        let mut levels = up;
        for &stride in strides.iter().rev() {
            let n = len / stride;
            let fills: Vec<ScanStep> = (1..)
                .take_while(|j| 2 * j < n)
                .map(|j| ScanStep {
                    kind: StepKind::Fill,
                    left: 2 * j * stride - 1,
                    right: (2 * j + 1) * stride - 1,
                    out: (2 * j + 1) * stride - 1,
                })
                .collect();
            if !fills.is_empty() {
                levels.push(fills);
            }
        }
        Ok(Self { len, levels })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn levels(&self) -> &[Vec<ScanStep>] {
        &self.levels
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn op_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn depth_work(&self) -> DepthWork {
        DepthWork { work: self.op_count(), depth: self.depth() }
    }

    pub fn steps(&self) -> impl Iterator<Item = &ScanStep> {
        self.levels.iter().flatten()
    }

    /// Checks the structural invariants: in-range slots, ordered pair
    /// operands, disjoint outputs within a level, and no same-level
    /// read-after-write.
    pub fn validate(&self) -> Result<()> {
        for (k, level) in self.levels.iter().enumerate() {
            if level.is_empty() {
                return invalid(format!("level {k} is empty"));
            }
            let mut written = vec![false; self.len];
            for s in level {
                if s.left >= self.len || s.right >= self.len || s.out >= self.len {
                    return invalid(format!("level {k}: step {s:?} out of range"));
                }
                if s.left >= s.right {
                    return invalid(format!("level {k}: step {s:?} reads out of order"));
                }
                if std::mem::replace(&mut written[s.out], true) {
                    return invalid(format!("level {k}: slot {} written twice", s.out));
                }
            }
            for s in level {
                let reads_own_output = s.out == s.left || s.out == s.right;
                let clash = |slot: usize| written[slot] && !(reads_own_output && slot == s.out);
                if clash(s.left) || clash(s.right) {
                    return invalid(format!("level {k}: step {s:?} reads a slot written in the same level"));
                }
            }
        }
        Ok(())
    }

    /// Every output position `t` holds the combination of leaves `1..=t`
    /// under this plan's tree shape.
    pub fn execute_prefix<S: Clone>(&self, leaves: &[S], combine: impl Fn(&S, &S) -> S) -> Result<Vec<S>> {
        if leaves.len() != self.len {
            return invalid(format!("plan for {} elements given {} leaves", self.len, leaves.len()));
        }
        let mut buf = leaves.to_vec();
        for level in &self.levels {
            let results: Vec<S> = level.iter().map(|s| combine(&buf[s.left], &buf[s.right])).collect();
            for (s, r) in level.iter().zip(results) {
                buf[s.out] = r;
            }
        }
        Ok(buf)
    }

    /// For each step in execution order, the sources of its two operands.
    fn sources(&self) -> Vec<(Source, Source)> {
        let mut writer: Vec<Source> = (0..self.len).map(Source::Leaf).collect();
        let mut out = Vec::with_capacity(self.op_count());
        for level in &self.levels {
            let base = out.len();
            for s in level {
                out.push((writer[s.left], writer[s.right]));
            }
            for (i, s) in level.iter().enumerate() {
                writer[s.out] = Source::Step(base + i);
            }
        }
        out
    }

    fn final_writer(&self, position: usize) -> Source {
        let mut writer = Source::Leaf(position);
        for (i, s) in self.steps().enumerate() {
            if s.out == position {
                writer = Source::Step(i);
            }
        }
        writer
    }

    /// The plan restricted to the steps the final position depends on.
    pub fn reduction_plan(&self) -> ScanPlan {
        let sources = self.sources();
        let mut needed = vec![false; sources.len()];
        let mut stack = vec![self.final_writer(self.len - 1)];
        while let Some(src) = stack.pop() {
            if let Source::Step(i) = src {
                if !needed[i] {
                    needed[i] = true;
                    stack.push(sources[i].0);
                    stack.push(sources[i].1);
                }
            }
        }
        let mut idx = 0;
        let mut levels = Vec::new();
        for level in &self.levels {
            let kept: Vec<ScanStep> = level
                .iter()
                .filter(|_| {
                    idx += 1;
                    needed[idx - 1]
                })
                .copied()
                .collect();
            if !kept.is_empty() {
                levels.push(kept);
            }
        }
        ScanPlan { len: self.len, levels }
    }

    /// The state at the last position, computing only what it depends on.
    pub fn execute_reduce<S: Clone>(&self, leaves: &[S], combine: impl Fn(&S, &S) -> S) -> Result<S> {
        let reduced = self.reduction_plan();
        let mut out = reduced.execute_prefix(leaves, combine)?;
        Ok(out.swap_remove(self.len - 1))
    }

    /// Longest chain of combiner applications from leaf `from` into the
    /// final state at `to`, or `None` if that state does not depend on it.
    pub fn path_length(&self, from: usize, to: usize) -> Option<usize> {
        let sources = self.sources();
        let mut dist: Vec<Option<usize>> = Vec::with_capacity(sources.len());
        let lookup = |dist: &Vec<Option<usize>>, src: Source| match src {
            Source::Leaf(l) => (l == from).then_some(0),
            Source::Step(i) => dist[i],
        };
        for &(l, r) in &sources {
            let d = lookup(&dist, l).max(lookup(&dist, r)).map(|d| d + 1);
            dist.push(d);
        }
        lookup(&dist, self.final_writer(to))
    }
}

/// `2·⌈log₂ len⌉`, the depth bound of the odd-even schedule.
pub fn depth_bound(len: usize) -> usize {
    2 * ceil_log2(len)
}

pub fn ceil_log2(n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        (usize::BITS - (n - 1).leading_zeros()) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal recursive walk of the odd-even schedule over values.
    fn reference<S: Clone>(xs: &[S], f: &dyn Fn(&S, &S) -> S) -> Vec<S> {
        if xs.len() < 2 {
            return xs.to_vec();
        }
        let reduced: Vec<S> = xs.chunks_exact(2).map(|p| f(&p[0], &p[1])).collect();
        let odd = reference(&reduced, f);
        let mut out = Vec::with_capacity(xs.len());
        for (t, x) in xs.iter().enumerate() {
            out.push(match t {
                0 => x.clone(),
                t if t % 2 == 1 => odd[t / 2].clone(),
                t => f(&odd[t / 2 - 1], x),
            });
        }
        out
    }

    fn non_assoc(a: &i64, b: &i64) -> i64 {
        2 * a + b
    }

    #[test]
    fn small_plans() {
        let p1 = ScanPlan::build(1).unwrap();
        assert_eq!((p1.depth(), p1.op_count()), (0, 0));
        let p2 = ScanPlan::build(2).unwrap();
        assert_eq!((p2.depth(), p2.op_count()), (1, 1));
        let p8 = ScanPlan::build(8).unwrap();
        assert_eq!((p8.depth(), p8.op_count()), (5, 11));
        assert_eq!(p8.depth_work(), DepthWork { work: 11, depth: 5 });
        assert!(ScanPlan::build(0).is_err());
    }

    #[test]
    fn eight_element_schedule_layout() {
        let p = ScanPlan::build(8).unwrap();
        let outs: Vec<Vec<(usize, usize)>> =
            p.levels().iter().map(|l| l.iter().map(|s| (s.left, s.right)).collect()).collect();
        assert_eq!(
            outs,
            vec![
                vec![(0, 1), (2, 3), (4, 5), (6, 7)],
                vec![(1, 3), (5, 7)],
                vec![(3, 7)],
                vec![(3, 5)],
                vec![(1, 2), (3, 4), (5, 6)],
            ]
        );
    }

    #[test]
    fn prefix_examples() {
        let p = ScanPlan::build(8).unwrap();
        let leaves: Vec<i64> = (1..=8).collect();
        let sums = p.execute_prefix(&leaves, |a, b| a + b).unwrap();
        assert_eq!(sums, vec![1, 3, 6, 10, 15, 21, 28, 36]);
        assert_eq!(p.execute_reduce(&leaves, |a, b| a + b).unwrap(), 36);

        let p4 = ScanPlan::build(4).unwrap();
        let out = p4.execute_prefix(&[1i64; 4], non_assoc).unwrap();
        assert_eq!(out, vec![1, 3, 7, 9]);
        assert_eq!(reference(&[1i64; 4], &non_assoc), vec![1, 3, 7, 9]);
        assert_eq!(p4.execute_reduce(&[1i64; 4], non_assoc).unwrap(), 9);

        let p1 = ScanPlan::build(1).unwrap();
        assert_eq!(p1.execute_prefix(&[42i64], non_assoc).unwrap(), vec![42]);
        assert_eq!(p1.execute_reduce(&[42i64], non_assoc).unwrap(), 42);

        let p2 = ScanPlan::build(2).unwrap();
        assert_eq!(p2.execute_reduce(&[5i64, 7], non_assoc).unwrap(), 17);

        assert!(p4.execute_prefix(&[1i64; 3], non_assoc).is_err());
    }

    #[test]
    fn depth_work_at_500() {
        let dw = ScanPlan::build(500).unwrap().depth_work();
        assert!(dw.depth <= 18, "depth {}", dw.depth);
        assert_eq!(depth_bound(500), 18);
    }

    #[test]
    fn reduction_plan_does_less_work() {
        for len in 1..=70 {
            let p = ScanPlan::build(len).unwrap();
            let r = p.reduction_plan();
            assert!(r.op_count() <= p.op_count());
            r.validate().unwrap();
            let leaves: Vec<i64> = (0..len as i64).map(|v| v * 3 - 7).collect();
            let full = p.execute_prefix(&leaves, non_assoc).unwrap();
            assert_eq!(p.execute_reduce(&leaves, non_assoc).unwrap(), full[len - 1]);
        }
        // For powers of two the root only needs the up-sweep.
        let r = ScanPlan::build(16).unwrap().reduction_plan();
        assert_eq!(r.op_count(), 15);
        assert_eq!(r.depth(), 4);
    }

    #[test]
    fn oracle_equivalence_for_non_associative_combiners() {
        for len in 1..=33usize {
            let plan = ScanPlan::build(len).unwrap();
            for seed in 0..8i64 {
                let leaves: Vec<i64> = (0..len as i64).map(|t| (t * 7 + seed * 13) % 11 - 5).collect();
                let f = move |a: &i64, b: &i64| (a * (seed + 2) - b * 3 + seed).rem_euclid(1_000_003);
                assert_eq!(plan.execute_prefix(&leaves, f).unwrap(), reference(&leaves, &f), "len {len}");
            }
        }
    }

    #[test]
    fn associative_combiners_recover_left_folds() {
        for len in 1..=64usize {
            let plan = ScanPlan::build(len).unwrap();
            let leaves: Vec<i64> = (0..len as i64).map(|t| (t * 37) % 19 - 9).collect();
            let mut acc = 0;
            let sums: Vec<i64> = leaves.iter().map(|v| { acc += v; acc }).collect();
            assert_eq!(plan.execute_prefix(&leaves, |a, b| a + b).unwrap(), sums);
            let mut best = i64::MIN;
            let maxes: Vec<i64> = leaves.iter().map(|&v| { best = best.max(v); best }).collect();
            assert_eq!(plan.execute_prefix(&leaves, |a, b| *a.max(b)).unwrap(), maxes);
        }
    }

    #[test]
    fn bounds_and_structure_up_to_4096() {
        for len in 1..=4096 {
            let plan = ScanPlan::build(len).unwrap();
            assert!(plan.depth() <= depth_bound(len), "len {len}: depth {}", plan.depth());
            assert!(plan.op_count() <= 2 * len, "len {len}: ops {}", plan.op_count());
            plan.validate().unwrap();
        }
    }

    #[test]
    fn work_recurrence() {
        // W(T) = W(⌊T/2⌋) + T - 1
        fn work(len: usize) -> usize {
            if len < 2 { 0 } else { work(len / 2) + len - 1 }
        }
        for len in 1..=300 {
            assert_eq!(ScanPlan::build(len).unwrap().op_count(), work(len));
        }
    }

    #[test]
    fn path_lengths_are_logarithmic() {
        for len in 2..=512 {
            let plan = ScanPlan::build(len).unwrap();
            let path = plan.path_length(0, len - 1).expect("last prefix depends on the first leaf");
            assert!(path <= depth_bound(len), "len {len}: path {path}");
            assert!(path >= 1);
        }
        // Prefix 1 is the untouched leaf.
        assert_eq!(ScanPlan::build(8).unwrap().path_length(0, 0), Some(0));
        // Later leaves never influence earlier prefixes.
        assert_eq!(ScanPlan::build(8).unwrap().path_length(5, 3), None);
    }

    #[test]
    fn plans_are_pure_functions_of_length() {
        for len in [1, 7, 64, 1000] {
            assert_eq!(ScanPlan::build(len).unwrap(), ScanPlan::build(len).unwrap());
        }
    }

    proptest! {
        #[test]
        fn prefix_matches_reference_on_random_leaves(
            leaves in prop::collection::vec(-50i64..50, 1..100),
            a in 1i64..5,
            b in -4i64..4,
        ) {
            let plan = ScanPlan::build(leaves.len()).unwrap();
            let f = move |x: &i64, y: &i64| (a * x + b * y + 1).rem_euclid(9973);
            prop_assert_eq!(plan.execute_prefix(&leaves, f).unwrap(), reference(&leaves, &f));
        }
    }
}
