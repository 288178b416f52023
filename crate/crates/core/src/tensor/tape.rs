use super::kernels;
use super::Tensor;
use crate::error::{invalid, shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    /// Leading extent (batch rows).
    Rows,
    /// Trailing extent (features).
    Last,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Var },
    Add(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat { parts: Vec<Var>, axis: Axis },
    Slice { src: Var, offset: usize, axis: Axis },
    Sum(Var),
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f32> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a forward computation.
///
/// Every record's inputs precede it, so the node order is already a
/// topological order and [`Tape::backward`] is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    sizes: Vec<usize>,
}

impl Gradients {
    /// `∂loss/∂var`; zero when `var` does not reach the loss.
    pub fn get(&self, var: Var) -> Vec<f32> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.sizes[var.0]],
        }
    }

    pub fn is_reachable(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }

    /// Adds `∂loss/∂var` into `target`'s gradient slot.
    pub fn accumulate_into(&self, var: Var, target: &mut Tensor) -> Result<()> {
        match &self.grads[var.0] {
            Some(g) => target.accumulate_grad(g),
            None => target.accumulate_grad(&vec![0.0; self.sizes[var.0]]),
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// Splits a shape into `(outer, inner)` around `axis`.
fn outer_inner(shape: &[usize], axis: Axis) -> (usize, usize) {
    match axis {
        Axis::Rows => (1, shape.iter().product()),
        Axis::Last => {
            let last = *shape.last().unwrap();
            (shape.iter().product::<usize>() / last, last)
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records an input or parameter. Any gradient slot is dropped: the tape
    /// reports gradients through [`Gradients`].
    pub fn leaf(&mut self, value: &Tensor) -> Var {
        self.push(value.detached(), Op::Leaf)
    }

    pub fn leaf_owned(&mut self, value: Tensor) -> Var {
        self.push(value.detached(), Op::Leaf)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul(av.data(), bv.data(), m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `x[n×k] · w[d×k]ᵀ + b[d]`, the learned affine map of every gate block.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 {
            return shape_err(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            );
        }
        let (n, k) = (xv.shape()[0], xv.shape()[1]);
        let d = wv.shape()[0];
        if wv.shape()[1] != k || bv.shape()[0] != d {
            return shape_err(
                "linear",
                format!("x {:?}, w {:?}, b {:?}", xv.shape(), wv.shape(), bv.shape()),
            );
        }
        let mut out = vec![0.0; n * d];
        kernels::linear(xv.data(), wv.data(), bv.data(), n, k, d, &mut out);
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f32, f32) -> f32) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape(name, av, bv)?;
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn unary(&self, a: Var, f: fn(&[f32], &mut [f32])) -> Tensor {
        let av = self.value(a);
        let mut out = vec![0.0; av.numel()];
        f(av.data(), &mut out);
        Tensor::new(av.shape().to_vec(), out).expect("shape preserved")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.unary(a, kernels::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.unary(a, kernels::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.unary(a, kernels::relu);
        self.push(value, Op::Relu(a))
    }

    fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return invalid("concat of zero tensors");
        };
        let base = self.value(first).shape().to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        let outer = outer_inner(&base, axis).0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && match axis {
                    Axis::Rows => s[1..] == base[1..],
                    Axis::Last => s[..s.len() - 1] == base[..base.len() - 1],
                };
            if !compatible {
                return shape_err("concat", format!("{base:?} vs {s:?}"));
            }
            widths.push(outer_inner(s, axis).1);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base;
        match axis {
            Axis::Rows => shape[0] = parts.iter().map(|&p| self.value(p).shape()[0]).sum(),
            Axis::Last => *shape.last_mut().unwrap() = total,
        }
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Concat { parts: parts.to_vec(), axis }))
    }

    fn split(&mut self, src: Var, sizes: &[usize], axis: Axis) -> Result<Vec<Var>> {
        let shape = self.value(src).shape().to_vec();
        let extent = match axis {
            Axis::Rows => shape[0],
            Axis::Last => *shape.last().unwrap(),
        };
        if sizes.iter().sum::<usize>() != extent || sizes.iter().any(|&s| s == 0) {
            return shape_err("split", format!("sizes {sizes:?} against {shape:?}"));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let unit = inner / extent;
        let mut out = Vec::with_capacity(sizes.len());
        let mut offset = 0;
        for &size in sizes {
            let w = size * unit;
            let src_data = self.value(src).data();
            let mut data = Vec::with_capacity(outer * w);
            for o in 0..outer {
                let start = o * inner + offset * unit;
                data.extend_from_slice(&src_data[start..start + w]);
            }
            let mut piece_shape = shape.clone();
            match axis {
                Axis::Rows => piece_shape[0] = size,
                Axis::Last => *piece_shape.last_mut().unwrap() = size,
            }
            let value = Tensor::new(piece_shape, data)?;
            out.push(self.push(value, Op::Slice { src, offset: offset * unit, axis }));
            offset += size;
        }
        Ok(out)
    }

    /// Joins along the last extent; all other extents must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis::Last)
    }

    /// Splits along the last extent into pieces of the given sizes.
    pub fn split_last(&mut self, src: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        self.split(src, sizes, Axis::Last)
    }

    /// Stacks along the leading (batch) extent.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis::Rows)
    }

    pub fn split_rows(&mut self, src: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        self.split(src, sizes, Axis::Rows)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.rank() != 2 || lv.shape()[0] != labels.len() {
            return shape_err(
                "softmax_cross_entropy",
                format!("logits {:?} with {} labels", lv.shape(), labels.len()),
            );
        }
        let (n, classes) = (lv.shape()[0], lv.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return invalid(format!("label {bad} outside [0, {classes})"));
        }
        let mut probs = vec![0.0f32; n * classes];
        let mut loss = 0.0f64;
        for (i, row) in lv.data().chunks_exact(classes).enumerate() {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut denom = 0.0f32;
            for (p, &z) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
                *p = (z - max).exp();
                denom += *p;
            }
            probs[i * classes..(i + 1) * classes].iter_mut().for_each(|p| *p /= denom);
            loss += (denom.ln() + max - row[labels[i]]) as f64;
        }
        let value = Tensor::scalar((loss / n as f64) as f32);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            ));
        }
        let sizes: Vec<usize> = self.nodes.iter().map(|n| n.value.numel()).collect();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        fn slot<'a>(grads: &'a mut [Option<Vec<f32>>], sizes: &[usize], v: Var) -> &'a mut Vec<f32> {
            grads[v.0].get_or_insert_with(|| vec![0.0; sizes[v.0]])
        }

        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    kernels::matmul_acc_rhs_t(&dy, bv.data(), m, k, n, slot(&mut grads, &sizes, *a));
                    kernels::matmul_acc_lhs_t(av.data(), &dy, m, k, n, slot(&mut grads, &sizes, *b));
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, k, d) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                    // x, w and b are distinct nodes, so the three slots never alias.
                    let mut dx = slot(&mut grads, &sizes, *x).split_off(0);
                    let mut dw = slot(&mut grads, &sizes, *w).split_off(0);
                    let mut db = slot(&mut grads, &sizes, *b).split_off(0);
                    kernels::linear_backward(
                        xv.data(),
                        wv.data(),
                        &dy,
                        n,
                        k,
                        d,
                        Some(&mut dx),
                        Some(&mut dw),
                        Some(&mut db),
                    );
                    grads[x.0] = Some(dx);
                    grads[w.0] = Some(dw);
                    grads[b.0] = Some(db);
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        slot(&mut grads, &sizes, *v).iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = slot(&mut grads, &sizes, *a);
                    for ((g, d), bi) in ga.iter_mut().zip(&dy).zip(bv) {
                        *g += d * bi;
                    }
                    let gb = slot(&mut grads, &sizes, *b);
                    for ((g, d), ai) in gb.iter_mut().zip(&dy).zip(av) {
                        *g += d * ai;
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = slot(&mut grads, &sizes, *a);
                    for ((g, d), yi) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += d * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(a) => {
                    let ga = slot(&mut grads, &sizes, *a);
                    for ((g, d), yi) in ga.iter_mut().zip(&dy).zip(y) {
                        *g += d * (1.0 - yi * yi);
                    }
                }
                Op::Relu(a) => {
                    let ga = slot(&mut grads, &sizes, *a);
                    for ((g, d), yi) in ga.iter_mut().zip(&dy).zip(y) {
                        if *yi > 0.0 {
                            *g += d;
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let (outer, inner) = outer_inner(node.value.shape(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let w = outer_inner(self.value(*p).shape(), *axis).1;
                        let gp = slot(&mut grads, &sizes, *p);
                        for o in 0..outer {
                            let src = &dy[o * inner + offset..o * inner + offset + w];
                            gp[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(g, d)| *g += d);
                        }
                        offset += w;
                    }
                }
                Op::Slice { src, offset, axis } => {
                    let (outer, inner) = outer_inner(self.value(*src).shape(), *axis);
                    let w = dy.len() / outer;
                    let gs = slot(&mut grads, &sizes, *src);
                    for o in 0..outer {
                        let dst = &mut gs[o * inner + offset..o * inner + offset + w];
                        dst.iter_mut().zip(&dy[o * w..(o + 1) * w]).for_each(|(g, d)| *g += d);
                    }
                }
                Op::Sum(a) => {
                    let d = dy[0];
                    slot(&mut grads, &sizes, *a).iter_mut().for_each(|g| *g += d);
                }
                Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                    let classes = self.value(*logits).shape()[1];
                    let scale = dy[0] / labels.len() as f32;
                    let gl = slot(&mut grads, &sizes, *logits);
                    for (i, &label) in labels.iter().enumerate() {
                        for c in 0..classes {
                            let onehot = if c == label { 1.0 } else { 0.0 };
                            gl[i * classes + c] += (probs[i * classes + c] - onehot) * scale;
                        }
                    }
                }
            }
            grads[idx] = Some(dy);
        }
        Ok(Gradients { grads, sizes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero_cases() {
        let mut tape = Tape::new();
        let eye = tape.leaf(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.leaf(&t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 2.0, 3.0, 4.0]);

        let row = tape.leaf(&t(&[1, 2], &[1.0, 0.0]));
        let col = tape.leaf(&t(&[2, 1], &[0.0, 5.0]));
        let z = tape.matmul(row, col).unwrap();
        assert_eq!(tape.value(z).shape(), &[1, 1]);
        assert_eq!(tape.value(z).data(), &[0.0]);

        assert!(tape.matmul(m, row).is_err());
    }

    #[test]
    fn elementwise_scalars() {
        let mut tape = Tape::new();
        let zero = tape.leaf(&Tensor::scalar(0.0));
        let one = tape.leaf(&Tensor::scalar(1.0));
        let s0 = tape.sigmoid(zero);
        let t0 = tape.tanh(zero);
        let s1 = tape.sigmoid(one);
        assert_eq!(tape.value(s0).data(), &[0.5]);
        assert_eq!(tape.value(t0).data(), &[0.0]);
        // 1 / (1 + e^-1) evaluated in f64
        let want = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.value(s1).data()[0] as f64 - want).abs() < 1e-6);
        assert!((want - 0.731059).abs() < 1e-6);

        let a = tape.leaf(&t(&[2], &[1.0, 2.0]));
        let b = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mul(a, b).is_err());
    }

    #[test]
    fn concat_and_split_examples() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[1], &[1.0]));
        let b = tape.leaf(&t(&[1], &[2.0]));
        let ab = tape.concat_last(&[a, b]).unwrap();
        assert_eq!(tape.value(ab).data(), &[1.0, 2.0]);

        let v = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        let parts = tape.split_last(v, &[1, 2]).unwrap();
        assert_eq!(tape.value(parts[0]).data(), &[1.0]);
        assert_eq!(tape.value(parts[1]).data(), &[2.0, 3.0]);
        assert!(tape.split_last(v, &[1, 1]).is_err());

        let r = tape.leaf(&t(&[2, 3], &[0.0; 6]));
        assert!(tape.concat_last(&[v, r]).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let logits = tape.leaf(&t(&[1, 2], &[0.3, 0.3]));
        let loss = tape.softmax_cross_entropy(logits, &[1]).unwrap();
        assert!((tape.value(loss).data()[0] - std::f32::consts::LN_2).abs() < 1e-6);

        let confident = tape.leaf(&t(&[1, 2], &[60.0, 0.0]));
        let loss = tape.softmax_cross_entropy(confident, &[0]).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-12);

        assert!(tape.softmax_cross_entropy(logits, &[2]).is_err());
        assert!(tape.softmax_cross_entropy(logits, &[0, 1]).is_err());
    }

    #[test]
    fn cross_entropy_matches_f64_recomputation() {
        let logits = [0.4f32, -1.3, 2.2, 0.05, 0.9, -0.7];
        let labels = [2usize, 0];
        let mut want = 0.0f64;
        for (i, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = logits[i * 3..i * 3 + 3].iter().map(|&v| v as f64).collect();
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[l];
        }
        want /= 2.0;

        let mut tape = Tape::new();
        let z = tape.leaf(&t(&[2, 3], &logits));
        let loss = tape.softmax_cross_entropy(z, &labels).unwrap();
        assert!((tape.value(loss).data()[0] as f64 - want).abs() < 1e-6);

        // gradient = (softmax - onehot) / n
        let grads = tape.backward(loss).unwrap().get(z);
        for (i, &l) in labels.iter().enumerate() {
            let row: Vec<f64> = logits[i * 3..i * 3 + 3].iter().map(|&v| v as f64).collect();
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                let p = row[c].exp() / denom;
                let expect = (p - if c == l { 1.0 } else { 0.0 }) / 2.0;
                assert!((grads[i * 3 + c] as f64 - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t(&[3], &[0.2, -1.0, 4.0]));
        let loss = tape.sum(w);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn product_rule_through_sigmoid() {
        // loss = sum(sigmoid(w) * u): d/dw = σ(w)(1-σ(w))·u, d/du = σ(w)
        let (wv, uv) = ([0.3f32, -0.8], [1.5f32, -2.0]);
        let mut tape = Tape::new();
        let w = tape.leaf(&t(&[2], &wv));
        let u = tape.leaf(&t(&[2], &uv));
        let s = tape.sigmoid(w);
        let p = tape.mul(s, u).unwrap();
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        for j in 0..2 {
            let sig = 1.0 / (1.0 + (-(wv[j] as f64)).exp());
            assert!((grads.get(w)[j] as f64 - sig * (1.0 - sig) * uv[j] as f64).abs() < 1e-6);
            assert!((grads.get(u)[j] as f64 - sig).abs() < 1e-6);
        }
    }

    #[test]
    fn unreachable_inputs_get_zero_and_non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf(&t(&[2], &[1.0, 2.0]));
        let unused = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        let loss = tape.sum(a);
        let grads = tape.backward(loss).unwrap();
        assert!(!grads.is_reachable(unused));
        assert_eq!(grads.get(unused), vec![0.0; 3]);

        let mut target = Tensor::zeros(&[3]).unwrap();
        grads.accumulate_into(unused, &mut target).unwrap();
        assert_eq!(target.grad().unwrap(), &[0.0; 3]);

        assert!(tape.backward(a).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // loss = sum(x * x) -> 2x
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[3.0, -1.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq);
        assert_eq!(tape.backward(loss).unwrap().get(x), vec![6.0, -2.0]);
    }
}
