//! Raw `f32` kernels shared by the tape and the tape-free inference path.
//!
//! Matrix products go through `matrixmultiply::sgemm`. Work is split across
//! the current rayon pool in fixed-size row blocks, so the arithmetic for any
//! output element is the same whatever the worker count: results are
//! bit-identical for 1 or N workers.

use rayon::prelude::*;

/// Rows per parallel block of a matrix product.
pub const ROW_BLOCK: usize = 128;
/// Elements per parallel block of an elementwise map.
const ELEM_BLOCK: usize = 1 << 14;

#[derive(Clone, Copy)]
struct SendPtr(*const f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// `c[m×n] = beta·c + A·B` with `A` (m×k) and `B` (k×n) given by strides and
/// `c` contiguous row-major.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(c.len(), m * n, "gemm output buffer");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len(), "gemm lhs out of bounds");
    assert!((k - 1) * rsb + (n - 1) * csb < b.len(), "gemm rhs out of bounds");

    let a_ptr = SendPtr(a.as_ptr());
    let b_ptr = SendPtr(b.as_ptr());
    let run = |row0: usize, block: &mut [f32]| {
        let rows = block.len() / n;
        let (a_ptr, b_ptr) = (a_ptr, b_ptr);
        // SAFETY: bounds asserted above; block rows row0..row0+rows are within m.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                k,
                n,
                1.0,
                a_ptr.0.add(row0 * rsa),
                rsa as isize,
                csa as isize,
                b_ptr.0,
                rsb as isize,
                csb as isize,
                beta,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };

    if m <= ROW_BLOCK {
        run(0, c);
    } else {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(i * ROW_BLOCK, block));
    }
}

/// `out[m×n] = a[m×k] · b[k×n]`.
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    gemm(m, k, n, a, (k, 1), b, (n, 1), 0.0, out);
}

/// `da[m×k] += dy[m×n] · b[k×n]ᵀ`.
pub fn matmul_acc_rhs_t(dy: &[f32], b: &[f32], m: usize, k: usize, n: usize, da: &mut [f32]) {
    gemm(m, n, k, dy, (n, 1), b, (1, n), 1.0, da);
}

/// `db[k×n] += a[m×k]ᵀ · dy[m×n]`.
pub fn matmul_acc_lhs_t(a: &[f32], dy: &[f32], m: usize, k: usize, n: usize, db: &mut [f32]) {
    gemm(k, m, n, a, (1, k), dy, (n, 1), 1.0, db);
}

/// Affine map `out[n×d] = x[n×k] · w[d×k]ᵀ + b`.
pub fn linear(x: &[f32], w: &[f32], b: &[f32], n: usize, k: usize, d: usize, out: &mut [f32]) {
    assert_eq!(b.len(), d, "bias length");
    gemm(n, k, d, x, (k, 1), w, (1, k), 0.0, out);
    for row in out.chunks_exact_mut(d) {
        row.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
    }
}

/// Accumulates the three gradients of [`linear`].
#[allow(clippy::too_many_arguments)]
pub fn linear_backward(
    x: &[f32],
    w: &[f32],
    dy: &[f32],
    n: usize,
    k: usize,
    d: usize,
    dx: Option<&mut [f32]>,
    dw: Option<&mut [f32]>,
    db: Option<&mut [f32]>,
) {
    if let Some(dx) = dx {
        gemm(n, d, k, dy, (d, 1), w, (k, 1), 1.0, dx);
    }
    if let Some(dw) = dw {
        gemm(d, n, k, dy, (1, d), x, (k, 1), 1.0, dw);
    }
    if let Some(db) = db {
        col_sum_acc(dy, d, db);
    }
}

/// `acc[j] += Σ_i m[i][j]`, summed in row order.
pub fn col_sum_acc(m: &[f32], width: usize, acc: &mut [f32]) {
    for row in m.chunks_exact(width) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
}

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map_into(src: &[f32], dst: &mut [f32], f: impl Fn(f32) -> f32 + Sync) {
    assert_eq!(src.len(), dst.len());
    if src.len() <= 2 * ELEM_BLOCK {
        dst.iter_mut().zip(src).for_each(|(d, &s)| *d = f(s));
    } else {
        dst.par_chunks_mut(ELEM_BLOCK)
            .zip(src.par_chunks(ELEM_BLOCK))
            .for_each(|(d, s)| d.iter_mut().zip(s).for_each(|(d, &s)| *d = f(s)));
    }
}

pub fn sigmoid(src: &[f32], dst: &mut [f32]) {
    map_into(src, dst, sigmoid_scalar);
}

pub fn tanh(src: &[f32], dst: &mut [f32]) {
    map_into(src, dst, f32::tanh);
}

pub fn relu(src: &[f32], dst: &mut [f32]) {
    map_into(src, dst, |v| v.max(0.0));
}

pub fn sigmoid_inplace(buf: &mut [f32]) {
    buf.iter_mut().for_each(|v| *v = sigmoid_scalar(*v));
}

pub fn tanh_inplace(buf: &mut [f32]) {
    buf.iter_mut().for_each(|v| *v = v.tanh());
}

pub fn relu_inplace(buf: &mut [f32]) {
    buf.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
