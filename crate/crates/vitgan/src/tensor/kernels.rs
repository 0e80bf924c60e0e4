//! Raw compute kernels shared by forward ops and backward rules.
//!
//! Everything here works on flat row-major slices plus shape metadata.
//! Reductions run in a fixed order; see `parallel` for why results do
//! not depend on thread count.

use super::{numel, row_major_strides, Element};
use crate::error::{Error, Result};
use crate::parallel::for_each_row;

/// Right-aligned broadcast: dimensions must match or be 1; missing
/// leading dimensions count as 1.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::dim("broadcast", a, b));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

/// Strides of `shape` inside the broadcast space `out_shape`, with 0 for
/// broadcast (size-1 or missing) dimensions.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let own = row_major_strides(shape);
    let pad = out_shape.len() - shape.len();
    let mut strides = vec![0; out_shape.len()];
    for i in 0..shape.len() {
        strides[pad + i] = if shape[i] == 1 { 0 } else { own[i] };
    }
    strides
}

/// Apply a binary function over two broadcast-compatible tensors.
pub fn zip_broadcast<E: Element>(
    a: &[E],
    a_shape: &[usize],
    b: &[E],
    b_shape: &[usize],
    f: impl Fn(E, E) -> E,
) -> Result<(Vec<E>, Vec<usize>)> {
    if a_shape == b_shape {
        let out = a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect();
        return Ok((out, a_shape.to_vec()));
    }
    let out_shape = broadcast_shapes(a_shape, b_shape)?;
    let n = numel(&out_shape);
    let sa = broadcast_strides(a_shape, &out_shape);
    let sb = broadcast_strides(b_shape, &out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for _ in 0..n {
        out.push(f(a[off_a], b[off_b]));
        // Odometer increment, updating flat offsets incrementally.
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off_a -= sa[d] * out_shape[d];
            off_b -= sb[d] * out_shape[d];
        }
    }
    Ok((out, out_shape))
}

/// Sum a gradient in broadcast space down to `target_shape`.
pub fn reduce_to_shape<E: Element>(grad: &[E], grad_shape: &[usize], target_shape: &[usize]) -> Vec<E> {
    if grad_shape == target_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(target_shape, grad_shape);
    let mut out = vec![E::ZERO; numel(target_shape)];
    let mut idx = vec![0usize; grad_shape.len()];
    let mut off = 0usize;
    for &g in grad {
        out[off] += g;
        for d in (0..grad_shape.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < grad_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * grad_shape[d];
        }
    }
    out
}

/// Expand a tensor into a broadcast space by replication.
pub fn expand_to_shape<E: Element>(data: &[E], shape: &[usize], out_shape: &[usize]) -> Vec<E> {
    if shape == out_shape {
        return data.to_vec();
    }
    let strides = broadcast_strides(shape, out_shape);
    let n = numel(out_shape);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= strides[d] * out_shape[d];
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Matrix multiplication
// ---------------------------------------------------------------------------

pub struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    a_offsets: Vec<usize>,
    b_offsets: Vec<usize>,
}

pub fn matmul_plan(a_shape: &[usize], b_shape: &[usize]) -> Result<MatmulPlan> {
    if a_shape.len() < 2 || b_shape.len() < 2 {
        return Err(Error::dim("matmul", a_shape, b_shape));
    }
    let (m, ka) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
    let (kb, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
    if ka != kb {
        return Err(Error::dim("matmul", a_shape, b_shape));
    }
    let batch_a = &a_shape[..a_shape.len() - 2];
    let batch_b = &b_shape[..b_shape.len() - 2];
    let batch = broadcast_shapes(batch_a, batch_b)?;
    let mut out_shape = batch.clone();
    out_shape.push(m);
    out_shape.push(n);

    // Flat offset of each batch element on both sides (0-stride broadcast).
    let nb = numel(&batch);
    let sa = broadcast_strides(batch_a, &batch);
    let sb = broadcast_strides(batch_b, &batch);
    let mut a_offsets = Vec::with_capacity(nb);
    let mut b_offsets = Vec::with_capacity(nb);
    let mut idx = vec![0usize; batch.len()];
    let mut off_a = 0usize;
    let mut off_b = 0usize;
    for _ in 0..nb.max(1) {
        a_offsets.push(off_a * (m * ka));
        b_offsets.push(off_b * (kb * n));
        for d in (0..batch.len()).rev() {
            idx[d] += 1;
            off_a += sa[d];
            off_b += sb[d];
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
            off_a -= sa[d] * batch[d];
            off_b -= sb[d] * batch[d];
        }
    }
    Ok(MatmulPlan {
        m,
        k: ka,
        n,
        out_shape,
        a_offsets,
        b_offsets,
    })
}

/// Batched matrix product with leading-dimension broadcasting.
pub fn matmul<E: Element>(
    a: &[E],
    a_shape: &[usize],
    b: &[E],
    b_shape: &[usize],
) -> Result<(Vec<E>, Vec<usize>)> {
    let plan = matmul_plan(a_shape, b_shape)?;
    let (m, k, n) = (plan.m, plan.k, plan.n);
    let mut out = vec![E::ZERO; numel(&plan.out_shape)];
    for_each_row(&mut out, n, 2 * k * n, |row, out_row| {
        let batch = row / m;
        let i = row % m;
        let a_row = &a[plan.a_offsets[batch] + i * k..][..k];
        let b_mat = &b[plan.b_offsets[batch]..][..k * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b_mat[kk * n..][..n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
    Ok((out, plan.out_shape))
}

// ---------------------------------------------------------------------------
// Shape movement
// ---------------------------------------------------------------------------

/// Materialized axis permutation.
pub fn permute<E: Element>(data: &[E], shape: &[usize], perm: &[usize]) -> (Vec<E>, Vec<usize>) {
    debug_assert_eq!(perm.len(), shape.len());
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let in_strides = row_major_strides(shape);
    let perm_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(data[off]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            off += perm_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
            off -= perm_strides[d] * out_shape[d];
        }
    }
    (out, out_shape)
}

pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Softmax along `axis` with max-subtraction for stability.
pub fn softmax<E: Element>(data: &[E], shape: &[usize], axis: usize) -> Vec<E> {
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![E::ZERO; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = data[base];
            for a in 1..axis_len {
                let v = data[base + a * inner];
                if v > max {
                    max = v;
                }
            }
            let mut sum = E::ZERO;
            for a in 0..axis_len {
                let e = (data[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                sum += e;
            }
            for a in 0..axis_len {
                out[base + a * inner] = out[base + a * inner] / sum;
            }
        }
    }
    out
}

/// Sum over the given axes, keeping them as size 1.
pub fn sum_axes_keepdim<E: Element>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<E>, Vec<usize>) {
    let mut out_shape = shape.to_vec();
    for &a in axes {
        out_shape[a] = 1;
    }
    let out = reduce_to_shape(data, shape, &out_shape);
    (out, out_shape)
}

// ---------------------------------------------------------------------------
// Convolution building blocks
// ---------------------------------------------------------------------------

pub fn conv2d_output_size(h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = h + 2 * pad;
    if padded < k {
        return Err(Error::Config(format!(
            "kernel {k} does not fit input {h} with padding {pad}"
        )));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "non-integral conv output: (({h} + 2*{pad}) - {k}) not divisible by stride {stride}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

pub fn conv_transpose2d_output_size(h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let grown = (h - 1) * stride + k;
    if grown < 2 * pad + 1 {
        return Err(Error::Config(format!(
            "transpose conv output collapses: input {h}, kernel {k}, stride {stride}, padding {pad}"
        )));
    }
    Ok(grown - 2 * pad)
}

/// Unfold one image `[c,h,w]` into columns `[c*kh*kw, oh*ow]`.
pub fn im2col<E: Element>(
    x: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let cols_len = c * kh * kw * oh * ow;
    let mut cols = vec![E::ZERO; cols_len];
    let l = oh * ow;
    for ci in 0..c {
        let x_ch = &x[ci * h * w..][..h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * l;
                for oi in 0..oh {
                    let y = (oi * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let x_row = &x_ch[y as usize * w..][..w];
                    let out_row = &mut cols[row + oi * ow..][..ow];
                    for (oj, out) in out_row.iter_mut().enumerate() {
                        let xcol = (oj * stride + kj) as isize - pad as isize;
                        if xcol >= 0 && xcol < w as isize {
                            *out = x_row[xcol as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image `[c,h,w]`.
pub fn col2im_add<E: Element>(
    cols: &[E],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<E> {
    let mut x = vec![E::ZERO; c * h * w];
    let l = oh * ow;
    for ci in 0..c {
        let x_ch = &mut x[ci * h * w..][..h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = ((ci * kh + ki) * kw + kj) * l;
                for oi in 0..oh {
                    let y = (oi * stride + ki) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let x_row = &mut x_ch[y as usize * w..][..w];
                    let col_row = &cols[row + oi * ow..][..ow];
                    for (oj, &v) in col_row.iter().enumerate() {
                        let xcol = (oj * stride + kj) as isize - pad as isize;
                        if xcol >= 0 && xcol < w as isize {
                            x_row[xcol as usize] += v;
                        }
                    }
                }
            }
        }
    }
    x
}

// ---------------------------------------------------------------------------
// Patch <-> image movement
// ---------------------------------------------------------------------------

/// `[b,c,h,w]` -> `[b, (h/p)*(w/p), c*p*p]`; patches ordered row-major over the
/// patch grid, each row one flattened c x p x p block.
pub fn extract_patches<E: Element>(x: &[E], b: usize, c: usize, h: usize, w: usize, p: usize) -> Vec<E> {
    let (gh, gw) = (h / p, w / p);
    let row_len = c * p * p;
    let mut out = vec![E::ZERO; b * gh * gw * row_len];
    for bi in 0..b {
        for gi in 0..gh {
            for gj in 0..gw {
                let patch = &mut out[((bi * gh + gi) * gw + gj) * row_len..][..row_len];
                for ci in 0..c {
                    for pi in 0..p {
                        let src = &x[((bi * c + ci) * h + gi * p + pi) * w + gj * p..][..p];
                        patch[(ci * p + pi) * p..][..p].copy_from_slice(src);
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`extract_patches`].
pub fn merge_patches<E: Element>(patches: &[E], b: usize, c: usize, h: usize, w: usize, p: usize) -> Vec<E> {
    let (gh, gw) = (h / p, w / p);
    let row_len = c * p * p;
    let mut out = vec![E::ZERO; b * c * h * w];
    for bi in 0..b {
        for gi in 0..gh {
            for gj in 0..gw {
                let patch = &patches[((bi * gh + gi) * gw + gj) * row_len..][..row_len];
                for ci in 0..c {
                    for pi in 0..p {
                        let dst = &mut out[((bi * c + ci) * h + gi * p + pi) * w + gj * p..][..p];
                        dst.copy_from_slice(&patch[(ci * p + pi) * p..][..p]);
                    }
                }
            }
        }
    }
    out
}
