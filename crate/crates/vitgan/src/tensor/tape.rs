//! Operation recording and reverse-mode differentiation.
//!
//! A tape owns an append-only list of nodes in topological order (inputs
//! always precede outputs). Forward methods compute eagerly and record a
//! node only when some input participates in gradient tracking; constants
//! flow through for free. [`Tape::backward`] seeds the scalar loss with
//! 1.0, walks the nodes once in reverse, accumulates (`+=`) at fan-in and
//! returns gradients for every `requires_grad` leaf.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::kernels as k;
use super::{numel, Element, TapeRef, Tensor, TensorId};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// A tracked (or constant) operand captured at record time.
struct Arg<E: Element> {
    node: Option<NodeId>,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
}

enum Op<E: Element> {
    Leaf {
        requires_grad: bool,
    },
    Add {
        a: Arg<E>,
        b: Arg<E>,
    },
    Sub {
        a: Arg<E>,
        b: Arg<E>,
    },
    Mul {
        a: Arg<E>,
        b: Arg<E>,
    },
    Div {
        a: Arg<E>,
        b: Arg<E>,
    },
    Scale {
        a: Arg<E>,
        factor: E,
    },
    AddScalar {
        a: Arg<E>,
    },
    Neg {
        a: Arg<E>,
    },
    Relu {
        a: Arg<E>,
    },
    LeakyRelu {
        a: Arg<E>,
        slope: E,
    },
    Tanh {
        a: Arg<E>,
        y: Arc<Vec<E>>,
    },
    Sigmoid {
        a: Arg<E>,
        y: Arc<Vec<E>>,
    },
    Gelu {
        a: Arg<E>,
    },
    Sqrt {
        a: Arg<E>,
        y: Arc<Vec<E>>,
    },
    Abs {
        a: Arg<E>,
    },
    Matmul {
        a: Arg<E>,
        b: Arg<E>,
    },
    Softmax {
        a: Arg<E>,
        y: Arc<Vec<E>>,
        axis: usize,
    },
    SumAll {
        a: Arg<E>,
    },
    SumAxes {
        a: Arg<E>,
        out_shape: Vec<usize>,
    },
    Reshape {
        a: Arg<E>,
    },
    Permute {
        a: Arg<E>,
        perm: Vec<usize>,
    },
    Concat {
        parts: Vec<Arg<E>>,
        axis: usize,
    },
    ExtractPatches {
        a: Arg<E>,
        patch: usize,
    },
    MergePatches {
        a: Arg<E>,
        patch: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
    GatherRows {
        table: Arg<E>,
        indices: Arc<Vec<usize>>,
    },
    Conv2d {
        x: Arg<E>,
        w: Arg<E>,
        bias: Option<Arg<E>>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: Arg<E>,
        w: Arg<E>,
        bias: Option<Arg<E>>,
        stride: usize,
        pad: usize,
    },
    BceWithLogits {
        logits: Arg<E>,
        target: E,
    },
}

struct Node<E: Element> {
    shape: Vec<usize>,
    op: Op<E>,
}

fn next_tape_id() -> u64 {
    static NEXT: AtomicU64 = AtomicU64::new(1);
    NEXT.fetch_add(1, Ordering::Relaxed)
}

pub struct Tape<E: Element> {
    id: u64,
    nodes: Vec<Node<E>>,
    leaves: HashMap<TensorId, NodeId>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradient map produced by [`Tape::backward`]; keyed by leaf identity.
pub struct Gradients<E: Element> {
    tape: u64,
    by_node: HashMap<NodeId, Tensor<E>>,
    leaves: HashMap<TensorId, NodeId>,
}

impl<E: Element> Gradients<E> {
    fn empty() -> Self {
        Gradients {
            tape: 0,
            by_node: HashMap::new(),
            leaves: HashMap::new(),
        }
    }

    /// Gradient with respect to a `requires_grad` leaf, if it received one.
    pub fn wrt(&self, t: &Tensor<E>) -> Option<&Tensor<E>> {
        let node = match t.node() {
            Some(tr) if tr.tape == self.tape => Some(tr.node),
            Some(_) => None,
            None => self.leaves.get(&t.id()).copied(),
        }?;
        self.by_node.get(&node)
    }

    pub fn contains(&self, t: &Tensor<E>) -> bool {
        self.wrt(t).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            id: next_tape_id(),
            nodes: Vec::new(),
            leaves: HashMap::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn intern_leaf(&mut self, t: &Tensor<E>) -> NodeId {
        if let Some(&n) = self.leaves.get(&t.id()) {
            return n;
        }
        let n = self.nodes.len();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            op: Op::Leaf {
                requires_grad: true,
            },
        });
        self.leaves.insert(t.id(), n);
        n
    }

    fn arg(&mut self, t: &Tensor<E>) -> Result<Arg<E>> {
        let node = match t.node() {
            Some(tr) => {
                if tr.tape != self.id {
                    return Err(Error::Contract(
                        "tensor was recorded on a different tape".into(),
                    ));
                }
                Some(tr.node)
            }
            None if t.requires_grad() => Some(self.intern_leaf(t)),
            None => None,
        };
        Ok(Arg {
            node,
            shape: t.shape().to_vec(),
            data: t.data_arc(),
        })
    }

    fn emit(
        &mut self,
        data: Vec<E>,
        shape: Vec<usize>,
        tracked: bool,
        op: impl FnOnce() -> Op<E>,
    ) -> Tensor<E> {
        if !tracked {
            return Tensor::from_op(data, shape, None);
        }
        let node = self.nodes.len();
        self.nodes.push(Node {
            shape: shape.clone(),
            op: op(),
        });
        Tensor::from_op(
            data,
            shape,
            Some(TapeRef {
                tape: self.id,
                node,
            }),
        )
    }

    // -- elementwise binary ------------------------------------------------

    fn binary(
        &mut self,
        a: &Tensor<E>,
        b: &Tensor<E>,
        f: impl Fn(E, E) -> E,
        build: impl FnOnce(Arg<E>, Arg<E>) -> Op<E>,
    ) -> Result<Tensor<E>> {
        let (data, shape) = k::zip_broadcast(a.data(), a.shape(), b.data(), b.shape(), f)?;
        let aa = self.arg(a)?;
        let bb = self.arg(b)?;
        let tracked = aa.node.is_some() || bb.node.is_some();
        Ok(self.emit(data, shape, tracked, move || build(aa, bb)))
    }

    pub fn add(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    pub fn div(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        self.binary(a, b, |x, y| x / y, |a, b| Op::Div { a, b })
    }

    // -- elementwise unary -------------------------------------------------

    fn unary(
        &mut self,
        a: &Tensor<E>,
        f: impl Fn(E) -> E,
        build: impl FnOnce(Arg<E>) -> Op<E>,
    ) -> Result<Tensor<E>> {
        let data: Vec<E> = a.data().iter().map(|&v| f(v)).collect();
        let shape = a.shape().to_vec();
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(data, shape, tracked, move || build(aa)))
    }

    /// Unary whose backward rule needs the op's own output.
    fn unary_saving_output(
        &mut self,
        a: &Tensor<E>,
        f: impl Fn(E) -> E,
        build: impl FnOnce(Arg<E>, Arc<Vec<E>>) -> Op<E>,
    ) -> Result<Tensor<E>> {
        let data: Vec<E> = a.data().iter().map(|&v| f(v)).collect();
        let shape = a.shape().to_vec();
        let aa = self.arg(a)?;
        if aa.node.is_none() {
            return Ok(Tensor::from_op(data, shape, None));
        }
        let y = Arc::new(data.clone());
        Ok(self.emit(data, shape, true, move || build(aa, y)))
    }

    pub fn scale(&mut self, a: &Tensor<E>, factor: E) -> Result<Tensor<E>> {
        self.unary(a, |v| v * factor, |a| Op::Scale { a, factor })
    }

    pub fn add_scalar(&mut self, a: &Tensor<E>, c: E) -> Result<Tensor<E>> {
        self.unary(a, |v| v + c, |a| Op::AddScalar { a })
    }

    pub fn neg(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary(a, |v| -v, |a| Op::Neg { a })
    }

    pub fn relu(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary(
            a,
            |v| if v > E::ZERO { v } else { E::ZERO },
            |a| Op::Relu { a },
        )
    }

    pub fn leaky_relu(&mut self, a: &Tensor<E>, slope: E) -> Result<Tensor<E>> {
        self.unary(
            a,
            |v| if v > E::ZERO { v } else { v * slope },
            |a| Op::LeakyRelu { a, slope },
        )
    }

    pub fn tanh(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary_saving_output(a, |v| v.tanh(), |a, y| Op::Tanh { a, y })
    }

    pub fn sigmoid(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary_saving_output(a, sigmoid_scalar, |a, y| Op::Sigmoid { a, y })
    }

    pub fn gelu(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary(a, gelu_scalar, |a| Op::Gelu { a })
    }

    pub fn sqrt(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary_saving_output(a, |v| v.sqrt(), |a, y| Op::Sqrt { a, y })
    }

    pub fn abs(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        self.unary(a, |v| v.abs(), |a| Op::Abs { a })
    }

    // -- linear algebra ----------------------------------------------------

    pub fn matmul(&mut self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let (data, shape) = k::matmul(a.data(), a.shape(), b.data(), b.shape())?;
        let aa = self.arg(a)?;
        let bb = self.arg(b)?;
        let tracked = aa.node.is_some() || bb.node.is_some();
        Ok(self.emit(data, shape, tracked, move || Op::Matmul { a: aa, b: bb }))
    }

    pub fn softmax(&mut self, a: &Tensor<E>, axis: usize) -> Result<Tensor<E>> {
        if axis >= a.rank() {
            return Err(Error::dim("softmax axis", a.shape(), &[axis]));
        }
        let data = k::softmax(a.data(), a.shape(), axis);
        let shape = a.shape().to_vec();
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        if !tracked {
            return Ok(Tensor::from_op(data, shape, None));
        }
        let y = Arc::new(data.clone());
        Ok(self.emit(data, shape, true, move || Op::Softmax { a: aa, y, axis }))
    }

    // -- reductions ----------------------------------------------------------

    pub fn sum_all(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let mut total = E::ZERO;
        for &v in a.data() {
            total += v;
        }
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(vec![total], vec![], tracked, move || Op::SumAll { a: aa }))
    }

    pub fn mean_all(&mut self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let n = a.numel();
        let s = self.sum_all(a)?;
        self.scale(&s, E::ONE / E::from_f64(n as f64))
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes(&mut self, a: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
        for &ax in axes {
            if ax >= a.rank() {
                return Err(Error::dim("sum axis", a.shape(), &[ax]));
            }
        }
        let (data, out_shape) = k::sum_axes_keepdim(a.data(), a.shape(), axes);
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        let os = out_shape.clone();
        Ok(self.emit(data, out_shape, tracked, move || Op::SumAxes {
            a: aa,
            out_shape: os,
        }))
    }

    /// Mean over `axes`, keeping them as size-1 dimensions.
    pub fn mean_axes(&mut self, a: &Tensor<E>, axes: &[usize]) -> Result<Tensor<E>> {
        let count: usize = axes.iter().map(|&ax| a.shape()[ax]).product();
        let s = self.sum_axes(a, axes)?;
        self.scale(&s, E::ONE / E::from_f64(count as f64))
    }

    // -- shape movement ------------------------------------------------------

    pub fn reshape(&mut self, a: &Tensor<E>, new_shape: &[usize]) -> Result<Tensor<E>> {
        if numel(new_shape) != a.numel() {
            return Err(Error::dim("reshape", a.shape(), new_shape));
        }
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(a.data().to_vec(), new_shape.to_vec(), tracked, move || {
            Op::Reshape { a: aa }
        }))
    }

    pub fn permute(&mut self, a: &Tensor<E>, perm: &[usize]) -> Result<Tensor<E>> {
        let mut seen = vec![false; a.rank()];
        let valid = perm.len() == a.rank()
            && perm.iter().all(|&p| {
                if p >= a.rank() || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(Error::dim("permute", a.shape(), perm));
        }
        let (data, shape) = k::permute(a.data(), a.shape(), perm);
        let aa = self.arg(a)?;
        let tracked = aa.node.is_some();
        let p = perm.to_vec();
        Ok(self.emit(data, shape, tracked, move || Op::Permute { a: aa, perm: p }))
    }

    /// Swap two axes.
    pub fn transpose(&mut self, a: &Tensor<E>, d0: usize, d1: usize) -> Result<Tensor<E>> {
        let mut perm: Vec<usize> = (0..a.rank()).collect();
        if d0 >= a.rank() || d1 >= a.rank() {
            return Err(Error::dim("transpose", a.shape(), &[d0, d1]));
        }
        perm.swap(d0, d1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[&Tensor<E>], axis: usize) -> Result<Tensor<E>> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let rank = parts[0].rank();
        if axis >= rank {
            return Err(Error::dim("concat axis", parts[0].shape(), &[axis]));
        }
        let mut out_shape = parts[0].shape().to_vec();
        for p in &parts[1..] {
            if p.rank() != rank {
                return Err(Error::dim("concat", parts[0].shape(), p.shape()));
            }
            for d in 0..rank {
                if d != axis && p.shape()[d] != out_shape[d] {
                    return Err(Error::dim("concat", parts[0].shape(), p.shape()));
                }
            }
            out_shape[axis] += p.shape()[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let total_axis = out_shape[axis];
        let mut data = vec![E::ZERO; numel(&out_shape)];
        let mut offset = 0;
        for p in parts {
            let la = p.shape()[axis];
            for o in 0..outer {
                let src = &p.data()[o * la * inner..][..la * inner];
                let dst = &mut data[(o * total_axis + offset) * inner..][..la * inner];
                dst.copy_from_slice(src);
            }
            offset += la;
        }
        let args: Vec<Arg<E>> = parts
            .iter()
            .map(|p| self.arg(p))
            .collect::<Result<_>>()?;
        let tracked = args.iter().any(|a| a.node.is_some());
        Ok(self.emit(data, out_shape, tracked, move || Op::Concat {
            parts: args,
            axis,
        }))
    }

    // -- patch movement ------------------------------------------------------

    /// `[b,c,h,w]` -> `[b, (h/p)^2, c*p*p]` for square inputs divisible by p.
    pub fn extract_patches(&mut self, img: &Tensor<E>, patch: usize) -> Result<Tensor<E>> {
        let [b, c, h, w] = dims4(img, "extract_patches")?;
        if h != w || patch == 0 || h % patch != 0 {
            return Err(Error::Config(format!(
                "patch size {patch} does not divide square image {h}x{w}"
            )));
        }
        let grid = h / patch;
        let data = k::extract_patches(img.data(), b, c, h, w, patch);
        let shape = vec![b, grid * grid, c * patch * patch];
        let aa = self.arg(img)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(data, shape, tracked, move || Op::ExtractPatches {
            a: aa,
            patch,
        }))
    }

    /// Inverse of [`Tape::extract_patches`].
    pub fn merge_patches(
        &mut self,
        patches: &Tensor<E>,
        channels: usize,
        height: usize,
        width: usize,
        patch: usize,
    ) -> Result<Tensor<E>> {
        let shape = patches.shape();
        if shape.len() != 3 {
            return Err(Error::dim("merge_patches", shape, &[0, 0, 0]));
        }
        let (b, np, row) = (shape[0], shape[1], shape[2]);
        let grid = height / patch;
        if height != width || !height.is_multiple_of(patch) || np != grid * grid || row != channels * patch * patch {
            return Err(Error::Config(format!(
                "patches {shape:?} do not assemble into {channels}x{height}x{width} with patch {patch}"
            )));
        }
        let data = k::merge_patches(patches.data(), b, channels, height, width, patch);
        let out_shape = vec![b, channels, height, width];
        let aa = self.arg(patches)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(data, out_shape, tracked, move || Op::MergePatches {
            a: aa,
            patch,
            channels,
            height,
            width,
        }))
    }

    // -- lookup ----------------------------------------------------------------

    /// Row gather: table `[n,d]`, indices -> `[len(indices), d]`.
    pub fn gather_rows(&mut self, table: &Tensor<E>, indices: &[usize]) -> Result<Tensor<E>> {
        let shape = table.shape();
        if shape.len() != 2 {
            return Err(Error::dim("gather_rows", shape, &[0, 0]));
        }
        let (n, d) = (shape[0], shape[1]);
        for &i in indices {
            if i >= n {
                return Err(Error::Bounds(format!(
                    "gather index {i} out of range for table with {n} rows"
                )));
            }
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&table.data()[i * d..][..d]);
        }
        let aa = self.arg(table)?;
        let tracked = aa.node.is_some();
        let idx = Arc::new(indices.to_vec());
        Ok(self.emit(data, vec![indices.len(), d], tracked, move || {
            Op::GatherRows {
                table: aa,
                indices: idx,
            }
        }))
    }

    // -- convolution -------------------------------------------------------------

    /// Cross-correlation. x: `[b,ci,h,w]`, w: `[co,ci,kh,kw]` -> `[b,co,oh,ow]`.
    pub fn conv2d(
        &mut self,
        x: &Tensor<E>,
        w: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        let [b, ci, h, wd] = dims4(x, "conv2d input")?;
        let [co, wci, kh, kw] = dims4(w, "conv2d weight")?;
        if ci != wci {
            return Err(Error::dim("conv2d channels", x.shape(), w.shape()));
        }
        let oh = k::conv2d_output_size(h, kh, stride, pad)?;
        let ow = k::conv2d_output_size(wd, kw, stride, pad)?;
        if let Some(bt) = bias {
            if bt.shape() != [co] {
                return Err(Error::dim("conv2d bias", bt.shape(), &[co]));
            }
        }
        let l = oh * ow;
        let ck = ci * kh * kw;
        let mut cols = vec![E::ZERO; b * ck * l];
        for bi in 0..b {
            let img = &x.data()[bi * ci * h * wd..][..ci * h * wd];
            cols[bi * ck * l..][..ck * l]
                .copy_from_slice(&k::im2col(img, ci, h, wd, kh, kw, stride, pad, oh, ow));
        }
        let (mut out, _) = k::matmul(w.data(), &[co, ck], &cols, &[b, ck, l])?;
        if let Some(bt) = bias {
            for img in out.chunks_mut(co * l) {
                for (c_idx, row) in img.chunks_mut(l).enumerate() {
                    let bv = bt.data()[c_idx];
                    for v in row.iter_mut() {
                        *v += bv;
                    }
                }
            }
        }
        let xx = self.arg(x)?;
        let ww = self.arg(w)?;
        let bb = bias.map(|t| self.arg(t)).transpose()?;
        let tracked = xx.node.is_some()
            || ww.node.is_some()
            || bb.as_ref().is_some_and(|a| a.node.is_some());
        Ok(self.emit(out, vec![b, co, oh, ow], tracked, move || Op::Conv2d {
            x: xx,
            w: ww,
            bias: bb,
            stride,
            pad,
        }))
    }

    /// Transpose (adjoint) convolution. x: `[b,ci,h,w]`, w: `[ci,co,kh,kw]`.
    pub fn conv_transpose2d(
        &mut self,
        x: &Tensor<E>,
        w: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<E>> {
        let [b, ci, h, wd] = dims4(x, "conv_transpose2d input")?;
        let [wci, co, kh, kw] = dims4(w, "conv_transpose2d weight")?;
        if ci != wci {
            return Err(Error::dim("conv_transpose2d channels", x.shape(), w.shape()));
        }
        let out_h = k::conv_transpose2d_output_size(h, kh, stride, pad)?;
        let out_w = k::conv_transpose2d_output_size(wd, kw, stride, pad)?;
        if let Some(bt) = bias {
            if bt.shape() != [co] {
                return Err(Error::dim("conv_transpose2d bias", bt.shape(), &[co]));
            }
        }
        let l = h * wd;
        let dk = co * kh * kw;
        // cols[b, co*kh*kw, h*w] = W^T [dk, ci] @ x [b, ci, l]
        let (wt, _) = k::permute(w.data(), &[ci, dk], &[1, 0]);
        let (cols, _) = k::matmul(&wt, &[dk, ci], x.data(), &[b, ci, l])?;
        let mut out = vec![E::ZERO; b * co * out_h * out_w];
        for bi in 0..b {
            let scattered = k::col2im_add(
                &cols[bi * dk * l..][..dk * l],
                co,
                out_h,
                out_w,
                kh,
                kw,
                stride,
                pad,
                h,
                wd,
            );
            out[bi * co * out_h * out_w..][..co * out_h * out_w].copy_from_slice(&scattered);
        }
        if let Some(bt) = bias {
            let hw = out_h * out_w;
            for img in out.chunks_mut(co * hw) {
                for (c_idx, row) in img.chunks_mut(hw).enumerate() {
                    let bv = bt.data()[c_idx];
                    for v in row.iter_mut() {
                        *v += bv;
                    }
                }
            }
        }
        let xx = self.arg(x)?;
        let ww = self.arg(w)?;
        let bb = bias.map(|t| self.arg(t)).transpose()?;
        let tracked = xx.node.is_some()
            || ww.node.is_some()
            || bb.as_ref().is_some_and(|a| a.node.is_some());
        Ok(self.emit(
            out,
            vec![b, co, out_h, out_w],
            tracked,
            move || Op::ConvTranspose2d {
                x: xx,
                w: ww,
                bias: bb,
                stride,
                pad,
            },
        ))
    }

    // -- losses ---------------------------------------------------------------

    /// Mean binary cross-entropy of logits against a constant target value,
    /// computed in the numerically stable softplus form.
    pub fn bce_with_logits(&mut self, logits: &Tensor<E>, target: E) -> Result<Tensor<E>> {
        let n = E::from_f64(logits.numel() as f64);
        let mut total = E::ZERO;
        for &x in logits.data() {
            // max(x,0) - x*t + ln(1 + exp(-|x|))
            let m = if x > E::ZERO { x } else { E::ZERO };
            total += m - x * target + (E::ONE + (-x.abs()).exp()).ln();
        }
        let aa = self.arg(logits)?;
        let tracked = aa.node.is_some();
        Ok(self.emit(vec![total / n], vec![], tracked, move || {
            Op::BceWithLogits {
                logits: aa,
                target,
            }
        }))
    }

    // -- backward ---------------------------------------------------------------

    /// Reverse pass from a scalar loss; returns gradients for every
    /// `requires_grad` leaf reachable from it. A detached loss yields an
    /// empty map.
    pub fn backward(&self, loss: &Tensor<E>) -> Result<Gradients<E>> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        let Some(tr) = loss.node() else {
            return Ok(Gradients::empty());
        };
        if tr.tape != self.id {
            return Err(Error::Contract(
                "loss was recorded on a different tape".into(),
            ));
        }
        let mut bufs: Vec<Option<Vec<E>>> = (0..=tr.node).map(|_| None).collect();
        bufs[tr.node] = Some(vec![E::ONE]);
        let mut by_node = HashMap::new();
        for nid in (0..=tr.node).rev() {
            let Some(grad) = bufs[nid].take() else {
                continue;
            };
            let node = &self.nodes[nid];
            if let Op::Leaf { requires_grad } = node.op {
                if requires_grad {
                    by_node.insert(nid, Tensor::new(grad, &node.shape)?);
                }
                continue;
            }
            self.apply_backward(node, &grad, &mut bufs)?;
        }
        Ok(Gradients {
            tape: self.id,
            by_node,
            leaves: self.leaves.clone(),
        })
    }

    #[allow(clippy::too_many_lines)]
    fn apply_backward(
        &self,
        node: &Node<E>,
        grad: &[E],
        bufs: &mut [Option<Vec<E>>],
    ) -> Result<()> {
        let out_shape = &node.shape;
        match &node.op {
            Op::Leaf { .. } => unreachable!("leaves handled by the caller"),
            Op::Add { a, b } => {
                feed(bufs, a, k::reduce_to_shape(grad, out_shape, &a.shape));
                feed(bufs, b, k::reduce_to_shape(grad, out_shape, &b.shape));
            }
            Op::Sub { a, b } => {
                feed(bufs, a, k::reduce_to_shape(grad, out_shape, &a.shape));
                if b.node.is_some() {
                    let neg: Vec<E> = grad.iter().map(|&g| -g).collect();
                    feed(bufs, b, k::reduce_to_shape(&neg, out_shape, &b.shape));
                }
            }
            Op::Mul { a, b } => {
                if a.node.is_some() {
                    let bx = k::expand_to_shape(&b.data, &b.shape, out_shape);
                    let da: Vec<E> = grad.iter().zip(&bx).map(|(&g, &v)| g * v).collect();
                    feed(bufs, a, k::reduce_to_shape(&da, out_shape, &a.shape));
                }
                if b.node.is_some() {
                    let ax = k::expand_to_shape(&a.data, &a.shape, out_shape);
                    let db: Vec<E> = grad.iter().zip(&ax).map(|(&g, &v)| g * v).collect();
                    feed(bufs, b, k::reduce_to_shape(&db, out_shape, &b.shape));
                }
            }
            Op::Div { a, b } => {
                let bx = k::expand_to_shape(&b.data, &b.shape, out_shape);
                if a.node.is_some() {
                    let da: Vec<E> = grad.iter().zip(&bx).map(|(&g, &v)| g / v).collect();
                    feed(bufs, a, k::reduce_to_shape(&da, out_shape, &a.shape));
                }
                if b.node.is_some() {
                    let ax = k::expand_to_shape(&a.data, &a.shape, out_shape);
                    let db: Vec<E> = grad
                        .iter()
                        .zip(ax.iter().zip(&bx))
                        .map(|(&g, (&av, &bv))| -g * av / (bv * bv))
                        .collect();
                    feed(bufs, b, k::reduce_to_shape(&db, out_shape, &b.shape));
                }
            }
            Op::Scale { a, factor } => {
                feed(bufs, a, grad.iter().map(|&g| g * *factor).collect());
            }
            Op::AddScalar { a } => feed(bufs, a, grad.to_vec()),
            Op::Neg { a } => feed(bufs, a, grad.iter().map(|&g| -g).collect()),
            Op::Relu { a } => {
                let da = grad
                    .iter()
                    .zip(a.data.iter())
                    .map(|(&g, &x)| if x > E::ZERO { g } else { E::ZERO })
                    .collect();
                feed(bufs, a, da);
            }
            Op::LeakyRelu { a, slope } => {
                let da = grad
                    .iter()
                    .zip(a.data.iter())
                    .map(|(&g, &x)| if x > E::ZERO { g } else { g * *slope })
                    .collect();
                feed(bufs, a, da);
            }
            Op::Tanh { a, y } => {
                let da = grad
                    .iter()
                    .zip(y.iter())
                    .map(|(&g, &t)| g * (E::ONE - t * t))
                    .collect();
                feed(bufs, a, da);
            }
            Op::Sigmoid { a, y } => {
                let da = grad
                    .iter()
                    .zip(y.iter())
                    .map(|(&g, &s)| g * s * (E::ONE - s))
                    .collect();
                feed(bufs, a, da);
            }
            Op::Gelu { a } => {
                let da = grad
                    .iter()
                    .zip(a.data.iter())
                    .map(|(&g, &x)| g * gelu_grad_scalar(x))
                    .collect();
                feed(bufs, a, da);
            }
            Op::Sqrt { a, y } => {
                let half = E::from_f64(0.5);
                let da = grad
                    .iter()
                    .zip(y.iter())
                    .map(|(&g, &s)| g * half / s)
                    .collect();
                feed(bufs, a, da);
            }
            Op::Abs { a } => {
                let da = grad
                    .iter()
                    .zip(a.data.iter())
                    .map(|(&g, &x)| {
                        if x > E::ZERO {
                            g
                        } else if x < E::ZERO {
                            -g
                        } else {
                            E::ZERO
                        }
                    })
                    .collect();
                feed(bufs, a, da);
            }
            Op::Matmul { a, b } => {
                if a.node.is_some() {
                    let bt = transpose_last(&b.data, &b.shape);
                    let (da, da_shape) =
                        k::matmul(grad, out_shape, &bt.0, &bt.1)?;
                    feed(bufs, a, k::reduce_to_shape(&da, &da_shape, &a.shape));
                }
                if b.node.is_some() {
                    let at = transpose_last(&a.data, &a.shape);
                    let (db, db_shape) =
                        k::matmul(&at.0, &at.1, grad, out_shape)?;
                    feed(bufs, b, k::reduce_to_shape(&db, &db_shape, &b.shape));
                }
            }
            Op::Softmax { a, y, axis } => {
                // dx = (g - sum(g*y over axis)) * y
                let axis_len = out_shape[*axis];
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let outer: usize = out_shape[..*axis].iter().product();
                let mut da = vec![E::ZERO; grad.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis_len * inner + i;
                        let mut dot = E::ZERO;
                        for ax in 0..axis_len {
                            let idx = base + ax * inner;
                            dot += grad[idx] * y[idx];
                        }
                        for ax in 0..axis_len {
                            let idx = base + ax * inner;
                            da[idx] = (grad[idx] - dot) * y[idx];
                        }
                    }
                }
                feed(bufs, a, da);
            }
            Op::SumAll { a } => {
                let g = grad[0];
                feed(bufs, a, vec![g; numel(&a.shape)]);
            }
            Op::SumAxes { a, out_shape: kept } => {
                feed(bufs, a, k::expand_to_shape(grad, kept, &a.shape));
            }
            Op::Reshape { a } => feed(bufs, a, grad.to_vec()),
            Op::Permute { a, perm } => {
                let inv = k::invert_permutation(perm);
                let (da, _) = k::permute(grad, out_shape, &inv);
                feed(bufs, a, da);
            }
            Op::Concat { parts, axis } => {
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[*axis + 1..].iter().product();
                let total_axis = out_shape[*axis];
                let mut offset = 0;
                for part in parts {
                    let la = part.shape[*axis];
                    if part.node.is_some() {
                        let mut dp = vec![E::ZERO; numel(&part.shape)];
                        for o in 0..outer {
                            let src = &grad[(o * total_axis + offset) * inner..][..la * inner];
                            dp[o * la * inner..][..la * inner].copy_from_slice(src);
                        }
                        feed(bufs, part, dp);
                    }
                    offset += la;
                }
            }
            Op::ExtractPatches { a, patch } => {
                let (b, c, h, w) = (a.shape[0], a.shape[1], a.shape[2], a.shape[3]);
                feed(bufs, a, k::merge_patches(grad, b, c, h, w, *patch));
            }
            Op::MergePatches {
                a,
                patch,
                channels,
                height,
                width,
            } => {
                let b = a.shape[0];
                feed(
                    bufs,
                    a,
                    k::extract_patches(grad, b, *channels, *height, *width, *patch),
                );
            }
            Op::GatherRows { table, indices } => {
                let d = table.shape[1];
                let mut dt = vec![E::ZERO; numel(&table.shape)];
                for (row, &idx) in indices.iter().enumerate() {
                    let src = &grad[row * d..][..d];
                    let dst = &mut dt[idx * d..][..d];
                    for (o, &g) in dst.iter_mut().zip(src) {
                        *o += g;
                    }
                }
                feed(bufs, table, dt);
            }
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => {
                let (b, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let (co, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
                let (oh, ow) = (out_shape[2], out_shape[3]);
                let l = oh * ow;
                let ck = ci * kh * kw;
                if x.node.is_some() {
                    // dX = col2im(W^T @ dY)
                    let (wt, _) = k::permute(&w.data, &[co, ck], &[1, 0]);
                    let (dcols, _) = k::matmul(&wt, &[ck, co], grad, &[b, co, l])?;
                    let mut dx = vec![E::ZERO; numel(&x.shape)];
                    for bi in 0..b {
                        let img = k::col2im_add(
                            &dcols[bi * ck * l..][..ck * l],
                            ci,
                            h,
                            wd,
                            kh,
                            kw,
                            *stride,
                            *pad,
                            oh,
                            ow,
                        );
                        dx[bi * ci * h * wd..][..ci * h * wd].copy_from_slice(&img);
                    }
                    feed(bufs, x, dx);
                }
                if w.node.is_some() {
                    // dW = sum_b dY_b @ cols_b^T
                    let mut dw = vec![E::ZERO; numel(&w.shape)];
                    for bi in 0..b {
                        let img = &x.data[bi * ci * h * wd..][..ci * h * wd];
                        let cols = k::im2col(img, ci, h, wd, kh, kw, *stride, *pad, oh, ow);
                        let (cols_t, _) = k::permute(&cols, &[ck, l], &[1, 0]);
                        let (dwi, _) =
                            k::matmul(&grad[bi * co * l..][..co * l], &[co, l], &cols_t, &[l, ck])?;
                        for (o, v) in dw.iter_mut().zip(dwi) {
                            *o += v;
                        }
                    }
                    feed(bufs, w, dw);
                }
                if let Some(bt) = bias {
                    if bt.node.is_some() {
                        let mut db = vec![E::ZERO; co];
                        for img in grad.chunks(co * l) {
                            for (c_idx, row) in img.chunks(l).enumerate() {
                                for &g in row {
                                    db[c_idx] += g;
                                }
                            }
                        }
                        feed(bufs, bt, db);
                    }
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                bias,
                stride,
                pad,
            } => {
                let (b, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
                let (co, kh, kw) = (w.shape[1], w.shape[2], w.shape[3]);
                let (out_h, out_w) = (out_shape[2], out_shape[3]);
                let l = h * wd;
                let dk = co * kh * kw;
                // Both rules consume im2col of the output gradient.
                let mut cols_all = vec![E::ZERO; b * dk * l];
                for bi in 0..b {
                    let g_img = &grad[bi * co * out_h * out_w..][..co * out_h * out_w];
                    cols_all[bi * dk * l..][..dk * l].copy_from_slice(&k::im2col(
                        g_img, co, out_h, out_w, kh, kw, *stride, *pad, h, wd,
                    ));
                }
                if x.node.is_some() {
                    let (dx, _) = k::matmul(&w.data, &[ci, dk], &cols_all, &[b, dk, l])?;
                    feed(bufs, x, dx);
                }
                if w.node.is_some() {
                    let mut dw = vec![E::ZERO; numel(&w.shape)];
                    for bi in 0..b {
                        let (cols_t, _) =
                            k::permute(&cols_all[bi * dk * l..][..dk * l], &[dk, l], &[1, 0]);
                        let (dwi, _) = k::matmul(
                            &x.data[bi * ci * l..][..ci * l],
                            &[ci, l],
                            &cols_t,
                            &[l, dk],
                        )?;
                        for (o, v) in dw.iter_mut().zip(dwi) {
                            *o += v;
                        }
                    }
                    feed(bufs, w, dw);
                }
                if let Some(bt) = bias {
                    if bt.node.is_some() {
                        let hw = out_h * out_w;
                        let mut db = vec![E::ZERO; co];
                        for img in grad.chunks(co * hw) {
                            for (c_idx, row) in img.chunks(hw).enumerate() {
                                for &g in row {
                                    db[c_idx] += g;
                                }
                            }
                        }
                        feed(bufs, bt, db);
                    }
                }
            }
            Op::BceWithLogits { logits, target } => {
                let n = E::from_f64(logits.data.len() as f64);
                let g = grad[0];
                let da = logits
                    .data
                    .iter()
                    .map(|&x| g * (sigmoid_scalar(x) - *target) / n)
                    .collect();
                feed(bufs, logits, da);
            }
        }
        Ok(())
    }
}

/// Accumulate a contribution into an input's gradient buffer.
fn feed<E: Element>(bufs: &mut [Option<Vec<E>>], arg: &Arg<E>, contrib: Vec<E>) {
    let Some(node) = arg.node else { return };
    match &mut bufs[node] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn dims4<E: Element>(t: &Tensor<E>, what: &'static str) -> Result<[usize; 4]> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::dim(what, s, &[0, 0, 0, 0]));
    }
    Ok([s[0], s[1], s[2], s[3]])
}

fn transpose_last<E: Element>(data: &[E], shape: &[usize]) -> (Vec<E>, Vec<usize>) {
    let mut perm: Vec<usize> = (0..shape.len()).collect();
    let r = shape.len();
    perm.swap(r - 2, r - 1);
    k::permute(data, shape, &perm)
}

fn sigmoid_scalar<E: Element>(x: E) -> E {
    if x > E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

/// tanh-approximation GELU; the backward rule below is its exact derivative.
fn gelu_scalar<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (E::ONE + u.tanh())
}

fn gelu_grad_scalar<E: Element>(x: E) -> E {
    let c = E::from_f64(0.797_884_560_802_865_4);
    let a = E::from_f64(0.044_715);
    let half = E::from_f64(0.5);
    let three = E::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = E::ONE - t * t;
    half * (E::ONE + t) + half * x * sech2 * c * (E::ONE + three * a * x * x)
}
