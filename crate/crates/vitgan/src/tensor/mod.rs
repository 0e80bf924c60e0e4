//! N-dimensional tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable row-major array of `f32` or `f64` values.
//! Differentiable computation goes through a [`Tape`]: operations record
//! the information needed for their backward rule, [`Tape::backward`]
//! replays the records in reverse and returns a [`Gradients`] map for
//! every leaf that was marked as requiring gradients.
//!
//! Training runs in `f32`; gradient-check tests instantiate the same code
//! with `f64` so the finite-difference oracle is noise-free.

mod kernels;
mod tape;

pub use kernels::{broadcast_shapes, conv2d_output_size, conv_transpose2d_output_size};
pub use tape::{Gradients, NodeId, Tape};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar types the engine computes with.
pub trait Element:
    Copy
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + PartialEq
    + PartialOrd
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    const DTYPE: Dtype;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! impl_element {
    ($ty:ty, $dtype:expr, $bytes:expr) => {
        impl Element for $ty {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const DTYPE: Dtype = $dtype;
            const BYTES: usize = $bytes;

            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> Self {
                <$ty>::from_le_bytes(bytes.try_into().expect("element byte width"))
            }
        }
    };
}

impl_element!(f32, Dtype::F32, 4);
impl_element!(f64, Dtype::F64, 8);

/// On-disk element tag used by the checkpoint container.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U64,
}

impl Dtype {
    pub fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
            Dtype::U64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            2 => Ok(Dtype::U64),
            other => Err(Error::Load(format!("unknown dtype tag {other}"))),
        }
    }
}

/// Identity of a tensor value; clones share it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(u64);

fn next_tensor_id() -> TensorId {
    static NEXT: AtomicU64 = AtomicU64::new(1);
    TensorId(NEXT.fetch_add(1, Ordering::Relaxed))
}

/// Handle tying an op output back to the tape that recorded it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TapeRef {
    pub tape: u64,
    pub node: NodeId,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[derive(Clone)]
pub struct Tensor<E: Element> {
    id: TensorId,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    node: Option<TapeRef>,
    grad: Option<Arc<Vec<E>>>,
}

impl<E: Element> Tensor<E> {
    pub fn new(data: Vec<E>, shape: &[usize]) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Tensor {
            id: next_tensor_id(),
            shape: shape.to_vec(),
            data: Arc::new(data),
            requires_grad: false,
            node: None,
            grad: None,
        })
    }

    /// Output of a recorded tape operation.
    pub(crate) fn from_op(data: Vec<E>, shape: Vec<usize>, node: Option<TapeRef>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by a forward op"
        );
        Tensor {
            id: next_tensor_id(),
            shape,
            data: Arc::new(data),
            requires_grad: false,
            node,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(vec![E::ZERO; numel(shape)], shape).expect("consistent by construction")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, E::ONE)
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Tensor::new(vec![value; numel(shape)], shape).expect("consistent by construction")
    }

    pub fn scalar(value: E) -> Self {
        Tensor::new(vec![value], &[]).expect("consistent by construction")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let data = (0..numel(shape)).map(&mut f).collect();
        Tensor::new(data, shape).expect("consistent by construction")
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<E>> {
        Arc::clone(&self.data)
    }

    pub(crate) fn node(&self) -> Option<TapeRef> {
        self.node
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Mark this tensor as a differentiable leaf.
    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    /// A copy sharing the same storage but cut off from any tape.
    pub fn detach(&self) -> Self {
        Tensor {
            id: next_tensor_id(),
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            requires_grad: false,
            node: None,
            grad: None,
        }
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref().map(|v| v.as_slice())
    }

    /// Populate the `grad` field from a backward pass, when present.
    pub fn set_grad_from(&mut self, grads: &Gradients<E>) {
        self.grad = grads.wrt(self).map(|g| {
            debug_assert_eq!(g.numel(), self.numel());
            g.data_arc()
        });
    }

    /// Value-level equality of shape and bits.
    pub fn same_values(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_f64().to_bits() == b.to_f64().to_bits())
    }

    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.data.iter().map(|v| F::from_f64(v.to_f64())).collect();
        let mut t = Tensor::new(data, &self.shape).expect("same shape");
        t.requires_grad = self.requires_grad;
        t
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.numel() <= 16 {
            write!(f, " {:?}", &self.data[..])?;
        }
        Ok(())
    }
}
