//! Learnable layers.
//!
//! Layers own plain tensors and expose `params` / `params_mut` visitors
//! yielding `(name, tensor)` pairs in a stable order; optimizers and the
//! checkpoint container rely on that order and those names. Forward
//! methods thread a [`Tape`] explicitly. All weight tensors are created
//! with `requires_grad`; running statistics are plain buffers.

mod attention;
mod conv;
mod norm;

pub use attention::{attention, AttentionConfig, EncoderLayer, MultiHeadAttention};
pub use conv::{Conv2d, ConvTranspose2d};
pub use norm::{BatchNorm2d, LayerNorm};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor};

/// MLP activation used inside transformer blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub(crate) fn apply<E: Element>(self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        match self {
            Activation::Gelu => tape.gelu(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Truncated normal init (two-sigma cut), the transformer default.
pub fn trunc_normal<E: Element>(shape: &[usize], sigma: f64, rng: &mut Rng) -> Tensor<E> {
    Tensor::from_fn(shape, |_| E::from_f64(rng.trunc_normal(sigma))).with_requires_grad()
}

/// He-uniform init over the fan-in, the conv default.
pub fn kaiming_uniform<E: Element>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<E> {
    let bound = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| E::from_f64(rng.uniform_in(-bound, bound))).with_requires_grad()
}

pub(crate) fn zeros_param<E: Element>(shape: &[usize]) -> Tensor<E> {
    Tensor::zeros(shape).with_requires_grad()
}

/// Prefix child parameter names with `prefix.`.
pub fn prefixed<T>(prefix: &str, items: Vec<(String, T)>) -> Vec<(String, T)> {
    items
        .into_iter()
        .map(|(name, t)| (format!("{prefix}.{name}"), t))
        .collect()
}

/// Affine map y = x W + b with W stored as [in, out].
#[derive(Clone)]
pub struct Linear<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: trunc_normal(&[in_dim, out_dim], 0.02, rng),
            bias: zeros_param(&[out_dim]),
        }
    }

    /// Identity-initialized square layer, used by tests.
    pub fn identity(dim: usize) -> Self {
        let weight = Tensor::from_fn(&[dim, dim], |i| {
            if i / dim == i % dim {
                E::ONE
            } else {
                E::ZERO
            }
        })
        .with_requires_grad();
        Linear {
            weight,
            bias: zeros_param(&[dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        if x.shape().last() != Some(&self.in_dim()) {
            return Err(Error::dim("linear", x.shape(), self.weight.shape()));
        }
        let y = tape.matmul(x, &self.weight)?;
        tape.add(&y, &self.bias)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        vec![
            ("weight".into(), &self.weight),
            ("bias".into(), &self.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        vec![
            ("weight".into(), &mut self.weight),
            ("bias".into(), &mut self.bias),
        ]
    }
}

/// Row lookup into a learnable table, scatter-add on the way back.
#[derive(Clone)]
pub struct Embedding<E: Element> {
    pub table: Tensor<E>,
}

impl<E: Element> Embedding<E> {
    pub fn new(rows: usize, dim: usize, rng: &mut Rng) -> Self {
        Embedding {
            table: trunc_normal(&[rows, dim], 0.02, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, indices: &[usize]) -> Result<Tensor<E>> {
        tape.gather_rows(&self.table, indices)
    }
}
