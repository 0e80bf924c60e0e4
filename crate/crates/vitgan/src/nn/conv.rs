//! Convolution layers (cross-correlation semantics).

use super::{kaiming_uniform, zeros_param};
use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor};

#[derive(Clone)]
pub struct Conv2d<E: Element> {
    /// `[out_channels, in_channels, kh, kw]`
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub pad: usize,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Conv2d {
            weight: kaiming_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
            bias: bias.then(|| zeros_param(&[out_ch])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        tape.conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.pad)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            out.push(("bias".into(), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push(("bias".into(), b));
        }
        out
    }
}

#[derive(Clone)]
pub struct ConvTranspose2d<E: Element> {
    /// `[in_channels, out_channels, kh, kw]`
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub stride: usize,
    pub pad: usize,
}

impl<E: Element> ConvTranspose2d<E> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        ConvTranspose2d {
            weight: kaiming_uniform(&[in_ch, out_ch, kernel, kernel], fan_in, rng),
            bias: bias.then(|| zeros_param(&[out_ch])),
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        tape.conv_transpose2d(x, &self.weight, self.bias.as_ref(), self.stride, self.pad)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = vec![("weight".to_string(), &self.weight)];
        if let Some(b) = &self.bias {
            out.push(("bias".into(), b));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = vec![("weight".to_string(), &mut self.weight)];
        if let Some(b) = &mut self.bias {
            out.push(("bias".into(), b));
        }
        out
    }
}
