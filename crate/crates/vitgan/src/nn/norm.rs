//! Batch and layer normalization, composed from differentiable
//! primitives so their gradients come from the tape.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor};

/// Per-channel normalization over (batch, height, width) with running
/// statistics for inference. Training requires batch size >= 2.
#[derive(Clone)]
pub struct BatchNorm2d<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub running_mean: Tensor<E>,
    pub running_var: Tensor<E>,
    pub eps: f64,
    pub momentum: f64,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::ones(&[channels]).with_requires_grad(),
            beta: Tensor::zeros(&[channels]).with_requires_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape()[0]
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::dim("batch_norm", shape, &[0, self.channels(), 0, 0]));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let gamma = tape.reshape(&self.gamma, &[1, c, 1, 1])?;
        let beta = tape.reshape(&self.beta, &[1, c, 1, 1])?;

        let x_hat = if training {
            if b < 2 {
                return Err(Error::Contract(
                    "batch_norm in training mode requires batch size >= 2".into(),
                ));
            }
            let mu = tape.mean_axes(x, &[0, 2, 3])?;
            let centered = tape.sub(x, &mu)?;
            let var = {
                let sq = tape.mul(&centered, &centered)?;
                tape.mean_axes(&sq, &[0, 2, 3])?
            };
            self.update_running(&mu, &var, b * h * w);
            let std = {
                let v = tape.add_scalar(&var, E::from_f64(self.eps))?;
                tape.sqrt(&v)?
            };
            tape.div(&centered, &std)?
        } else {
            let rm = tape.reshape(&self.running_mean, &[1, c, 1, 1])?;
            let rv = tape.reshape(&self.running_var, &[1, c, 1, 1])?;
            let centered = tape.sub(x, &rm)?;
            let std = {
                let v = tape.add_scalar(&rv, E::from_f64(self.eps))?;
                tape.sqrt(&v)?
            };
            tape.div(&centered, &std)?
        };
        let scaled = tape.mul(&x_hat, &gamma)?;
        tape.add(&scaled, &beta)
    }

    /// Exponential moving average with the unbiased batch variance.
    fn update_running(&mut self, mu: &Tensor<E>, var: &Tensor<E>, n: usize) {
        let m = self.momentum;
        let correction = n as f64 / (n as f64 - 1.0);
        let rm: Vec<E> = self
            .running_mean
            .data()
            .iter()
            .zip(mu.data())
            .map(|(&r, &b)| E::from_f64(r.to_f64() * (1.0 - m) + b.to_f64() * m))
            .collect();
        let rv: Vec<E> = self
            .running_var
            .data()
            .iter()
            .zip(var.data())
            .map(|(&r, &b)| E::from_f64(r.to_f64() * (1.0 - m) + b.to_f64() * correction * m))
            .collect();
        let c = self.channels();
        self.running_mean = Tensor::new(rm, &[c]).expect("channel count");
        self.running_var = Tensor::new(rv, &[c]).expect("channel count");
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }

    /// Running statistics; persisted but never optimized.
    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        vec![
            ("running_mean".into(), &self.running_mean),
            ("running_var".into(), &self.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        vec![
            ("running_mean".into(), &mut self.running_mean),
            ("running_var".into(), &mut self.running_var),
        ]
    }
}

/// Normalization over the last axis with learnable scale and shift.
#[derive(Clone)]
pub struct LayerNorm<E: Element> {
    pub gamma: Tensor<E>,
    pub beta: Tensor<E>,
    pub eps: f64,
}

impl<E: Element> LayerNorm<E> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: Tensor::ones(&[dim]).with_requires_grad(),
            beta: Tensor::zeros(&[dim]).with_requires_grad(),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let dim = self.gamma.shape()[0];
        if x.shape().last() != Some(&dim) {
            return Err(Error::dim("layer_norm", x.shape(), &[dim]));
        }
        let last = x.rank() - 1;
        let mu = tape.mean_axes(x, &[last])?;
        let centered = tape.sub(x, &mu)?;
        let var = {
            let sq = tape.mul(&centered, &centered)?;
            tape.mean_axes(&sq, &[last])?
        };
        let std = {
            let v = tape.add_scalar(&var, E::from_f64(self.eps))?;
            tape.sqrt(&v)?
        };
        let x_hat = tape.div(&centered, &std)?;
        let scaled = tape.mul(&x_hat, &self.gamma)?;
        tape.add(&scaled, &self.beta)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        vec![("gamma".into(), &self.gamma), ("beta".into(), &self.beta)]
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        vec![
            ("gamma".into(), &mut self.gamma),
            ("beta".into(), &mut self.beta),
        ]
    }
}
