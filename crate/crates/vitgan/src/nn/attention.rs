//! Scaled dot-product attention, multi-head attention, and the
//! pre-norm transformer encoder layer.

use super::{prefixed, Activation, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "d_model {d_model} must be a positive multiple of heads {heads}"
            )));
        }
        Ok(AttentionConfig { d_model, heads })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// softmax(Q K^T / sqrt(d_k)) V over the last two axes; any leading
/// batch dimensions are carried through.
pub fn attention<E: Element>(
    tape: &mut Tape<E>,
    q: &Tensor<E>,
    k: &Tensor<E>,
    v: &Tensor<E>,
) -> Result<Tensor<E>> {
    if q.shape() != k.shape() || q.shape() != v.shape() || q.rank() < 2 {
        return Err(Error::dim("attention", q.shape(), k.shape()));
    }
    let d_k = *q.shape().last().expect("rank >= 2");
    let rank = q.rank();
    let k_t = tape.transpose(k, rank - 2, rank - 1)?;
    let scores = tape.matmul(q, &k_t)?;
    let scaled = tape.scale(&scores, E::from_f64(1.0 / (d_k as f64).sqrt()))?;
    let weights = tape.softmax(&scaled, rank - 1)?;
    tape.matmul(&weights, v)
}

/// H independent attention heads over learned projections, concatenated
/// and mixed by an output projection.
#[derive(Clone)]
pub struct MultiHeadAttention<E: Element> {
    pub cfg: AttentionConfig,
    pub wq: Linear<E>,
    pub wk: Linear<E>,
    pub wv: Linear<E>,
    pub wo: Linear<E>,
}

impl<E: Element> MultiHeadAttention<E> {
    pub fn new(cfg: AttentionConfig, rng: &mut Rng) -> Self {
        let d = cfg.d_model;
        MultiHeadAttention {
            cfg,
            wq: Linear::new(d, d, rng),
            wk: Linear::new(d, d, rng),
            wv: Linear::new(d, d, rng),
            wo: Linear::new(d, d, rng),
        }
    }

    /// x: `[b, t, d_model]` -> `[b, t, d_model]`. Head h consumes columns
    /// [h*d_k, (h+1)*d_k) of each projection.
    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.cfg.d_model {
            return Err(Error::dim("multi_head_attention", shape, &[0, 0, self.cfg.d_model]));
        }
        let (b, t) = (shape[0], shape[1]);
        let (h, dk) = (self.cfg.heads, self.cfg.head_dim());

        let q = self.wq.forward(tape, x)?;
        let k = self.wk.forward(tape, x)?;
        let v = self.wv.forward(tape, x)?;

        let split = |tape: &mut Tape<E>, y: &Tensor<E>| -> Result<Tensor<E>> {
            let y = tape.reshape(y, &[b, t, h, dk])?;
            let y = tape.permute(&y, &[0, 2, 1, 3])?;
            tape.reshape(&y, &[b * h, t, dk])
        };
        let qh = split(tape, &q)?;
        let kh = split(tape, &k)?;
        let vh = split(tape, &v)?;

        let heads = attention(tape, &qh, &kh, &vh)?;
        let heads = tape.reshape(&heads, &[b, h, t, dk])?;
        let heads = tape.permute(&heads, &[0, 2, 1, 3])?;
        let merged = tape.reshape(&heads, &[b, t, self.cfg.d_model])?;
        self.wo.forward(tape, &merged)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("wq", self.wq.params());
        out.extend(prefixed("wk", self.wk.params()));
        out.extend(prefixed("wv", self.wv.params()));
        out.extend(prefixed("wo", self.wo.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("wq", self.wq.params_mut());
        out.extend(prefixed("wk", self.wk.params_mut()));
        out.extend(prefixed("wv", self.wv.params_mut()));
        out.extend(prefixed("wo", self.wo.params_mut()));
        out
    }
}

/// Pre-norm encoder block: x + MHA(LN(x)), then + MLP(LN(.)).
#[derive(Clone)]
pub struct EncoderLayer<E: Element> {
    pub ln1: LayerNorm<E>,
    pub attn: MultiHeadAttention<E>,
    pub ln2: LayerNorm<E>,
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
    pub activation: Activation,
}

impl<E: Element> EncoderLayer<E> {
    pub fn new(cfg: AttentionConfig, mlp_ratio: usize, activation: Activation, rng: &mut Rng) -> Self {
        let d = cfg.d_model;
        let hidden = d * mlp_ratio;
        EncoderLayer {
            ln1: LayerNorm::new(d),
            attn: MultiHeadAttention::new(cfg, rng),
            ln2: LayerNorm::new(d),
            fc1: Linear::new(d, hidden, rng),
            fc2: Linear::new(hidden, d, rng),
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape<E>, x: &Tensor<E>) -> Result<Tensor<E>> {
        let normed = self.ln1.forward(tape, x)?;
        let attended = self.attn.forward(tape, &normed)?;
        let x = tape.add(x, &attended)?;

        let normed = self.ln2.forward(tape, &x)?;
        let hidden = self.fc1.forward(tape, &normed)?;
        let hidden = self.activation.apply(tape, &hidden)?;
        let mlp = self.fc2.forward(tape, &hidden)?;
        tape.add(&x, &mlp)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("ln1", self.ln1.params());
        out.extend(prefixed("attn", self.attn.params()));
        out.extend(prefixed("ln2", self.ln2.params()));
        out.extend(prefixed("fc1", self.fc1.params()));
        out.extend(prefixed("fc2", self.fc2.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("ln1", self.ln1.params_mut());
        out.extend(prefixed("attn", self.attn.params_mut()));
        out.extend(prefixed("ln2", self.ln2.params_mut()));
        out.extend(prefixed("fc1", self.fc1.params_mut()));
        out.extend(prefixed("fc2", self.fc2.params_mut()));
        out
    }
}
