//! Conditional Markovian discriminators.
//!
//! Both variants consume the channel-concatenation of a condition image
//! and a candidate image and emit an N x N grid of raw real/fake logits,
//! each logit covering one local receptive field. The conv variant is
//! the standard stacked stride-2 layout; the transformer variant swaps
//! the conv trunk for patch embeddings plus encoder layers, with a final
//! conv classifier.

use crate::error::{Error, Result};
use crate::nn::{
    prefixed, Activation, AttentionConfig, BatchNorm2d, Conv2d, EncoderLayer, Linear, trunc_normal,
};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DiscriminatorVariant {
    ConvPatch,
    TransformerPatch {
        patch_size: usize,
        embed_dim: usize,
        num_layers: usize,
        num_heads: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscriminatorConfig {
    pub variant: DiscriminatorVariant,
    pub input_size: usize,
    pub condition_channels: usize,
    pub image_channels: usize,
    pub base_channels: usize,
    pub num_downsamples: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            variant: DiscriminatorVariant::ConvPatch,
            input_size: 64,
            condition_channels: 3,
            image_channels: 3,
            base_channels: 64,
            num_downsamples: 3,
        }
    }
}

impl DiscriminatorConfig {
    pub fn in_channels(&self) -> usize {
        self.condition_channels + self.image_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.condition_channels == 0 || self.image_channels == 0 || self.base_channels == 0 {
            return Err(Error::Config("discriminator channel counts must be positive".into()));
        }
        match &self.variant {
            DiscriminatorVariant::ConvPatch => {
                if self.num_downsamples == 0 {
                    return Err(Error::Config("num_downsamples must be >= 1".into()));
                }
                let div = 1usize << self.num_downsamples;
                if !self.input_size.is_multiple_of(div) {
                    return Err(Error::Config(format!(
                        "input size {} not divisible by 2^{}",
                        self.input_size, self.num_downsamples
                    )));
                }
                if self.input_size / div < 3 {
                    return Err(Error::Config(format!(
                        "input size {} collapses below a 1x1 grid after {} downsamples",
                        self.input_size, self.num_downsamples
                    )));
                }
            }
            DiscriminatorVariant::TransformerPatch {
                patch_size,
                embed_dim,
                num_heads,
                num_layers,
            } => {
                if *patch_size == 0 || !self.input_size.is_multiple_of(*patch_size) {
                    return Err(Error::Config(format!(
                        "input size {} not divisible by discriminator patch size {patch_size}",
                        self.input_size
                    )));
                }
                if *num_layers == 0 {
                    return Err(Error::Config("transformer discriminator needs >= 1 layer".into()));
                }
                AttentionConfig::new(*embed_dim, *num_heads)?;
            }
        }
        Ok(())
    }

    /// Side length of the output logit grid, by the closed-form size
    /// arithmetic of the chosen variant.
    pub fn output_grid(&self) -> usize {
        match &self.variant {
            // nd stride-2 convs (k4 p1) halve each time; the two stride-1
            // k4 p1 convs each shave one pixel.
            DiscriminatorVariant::ConvPatch => self.input_size / (1 << self.num_downsamples) - 2,
            DiscriminatorVariant::TransformerPatch { patch_size, .. } => {
                self.input_size / patch_size
            }
        }
    }
}

/// Raw per-patch logits, `[b, 1, N, N]`; no sigmoid is baked in.
pub struct PatchScoreMap<E: Element> {
    pub logits: Tensor<E>,
}

impl<E: Element> PatchScoreMap<E> {
    pub fn grid(&self) -> (usize, usize) {
        let s = self.logits.shape();
        (s[2], s[3])
    }
}

#[derive(Clone)]
struct ConvTrunk<E: Element> {
    downs: Vec<Conv2d<E>>,
    down_norms: Vec<Option<BatchNorm2d<E>>>,
    mid: Conv2d<E>,
    mid_norm: BatchNorm2d<E>,
    head: Conv2d<E>,
}

#[derive(Clone)]
struct TransformerTrunk<E: Element> {
    patch_size: usize,
    embed_dim: usize,
    embed: Linear<E>,
    pos_embedding: Tensor<E>,
    encoders: Vec<EncoderLayer<E>>,
    head: Conv2d<E>,
}

#[derive(Clone)]
enum Trunk<E: Element> {
    Conv(ConvTrunk<E>),
    Transformer(TransformerTrunk<E>),
}

#[derive(Clone)]
pub struct Discriminator<E: Element> {
    pub cfg: DiscriminatorConfig,
    trunk: Trunk<E>,
}

impl<E: Element> Discriminator<E> {
    pub fn new(cfg: DiscriminatorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let trunk = match &cfg.variant {
            DiscriminatorVariant::ConvPatch => {
                let mut downs = Vec::new();
                let mut down_norms: Vec<Option<BatchNorm2d<E>>> = Vec::new();
                let mut ch_in = cfg.in_channels();
                let mut ch_out = cfg.base_channels;
                for i in 0..cfg.num_downsamples {
                    downs.push(Conv2d::new(ch_in, ch_out, 4, 2, 1, true, rng));
                    down_norms.push((i > 0).then(|| BatchNorm2d::new(ch_out)));
                    ch_in = ch_out;
                    ch_out *= 2;
                }
                let mid = Conv2d::new(ch_in, ch_out, 4, 1, 1, true, rng);
                let mid_norm = BatchNorm2d::new(ch_out);
                let head = Conv2d::new(ch_out, 1, 4, 1, 1, true, rng);
                Trunk::Conv(ConvTrunk {
                    downs,
                    down_norms,
                    mid,
                    mid_norm,
                    head,
                })
            }
            DiscriminatorVariant::TransformerPatch {
                patch_size,
                embed_dim,
                num_layers,
                num_heads,
            } => {
                let attn = AttentionConfig::new(*embed_dim, *num_heads)?;
                let grid = cfg.input_size / patch_size;
                let row = cfg.in_channels() * patch_size * patch_size;
                Trunk::Transformer(TransformerTrunk {
                    patch_size: *patch_size,
                    embed_dim: *embed_dim,
                    embed: Linear::new(row, *embed_dim, rng),
                    pos_embedding: trunc_normal(&[grid * grid, *embed_dim], 0.02, rng),
                    encoders: (0..*num_layers)
                        .map(|_| EncoderLayer::new(attn, 4, Activation::Gelu, rng))
                        .collect(),
                    head: Conv2d::new(*embed_dim, 1, 1, 1, 0, true, rng),
                })
            }
        };
        Ok(Discriminator { cfg, trunk })
    }

    /// Score condition/candidate pairs; the two images must share batch
    /// and spatial dimensions.
    pub fn discriminate(
        &mut self,
        tape: &mut Tape<E>,
        condition: &Tensor<E>,
        candidate: &Tensor<E>,
        training: bool,
    ) -> Result<PatchScoreMap<E>> {
        if condition.rank() != 4 || candidate.rank() != 4 {
            return Err(Error::dim("discriminate", condition.shape(), candidate.shape()));
        }
        let (cs, xs) = (condition.shape(), candidate.shape());
        if cs[0] != xs[0] || cs[2] != xs[2] || cs[3] != xs[3] {
            return Err(Error::dim("discriminate", cs, xs));
        }
        if cs[1] != self.cfg.condition_channels
            || xs[1] != self.cfg.image_channels
            || cs[2] != self.cfg.input_size
        {
            return Err(Error::Config(format!(
                "discriminator configured for {}x{} with {}+{} channels, got {:?} and {:?}",
                self.cfg.input_size,
                self.cfg.input_size,
                self.cfg.condition_channels,
                self.cfg.image_channels,
                cs,
                xs
            )));
        }
        let x = tape.concat(&[condition, candidate], 1)?;
        let logits = match &mut self.trunk {
            Trunk::Conv(t) => {
                let slope = E::from_f64(0.2);
                let mut h = x;
                for (conv, norm) in t.downs.iter().zip(t.down_norms.iter_mut()) {
                    h = conv.forward(tape, &h)?;
                    if let Some(bn) = norm {
                        h = bn.forward(tape, &h, training)?;
                    }
                    h = tape.leaky_relu(&h, slope)?;
                }
                h = t.mid.forward(tape, &h)?;
                h = t.mid_norm.forward(tape, &h, training)?;
                h = tape.leaky_relu(&h, slope)?;
                t.head.forward(tape, &h)?
            }
            Trunk::Transformer(t) => {
                let b = x.shape()[0];
                let grid = self.cfg.input_size / t.patch_size;
                let patches = tape.extract_patches(&x, t.patch_size)?;
                let tok = t.embed.forward(tape, &patches)?;
                let mut tok = tape.add(&tok, &t.pos_embedding)?;
                for enc in &t.encoders {
                    tok = enc.forward(tape, &tok)?;
                }
                let spatial = tape.permute(&tok, &[0, 2, 1])?;
                let spatial = tape.reshape(&spatial, &[b, t.embed_dim, grid, grid])?;
                t.head.forward(tape, &spatial)?
            }
        };
        Ok(PatchScoreMap { logits })
    }

    /// Detached-parameter copy for scoring inside the generator step.
    pub fn frozen(&self) -> Self {
        let mut d = self.clone();
        for (_, t) in d.params_mut() {
            *t = t.detach();
        }
        d
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        match &self.trunk {
            Trunk::Conv(t) => {
                let mut out = Vec::new();
                for (i, conv) in t.downs.iter().enumerate() {
                    out.extend(prefixed(&format!("down.{i}"), conv.params()));
                    if let Some(bn) = &t.down_norms[i] {
                        out.extend(prefixed(&format!("down.{i}.bn"), bn.params()));
                    }
                }
                out.extend(prefixed("mid", t.mid.params()));
                out.extend(prefixed("mid.bn", t.mid_norm.params()));
                out.extend(prefixed("head", t.head.params()));
                out
            }
            Trunk::Transformer(t) => {
                let mut out = prefixed("embed", t.embed.params());
                out.push(("pos_embedding".into(), &t.pos_embedding));
                for (i, enc) in t.encoders.iter().enumerate() {
                    out.extend(prefixed(&format!("enc.{i}"), enc.params()));
                }
                out.extend(prefixed("head", t.head.params()));
                out
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        match &mut self.trunk {
            Trunk::Conv(t) => {
                // Order must match params() exactly; optimizers align
                // moments by position.
                let mut out = Vec::new();
                for (i, (conv, norm)) in
                    t.downs.iter_mut().zip(t.down_norms.iter_mut()).enumerate()
                {
                    out.extend(prefixed(&format!("down.{i}"), conv.params_mut()));
                    if let Some(bn) = norm {
                        out.extend(prefixed(&format!("down.{i}.bn"), bn.params_mut()));
                    }
                }
                out.extend(prefixed("mid", t.mid.params_mut()));
                out.extend(prefixed("mid.bn", t.mid_norm.params_mut()));
                out.extend(prefixed("head", t.head.params_mut()));
                out
            }
            Trunk::Transformer(t) => {
                let mut out = prefixed("embed", t.embed.params_mut());
                out.push(("pos_embedding".into(), &mut t.pos_embedding));
                for (i, enc) in t.encoders.iter_mut().enumerate() {
                    out.extend(prefixed(&format!("enc.{i}"), enc.params_mut()));
                }
                out.extend(prefixed("head", t.head.params_mut()));
                out
            }
        }
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        match &self.trunk {
            Trunk::Conv(t) => {
                let mut out = Vec::new();
                for (i, bn) in t.down_norms.iter().enumerate() {
                    if let Some(bn) = bn {
                        out.extend(prefixed(&format!("down.{i}.bn"), bn.buffers()));
                    }
                }
                out.extend(prefixed("mid.bn", t.mid_norm.buffers()));
                out
            }
            Trunk::Transformer(_) => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        match &mut self.trunk {
            Trunk::Conv(t) => {
                let mut out = Vec::new();
                for (i, bn) in t.down_norms.iter_mut().enumerate() {
                    if let Some(bn) = bn {
                        out.extend(prefixed(&format!("down.{i}.bn"), bn.buffers_mut()));
                    }
                }
                out.extend(prefixed("mid.bn", t.mid_norm.buffers_mut()));
                out
            }
            Trunk::Transformer(_) => Vec::new(),
        }
    }
}
