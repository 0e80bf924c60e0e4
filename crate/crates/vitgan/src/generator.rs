//! The hybrid generator: image -> patches -> patch + position embedding
//! -> stacked transformer encoders -> spatial re-assembly -> residual
//! conv block(s) -> transpose-conv upsampling -> tanh image.

use crate::error::{Error, Result};
use crate::nn::{
    prefixed, Activation, AttentionConfig, BatchNorm2d, Conv2d, ConvTranspose2d, EncoderLayer,
    Linear, trunc_normal,
};
use crate::rng::Rng;
use crate::tensor::{Element, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    /// Square input/output size in pixels.
    pub image_size: usize,
    /// Patch side length; must divide `image_size` and be a power of two
    /// (the upsampling chain restores one factor of two per block).
    pub patch_size: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub residual_channels: usize,
    pub residual_blocks: usize,
}

impl Default for GeneratorConfig {
    /// Small configuration trainable on a CPU in minutes.
    fn default() -> Self {
        GeneratorConfig {
            image_size: 64,
            patch_size: 8,
            in_channels: 3,
            out_channels: 3,
            embed_dim: 128,
            num_layers: 4,
            num_heads: 4,
            mlp_ratio: 4,
            residual_channels: 128,
            residual_blocks: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if !self.patch_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "patch_size {} must be a power of two for the upsampling chain",
                self.patch_size
            )));
        }
        AttentionConfig::new(self.embed_dim, self.num_heads)?;
        let ups = self.upsample_blocks();
        if !self.residual_channels.is_multiple_of(1 << ups) {
            return Err(Error::Config(format!(
                "residual_channels {} must be divisible by 2^{ups} so channels can halve per upsample block",
                self.residual_channels
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.num_layers == 0 {
            return Err(Error::Config("channel and layer counts must be positive".into()));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// (image_size / patch_size)^2.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// log2(patch_size) stride-2 blocks take the token grid back to full
    /// resolution.
    pub fn upsample_blocks(&self) -> usize {
        self.patch_size.trailing_zeros() as usize
    }

    fn attention(&self) -> AttentionConfig {
        AttentionConfig::new(self.embed_dim, self.num_heads).expect("validated")
    }
}

/// conv -> BN -> ReLU -> conv -> BN, wrapped by an additive skip.
#[derive(Clone)]
pub struct ResidualBlock<E: Element> {
    pub conv1: Conv2d<E>,
    pub bn1: BatchNorm2d<E>,
    pub conv2: Conv2d<E>,
    pub bn2: BatchNorm2d<E>,
}

impl<E: Element> ResidualBlock<E> {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        ResidualBlock {
            conv1: Conv2d::new(channels, channels, 3, 1, 1, true, rng),
            bn1: BatchNorm2d::new(channels),
            conv2: Conv2d::new(channels, channels, 3, 1, 1, true, rng),
            bn2: BatchNorm2d::new(channels),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        if x.shape().get(1) != Some(&self.bn1.channels()) {
            return Err(Error::Config(format!(
                "residual block expects {} channels, got input {:?}",
                self.bn1.channels(),
                x.shape()
            )));
        }
        let h = self.conv1.forward(tape, x)?;
        let h = self.bn1.forward(tape, &h, training)?;
        let h = tape.relu(&h)?;
        let h = self.conv2.forward(tape, &h)?;
        let h = self.bn2.forward(tape, &h, training)?;
        tape.add(x, &h)
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("conv1", self.conv1.params());
        out.extend(prefixed("bn1", self.bn1.params()));
        out.extend(prefixed("conv2", self.conv2.params()));
        out.extend(prefixed("bn2", self.bn2.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("conv1", self.conv1.params_mut());
        out.extend(prefixed("bn1", self.bn1.params_mut()));
        out.extend(prefixed("conv2", self.conv2.params_mut()));
        out.extend(prefixed("bn2", self.bn2.params_mut()));
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("bn1", self.bn1.buffers());
        out.extend(prefixed("bn2", self.bn2.buffers()));
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("bn1", self.bn1.buffers_mut());
        out.extend(prefixed("bn2", self.bn2.buffers_mut()));
        out
    }
}

/// transpose conv (k=4, s=2, p=1) -> BN -> LeakyReLU; doubles the
/// spatial size and halves the channel count.
#[derive(Clone)]
pub struct UpsampleBlock<E: Element> {
    pub convt: ConvTranspose2d<E>,
    pub bn: BatchNorm2d<E>,
    pub slope: f64,
}

impl<E: Element> UpsampleBlock<E> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        UpsampleBlock {
            convt: ConvTranspose2d::new(in_ch, out_ch, 4, 2, 1, true, rng),
            bn: BatchNorm2d::new(out_ch),
            slope: 0.2,
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<E>, x: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let h = self.convt.forward(tape, x)?;
        let h = self.bn.forward(tape, &h, training)?;
        tape.leaky_relu(&h, E::from_f64(self.slope))
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("convt", self.convt.params());
        out.extend(prefixed("bn", self.bn.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("convt", self.convt.params_mut());
        out.extend(prefixed("bn", self.bn.params_mut()));
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        prefixed("bn", self.bn.buffers())
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        prefixed("bn", self.bn.buffers_mut())
    }
}

#[derive(Clone)]
pub struct Generator<E: Element> {
    pub cfg: GeneratorConfig,
    pub patch_embed: Linear<E>,
    /// Learnable 1-D position embedding, one row per patch.
    pub pos_embedding: Tensor<E>,
    pub encoders: Vec<EncoderLayer<E>>,
    /// 1x1 conv bridging embed_dim to the conv stage's channel count.
    pub bridge: Conv2d<E>,
    pub res_blocks: Vec<ResidualBlock<E>>,
    pub ups: Vec<UpsampleBlock<E>>,
    pub out_conv: Conv2d<E>,
}

impl<E: Element> Generator<E> {
    pub fn new(cfg: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let patch_row = cfg.in_channels * cfg.patch_size * cfg.patch_size;
        let patch_embed = Linear::new(patch_row, cfg.embed_dim, rng);
        let pos_embedding = trunc_normal(&[cfg.num_patches(), cfg.embed_dim], 0.02, rng);
        let encoders = (0..cfg.num_layers)
            .map(|_| EncoderLayer::new(cfg.attention(), cfg.mlp_ratio, Activation::Gelu, rng))
            .collect();
        let bridge = Conv2d::new(cfg.embed_dim, cfg.residual_channels, 1, 1, 0, true, rng);
        let res_blocks = (0..cfg.residual_blocks)
            .map(|_| ResidualBlock::new(cfg.residual_channels, rng))
            .collect();
        let mut ups = Vec::new();
        let mut ch = cfg.residual_channels;
        for _ in 0..cfg.upsample_blocks() {
            ups.push(UpsampleBlock::new(ch, ch / 2, rng));
            ch /= 2;
        }
        let out_conv = Conv2d::new(ch, cfg.out_channels, 3, 1, 1, true, rng);
        Ok(Generator {
            cfg,
            patch_embed,
            pos_embedding,
            encoders,
            bridge,
            res_blocks,
            ups,
            out_conv,
        })
    }

    /// Linear projection of flattened patches plus the position term.
    pub fn embed_patches(&self, tape: &mut Tape<E>, patches: &Tensor<E>) -> Result<Tensor<E>> {
        let projected = self.patch_embed.forward(tape, patches)?;
        tape.add(&projected, &self.pos_embedding)
    }

    /// Full image-to-image pipeline; output is in [-1, 1] with the same
    /// spatial size as the input.
    pub fn forward(&mut self, tape: &mut Tape<E>, img: &Tensor<E>, training: bool) -> Result<Tensor<E>> {
        let s = self.cfg.image_size;
        let want = [0, self.cfg.in_channels, s, s];
        if img.rank() != 4 || img.shape()[1..] != want[1..] {
            return Err(Error::dim("generator input", img.shape(), &want));
        }
        let b = img.shape()[0];
        let grid = self.cfg.grid();

        let patches = tape.extract_patches(img, self.cfg.patch_size)?;
        let mut tokens = self.embed_patches(tape, &patches)?;
        for enc in &self.encoders {
            tokens = enc.forward(tape, &tokens)?;
        }
        // [b, np, d] -> [b, d, grid, grid]
        let spatial = tape.permute(&tokens, &[0, 2, 1])?;
        let spatial = tape.reshape(&spatial, &[b, self.cfg.embed_dim, grid, grid])?;

        let mut x = self.bridge.forward(tape, &spatial)?;
        for block in &mut self.res_blocks {
            x = block.forward(tape, &x, training)?;
        }
        for up in &mut self.ups {
            x = up.forward(tape, &x, training)?;
        }
        let x = self.out_conv.forward(tape, &x)?;
        tape.tanh(&x)
    }

    /// A copy whose parameters are detached constants; forwards through it
    /// record nothing and receive no gradients.
    pub fn frozen(&self) -> Self {
        let mut g = self.clone();
        for (_, t) in g.params_mut() {
            *t = t.detach();
        }
        g
    }

    pub fn params(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = prefixed("patch_embed", self.patch_embed.params());
        out.push(("pos_embedding".into(), &self.pos_embedding));
        for (i, enc) in self.encoders.iter().enumerate() {
            out.extend(prefixed(&format!("enc.{i}"), enc.params()));
        }
        out.extend(prefixed("bridge", self.bridge.params()));
        for (i, blk) in self.res_blocks.iter().enumerate() {
            out.extend(prefixed(&format!("res.{i}"), blk.params()));
        }
        for (i, up) in self.ups.iter().enumerate() {
            out.extend(prefixed(&format!("up.{i}"), up.params()));
        }
        out.extend(prefixed("out_conv", self.out_conv.params()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = prefixed("patch_embed", self.patch_embed.params_mut());
        out.push(("pos_embedding".into(), &mut self.pos_embedding));
        for (i, enc) in self.encoders.iter_mut().enumerate() {
            out.extend(prefixed(&format!("enc.{i}"), enc.params_mut()));
        }
        out.extend(prefixed("bridge", self.bridge.params_mut()));
        for (i, blk) in self.res_blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("res.{i}"), blk.params_mut()));
        }
        for (i, up) in self.ups.iter_mut().enumerate() {
            out.extend(prefixed(&format!("up.{i}"), up.params_mut()));
        }
        out.extend(prefixed("out_conv", self.out_conv.params_mut()));
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<E>)> {
        let mut out = Vec::new();
        for (i, blk) in self.res_blocks.iter().enumerate() {
            out.extend(prefixed(&format!("res.{i}"), blk.buffers()));
        }
        for (i, up) in self.ups.iter().enumerate() {
            out.extend(prefixed(&format!("up.{i}"), up.buffers()));
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<E>)> {
        let mut out = Vec::new();
        for (i, blk) in self.res_blocks.iter_mut().enumerate() {
            out.extend(prefixed(&format!("res.{i}"), blk.buffers_mut()));
        }
        for (i, up) in self.ups.iter_mut().enumerate() {
            out.extend(prefixed(&format!("up.{i}"), up.buffers_mut()));
        }
        out
    }
}
