//! Finite-difference checks for every layer type and both networks,
//! shared between the gradients suite and the acceptance suite.

#![allow(dead_code)]

use super::{grad_check, weighted_sum, Checkable};
use vitgan::discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorVariant};
use vitgan::generator::{Generator, GeneratorConfig, ResidualBlock, UpsampleBlock};
use vitgan::nn::{
    attention, Activation, AttentionConfig, BatchNorm2d, Conv2d, ConvTranspose2d, EncoderLayer,
    LayerNorm, Linear, MultiHeadAttention,
};
use vitgan::rng::Rng;
use vitgan::tensor::{Tape, Tensor};
use vitgan::train::l1_loss;

fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal() * 0.5)
}

macro_rules! checkable {
    ($name:ident { $($field:ident : $ty:ty),+ $(,)? },
     params($pself:ident) $params:block,
     loss($lself:ident, $tape:ident) $loss:block) => {
        pub struct $name {
            $(pub $field: $ty),+
        }
        impl Checkable for $name {
            fn params(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
                let $pself = self;
                $params
            }
            fn loss(&mut self, $tape: &mut Tape<f64>) -> Tensor<f64> {
                let $lself = self;
                $loss
            }
        }
    };
}

checkable!(
    LinearCheck { layer: Linear<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    ConvCheck { layer: Conv2d<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    ConvInputCheck { layer: Conv2d<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { vec![("input".to_string(), &mut s.x)] },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    ConvTCheck { layer: ConvTranspose2d<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    BatchNormCheck { layer: BatchNorm2d<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x, true).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    BnInputCheck { layer: BatchNorm2d<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { vec![("input".to_string(), &mut s.x)] },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x, true).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    LayerNormCheck { layer: LayerNorm<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    AttentionCheck { q: Tensor<f64>, k: Tensor<f64>, v: Tensor<f64>, w: Tensor<f64> },
    params(s) { vec![("q".to_string(), &mut s.q), ("k".to_string(), &mut s.k), ("v".to_string(), &mut s.v)] },
    loss(s, tape) { let out = attention(tape, &s.q, &s.k, &s.v).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    MhaCheck { layer: MultiHeadAttention<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    EncoderCheck { layer: EncoderLayer<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.layer.params_mut() },
    loss(s, tape) { let out = s.layer.forward(tape, &s.x).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    EmbeddingCheck { table: Tensor<f64>, indices: Vec<usize>, w: Tensor<f64> },
    params(s) { vec![("table".to_string(), &mut s.table)] },
    loss(s, tape) { let rows = tape.gather_rows(&s.table, &s.indices).unwrap(); weighted_sum(tape, &rows, &s.w) }
);

checkable!(
    ResidualCheck { block: ResidualBlock<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.block.params_mut() },
    loss(s, tape) { let out = s.block.forward(tape, &s.x, true).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    UpsampleCheck { block: UpsampleBlock<f64>, x: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.block.params_mut() },
    loss(s, tape) { let out = s.block.forward(tape, &s.x, true).unwrap(); weighted_sum(tape, &out, &s.w) }
);

checkable!(
    GeneratorCheck { gen: Generator<f64>, img: Tensor<f64>, target: Tensor<f64> },
    params(s) { s.gen.params_mut() },
    loss(s, tape) { let out = s.gen.forward(tape, &s.img, true).unwrap(); l1_loss(tape, &out, &s.target).unwrap() }
);

checkable!(
    DiscriminatorCheck { disc: Discriminator<f64>, cond: Tensor<f64>, cand: Tensor<f64>, w: Tensor<f64> },
    params(s) { s.disc.params_mut() },
    loss(s, tape) { let score = s.disc.discriminate(tape, &s.cond, &s.cand, true).unwrap(); weighted_sum(tape, &score.logits, &s.w) }
);

// ---------------------------------------------------------------------------
// Per-layer entry points
// ---------------------------------------------------------------------------

pub fn linear() {
    let mut rng = Rng::new(100);
    let layer = Linear::new(5, 4, &mut rng);
    let x = rand_tensor(&[2, 3, 5], &mut rng);
    let w = rand_tensor(&[2, 3, 4], &mut rng);
    grad_check("linear", &mut LinearCheck { layer, x, w });
}

pub fn conv2d() {
    let mut rng = Rng::new(101);
    let layer = Conv2d::new(2, 3, 3, 1, 1, true, &mut rng);
    let x = rand_tensor(&[2, 2, 5, 5], &mut rng);
    let w = rand_tensor(&[2, 3, 5, 5], &mut rng);
    grad_check("conv2d", &mut ConvCheck { layer, x, w });
}

pub fn conv2d_strided() {
    let mut rng = Rng::new(102);
    let layer = Conv2d::new(2, 2, 4, 2, 1, true, &mut rng);
    let x = rand_tensor(&[1, 2, 6, 6], &mut rng);
    let w = rand_tensor(&[1, 2, 3, 3], &mut rng);
    grad_check("conv2d stride 2", &mut ConvCheck { layer, x, w });
}

pub fn conv2d_wrt_input() {
    let mut rng = Rng::new(103);
    let layer = Conv2d::new(2, 2, 3, 1, 1, false, &mut rng);
    let x = rand_tensor(&[1, 2, 5, 5], &mut rng).with_requires_grad();
    let w = rand_tensor(&[1, 2, 5, 5], &mut rng);
    grad_check("conv2d wrt input", &mut ConvInputCheck { layer, x, w });
}

pub fn conv_transpose2d() {
    let mut rng = Rng::new(104);
    let layer = ConvTranspose2d::new(3, 2, 4, 2, 1, true, &mut rng);
    let x = rand_tensor(&[2, 3, 4, 4], &mut rng);
    let w = rand_tensor(&[2, 2, 8, 8], &mut rng);
    grad_check("conv_transpose2d", &mut ConvTCheck { layer, x, w });
}

pub fn batch_norm() {
    let mut rng = Rng::new(105);
    let mut layer = BatchNorm2d::new(3);
    layer.gamma = Tensor::from_fn(&[3], |i| 0.5 + 0.3 * i as f64).with_requires_grad();
    layer.beta = Tensor::from_fn(&[3], |i| -0.2 + 0.1 * i as f64).with_requires_grad();
    let x = rand_tensor(&[3, 3, 4, 4], &mut rng);
    let w = rand_tensor(&[3, 3, 4, 4], &mut rng);
    grad_check("batch_norm", &mut BatchNormCheck { layer, x, w });
}

pub fn batch_norm_wrt_input() {
    let mut rng = Rng::new(106);
    let layer = BatchNorm2d::new(2);
    let x = rand_tensor(&[2, 2, 3, 3], &mut rng).with_requires_grad();
    let w = rand_tensor(&[2, 2, 3, 3], &mut rng);
    grad_check("batch_norm wrt input", &mut BnInputCheck { layer, x, w });
}

pub fn layer_norm() {
    let mut rng = Rng::new(107);
    let mut layer = LayerNorm::new(6);
    layer.gamma = Tensor::from_fn(&[6], |i| 0.8 + 0.1 * i as f64).with_requires_grad();
    layer.beta = Tensor::from_fn(&[6], |i| 0.05 * i as f64).with_requires_grad();
    let x = rand_tensor(&[2, 3, 6], &mut rng);
    let w = rand_tensor(&[2, 3, 6], &mut rng);
    grad_check("layer_norm", &mut LayerNormCheck { layer, x, w });
}

pub fn attention_qkv() {
    let mut rng = Rng::new(108);
    let q = rand_tensor(&[1, 3, 4], &mut rng).with_requires_grad();
    let k = rand_tensor(&[1, 3, 4], &mut rng).with_requires_grad();
    let v = rand_tensor(&[1, 3, 4], &mut rng).with_requires_grad();
    let w = rand_tensor(&[1, 3, 4], &mut rng);
    grad_check("attention", &mut AttentionCheck { q, k, v, w });
}

pub fn multi_head_attention() {
    let mut rng = Rng::new(109);
    let layer = MultiHeadAttention::new(AttentionConfig::new(8, 2).unwrap(), &mut rng);
    let x = rand_tensor(&[1, 4, 8], &mut rng);
    let w = rand_tensor(&[1, 4, 8], &mut rng);
    grad_check("multi_head_attention", &mut MhaCheck { layer, x, w });
}

pub fn encoder_layer() {
    let mut rng = Rng::new(110);
    let layer = EncoderLayer::new(
        AttentionConfig::new(8, 2).unwrap(),
        2,
        Activation::Gelu,
        &mut rng,
    );
    let x = rand_tensor(&[1, 4, 8], &mut rng);
    let w = rand_tensor(&[1, 4, 8], &mut rng);
    grad_check("transformer_encoder_layer", &mut EncoderCheck { layer, x, w });
}

pub fn embedding() {
    let mut rng = Rng::new(111);
    let table = rand_tensor(&[5, 3], &mut rng).with_requires_grad();
    let indices = vec![2, 0, 2, 4];
    let w = rand_tensor(&[4, 3], &mut rng);
    grad_check("embedding", &mut EmbeddingCheck { table, indices, w });
}

pub fn residual_block() {
    let mut rng = Rng::new(112);
    let block = ResidualBlock::new(4, &mut rng);
    let x = rand_tensor(&[2, 4, 4, 4], &mut rng);
    let w = rand_tensor(&[2, 4, 4, 4], &mut rng);
    grad_check("residual_block", &mut ResidualCheck { block, x, w });
}

pub fn upsample_block() {
    let mut rng = Rng::new(113);
    let block = UpsampleBlock::new(4, 2, &mut rng);
    let x = rand_tensor(&[2, 4, 3, 3], &mut rng);
    let w = rand_tensor(&[2, 2, 6, 6], &mut rng);
    grad_check("upsample_block", &mut UpsampleCheck { block, x, w });
}

pub fn tiny_generator_cfg() -> GeneratorConfig {
    GeneratorConfig {
        image_size: 8,
        patch_size: 4,
        in_channels: 3,
        out_channels: 2,
        embed_dim: 8,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        residual_channels: 8,
        residual_blocks: 1,
    }
}

pub fn full_generator() {
    let mut rng = Rng::new(114);
    let gen = Generator::new(tiny_generator_cfg(), &mut rng).unwrap();
    let img = Tensor::from_fn(&[2, 3, 8, 8], |_| rng.uniform_in(-0.9, 0.9));
    let target = Tensor::from_fn(&[2, 2, 8, 8], |_| rng.uniform_in(-0.9, 0.9));
    grad_check("generator", &mut GeneratorCheck { gen, img, target });
}

pub fn full_conv_discriminator() {
    let mut rng = Rng::new(115);
    let cfg = DiscriminatorConfig {
        variant: DiscriminatorVariant::ConvPatch,
        input_size: 16,
        condition_channels: 3,
        image_channels: 3,
        base_channels: 2,
        num_downsamples: 2,
    };
    let grid = cfg.output_grid();
    let disc = Discriminator::new(cfg, &mut rng).unwrap();
    let cond = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.uniform_in(-0.9, 0.9));
    let cand = Tensor::from_fn(&[2, 3, 16, 16], |_| rng.uniform_in(-0.9, 0.9));
    let w = Tensor::from_fn(&[2, 1, grid, grid], |_| rng.normal());
    grad_check(
        "conv discriminator",
        &mut DiscriminatorCheck { disc, cond, cand, w },
    );
}

pub fn full_transformer_discriminator() {
    let mut rng = Rng::new(116);
    let cfg = DiscriminatorConfig {
        variant: DiscriminatorVariant::TransformerPatch {
            patch_size: 4,
            embed_dim: 8,
            num_layers: 1,
            num_heads: 2,
        },
        input_size: 8,
        condition_channels: 3,
        image_channels: 3,
        base_channels: 2,
        num_downsamples: 2,
    };
    let grid = cfg.output_grid();
    let disc = Discriminator::new(cfg, &mut rng).unwrap();
    let cond = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.uniform_in(-0.9, 0.9));
    let cand = Tensor::from_fn(&[1, 3, 8, 8], |_| rng.uniform_in(-0.9, 0.9));
    let w = Tensor::from_fn(&[1, 1, grid, grid], |_| rng.normal());
    grad_check(
        "transformer discriminator",
        &mut DiscriminatorCheck { disc, cond, cand, w },
    );
}

/// Every layer type plus both full networks.
pub fn all() {
    linear();
    conv2d();
    conv2d_strided();
    conv2d_wrt_input();
    conv_transpose2d();
    batch_norm();
    batch_norm_wrt_input();
    layer_norm();
    attention_qkv();
    multi_head_attention();
    encoder_layer();
    embedding();
    residual_block();
    upsample_block();
    full_generator();
    full_conv_discriminator();
    full_transformer_discriminator();
}
