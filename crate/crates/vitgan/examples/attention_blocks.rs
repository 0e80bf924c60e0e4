//! A tour of the transformer building blocks: scaled dot-product
//! attention, multi-head attention, and the encoder layer, with the
//! invariants they guarantee.
//!
//!     cargo run --example attention_blocks

use vitgan::nn::{attention, Activation, AttentionConfig, EncoderLayer, MultiHeadAttention};
use vitgan::rng::Rng;
use vitgan::tensor::{Tape, Tensor};

fn main() {
    let mut rng = Rng::new(3);
    let mut tape = Tape::new();

    // Single-token attention returns V untouched: softmax of one score is 1.
    let q = Tensor::<f64>::from_fn(&[1, 1, 4], |_| rng.normal());
    let k = Tensor::<f64>::from_fn(&[1, 1, 4], |_| rng.normal());
    let v = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 4]).unwrap();
    let out = attention(&mut tape, &q, &k, &v).unwrap();
    println!("t=1 attention output equals V: {:?}", out.data());

    // Attention weights are a proper distribution over keys.
    let q = Tensor::<f64>::from_fn(&[1, 5, 8], |_| rng.normal());
    let kt = tape.transpose(&q, 1, 2).unwrap();
    let scores = tape.matmul(&q, &kt).unwrap();
    let scaled = tape.scale(&scores, 1.0 / (8f64).sqrt()).unwrap();
    let weights = tape.softmax(&scaled, 2).unwrap();
    let row_sums: Vec<f64> = weights.data().chunks(5).map(|r| r.iter().sum()).collect();
    println!("attention row sums (all 1): {row_sums:?}");

    // Multi-head attention preserves shape for any head count dividing d.
    for heads in [1, 2, 4] {
        let cfg = AttentionConfig::new(8, heads).unwrap();
        let mha = MultiHeadAttention::<f64>::new(cfg, &mut rng);
        let x = Tensor::from_fn(&[2, 5, 8], |_| rng.normal() * 0.5);
        let y = mha.forward(&mut tape, &x).unwrap();
        println!("H={heads}: {:?} -> {:?}", x.shape(), y.shape());
    }

    // The pre-norm encoder layer is exactly the identity when its output
    // projections are zero: only the residual paths remain.
    let cfg = AttentionConfig::new(8, 2).unwrap();
    let mut enc = EncoderLayer::<f64>::new(cfg, 4, Activation::Gelu, &mut rng);
    for (name, p) in enc.params_mut() {
        if name.starts_with("attn.wo") || name.starts_with("fc2") {
            *p = Tensor::zeros(p.shape()).with_requires_grad();
        }
    }
    let x = Tensor::from_fn(&[1, 3, 8], |i| (i as f64 * 0.37).sin());
    let y = enc.forward(&mut tape, &x).unwrap();
    let max_diff = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("zeroed-projection encoder layer acts as identity (max diff {max_diff:.2e})");
}
