//! Verify autodiff against central finite differences on a transformer
//! encoder layer, the same way the test suite does it.
//!
//!     cargo run --release --example gradient_check

use vitgan::nn::{Activation, AttentionConfig, EncoderLayer};
use vitgan::rng::Rng;
use vitgan::tensor::{Tape, Tensor};

fn main() {
    let mut rng = Rng::new(7);
    let layer = EncoderLayer::<f64>::new(
        AttentionConfig::new(8, 2).expect("valid config"),
        2,
        Activation::Gelu,
        &mut rng,
    );
    let x = Tensor::from_fn(&[1, 4, 8], |_| rng.normal() * 0.5);
    let weights = Tensor::from_fn(&[1, 4, 8], |_| rng.normal());

    let run = |l: &EncoderLayer<f64>| -> (f64, Option<vitgan::Gradients<f64>>) {
        let mut tape = Tape::new();
        let out = l.forward(&mut tape, &x).expect("forward");
        let prod = tape.mul(&out, &weights).expect("mul");
        let loss = tape.sum_all(&prod).expect("sum");
        let grads = tape.backward(&loss).expect("backward");
        (loss.item().expect("scalar"), Some(grads))
    };
    let (_, grads) = run(&layer);
    let grads = grads.expect("gradients");

    let h = 1e-5;
    let mut checked = 0usize;
    let mut worst: (f64, String) = (0.0, String::new());
    let param_meta: Vec<(String, usize)> = layer
        .params()
        .iter()
        .map(|(n, p)| (n.clone(), p.numel()))
        .collect();
    for (name, numel) in &param_meta {
        // Sample a handful of elements per parameter.
        for j in (0..*numel).step_by(numel.div_ceil(8).max(1)) {
            let eval = |delta: f64| -> f64 {
                let mut nudged = layer.clone();
                for (n, p) in nudged.params_mut() {
                    if n == *name {
                        let mut data = p.data().to_vec();
                        data[j] += delta;
                        *p = Tensor::new(data, p.shape())
                            .expect("shape")
                            .with_requires_grad();
                    }
                }
                run(&nudged).0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let ad = layer
                .params()
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, p)| grads.wrt(p))
                .map_or(0.0, |g| g.data()[j]);
            let err = (ad - fd).abs() / fd.abs().max(1e-4);
            if err > worst.0 {
                worst = (err, format!("{name}[{j}]"));
            }
            checked += 1;
        }
    }
    println!("checked {checked} sampled parameter elements of a transformer encoder layer");
    println!("worst relative disagreement: {:.3e} at {}", worst.0, worst.1);
    assert!(worst.0 < 1e-3, "gradient check failed");
    println!("autodiff matches finite differences");
}
