//! The metrics suite on synthetic data: SSIM against distortions, FID
//! between feature distributions, Inception Score extremes, and a full
//! evaluation report.
//!
//!     cargo run --release --example evaluate_metrics

use vitgan::data::{synth_pair, PairedSample, SyntheticSpec, SyntheticTask};
use vitgan::metrics::{
    evaluate_model, fid, inception_score, ssim, GaussianStats, IdentityTranslate,
    PixelPoolProvider,
};
use vitgan::rng::Rng;
use vitgan::tensor::Tensor;

fn main() {
    let mut rng = Rng::new(5);

    // SSIM: 1.0 for identical images, graceful degradation under noise.
    let img = Tensor::<f64>::from_fn(&[3, 32, 32], |_| rng.uniform_in(-0.8, 0.8));
    println!("ssim(x, x)          = {:.6}", ssim(&img, &img.clone(), 2.0).unwrap());
    for noise in [0.05, 0.2, 0.8] {
        let noisy = Tensor::from_fn(&[3, 32, 32], |i| {
            (img.data()[i] + rng.normal() * noise).clamp(-1.0, 1.0)
        });
        println!(
            "ssim(x, x + n({noise:.2})) = {:.6}",
            ssim(&img, &noisy, 2.0).unwrap()
        );
    }

    // FID: zero against itself, grows with a mean shift.
    let features: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..16).map(|_| rng.normal()).collect())
        .collect();
    let base = GaussianStats::from_samples(&features).unwrap();
    println!("fid(s, s)           = {:.6}", fid(&base, &base.clone()).unwrap());
    let shifted: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().map(|v| v + 1.0).collect())
        .collect();
    let moved = GaussianStats::from_samples(&shifted).unwrap();
    println!("fid(s, s + 1)       = {:.4}", fid(&base, &moved).unwrap());

    // Inception score: 1 when every image looks alike, n_classes at most.
    let flat = vec![vec![0.25; 4]; 16];
    println!("IS(identical rows)  = {:.4}", inception_score(&flat).unwrap());
    let one_hot: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            let mut r = vec![0.0; 4];
            r[i] = 1.0;
            r
        })
        .collect();
    println!("IS(uniform one-hot) = {:.4}", inception_score(&one_hot).unwrap());

    // A full report over identity pairs: FID 0, SSIM 1 by construction.
    let spec = SyntheticSpec {
        task: SyntheticTask::SegMaps,
        image_size: 32,
        min_shapes: 2,
        max_shapes: 4,
        seed: 21,
    };
    let samples: Vec<PairedSample<f64>> = (0..8)
        .map(|i| {
            let s = synth_pair::<f64>(&spec, i).unwrap();
            PairedSample::new(s.id.clone(), s.input.clone(), s.input.clone()).unwrap()
        })
        .collect();
    let provider = PixelPoolProvider::default();
    let mut stub = IdentityTranslate;
    let report = evaluate_model(&mut stub, &samples, &provider).unwrap();
    println!("\n{}", report.render());
}
