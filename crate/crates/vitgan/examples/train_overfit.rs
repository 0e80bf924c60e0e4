//! Overfit a 4-pair synthetic batch until the train L1 drops below 0.05:
//! the standard capability check that the model plus optimizer can fit
//! data at all. Run with `--release`; takes a few minutes of CPU.
//!
//!     cargo run --release --example train_overfit [steps] [cgan_l1|l1_only]

use std::time::Instant;

use vitgan::data::{stack_batch, Dataset, SyntheticSpec, SyntheticTask};
use vitgan::discriminator::{DiscriminatorConfig, DiscriminatorVariant};
use vitgan::generator::GeneratorConfig;
use vitgan::train::{train_step, TrainConfig, TrainMode, TrainState};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let max_steps: u64 = args
        .first()
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let mode = match args.get(1).map(String::as_str) {
        Some("l1_only") => TrainMode::L1Only,
        _ => TrainMode::CganL1,
    };

    let gen_cfg = GeneratorConfig::default(); // 64x64, P=8, d=128, N=4, H=4
    let disc_cfg = DiscriminatorConfig {
        variant: DiscriminatorVariant::ConvPatch,
        input_size: gen_cfg.image_size,
        condition_channels: 3,
        image_channels: 3,
        base_channels: 16,
        num_downsamples: 3,
    };
    let train_cfg = TrainConfig {
        lr_g: 1e-3,
        lr_d: 1e-3,
        batch_size: 4,
        total_steps: max_steps,
        seed: 42,
        mode,
        ..TrainConfig::default()
    };

    let spec = SyntheticSpec {
        task: SyntheticTask::SegMaps,
        image_size: gen_cfg.image_size,
        min_shapes: 2,
        max_shapes: 4,
        seed: 1,
    };
    let dataset: Dataset<f32> = Dataset::synthesize(&spec, 4).expect("synthesize");
    let batch: Vec<&_> = dataset.samples.iter().collect();
    let (cond, target) = stack_batch(&batch).expect("stack");

    let disc = (mode == TrainMode::CganL1).then_some(disc_cfg);
    let mut state = TrainState::new(gen_cfg, disc, &train_cfg).expect("state");

    println!("mode {} | overfitting 4 pairs at 64x64, threshold L1 < 0.05", mode.name());
    let start = Instant::now();
    for step in 0..max_steps {
        let m = train_step(&mut state, &cond, &target, &train_cfg).expect("step");
        if step < 3 || (step + 1) % 25 == 0 {
            println!(
                "step {:>4}  d_loss {:.4}  g_adv {:.4}  g_l1 {:.4}  ({:.2?}/step)",
                step + 1,
                m.d_loss,
                m.g_adv,
                m.g_l1,
                start.elapsed() / (step + 1) as u32
            );
        }
        if m.g_l1 < 0.05 {
            println!(
                "reached L1 {:.4} at step {} in {:.1?}",
                m.g_l1,
                step + 1,
                start.elapsed()
            );
            return;
        }
    }
    println!("did not reach the threshold in {max_steps} steps ({:.1?})", start.elapsed());
    std::process::exit(1);
}
