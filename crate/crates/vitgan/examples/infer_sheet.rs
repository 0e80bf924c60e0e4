//! Train a small model briefly, then produce the side-by-side
//! input | target | output sheet the way the `infer` command does.
//!
//!     cargo run --release --example infer_sheet

use vitgan::cli::compose_sheet;
use vitgan::data::{save_image, stack_batch, Dataset, SyntheticSpec, SyntheticTask};
use vitgan::generator::GeneratorConfig;
use vitgan::metrics::Translate;
use vitgan::tensor::Tensor;
use vitgan::train::{train_step, TrainConfig, TrainMode, TrainState};

fn main() {
    let gen_cfg = GeneratorConfig {
        image_size: 32,
        patch_size: 8,
        embed_dim: 64,
        num_layers: 2,
        num_heads: 2,
        residual_channels: 64,
        ..GeneratorConfig::default()
    };
    let cfg = TrainConfig {
        lr_g: 1e-3,
        batch_size: 4,
        total_steps: 120,
        seed: 6,
        mode: TrainMode::L1Only,
        ..TrainConfig::default()
    };
    let spec = SyntheticSpec {
        task: SyntheticTask::SegMaps,
        image_size: 32,
        min_shapes: 2,
        max_shapes: 4,
        seed: 14,
    };
    let dataset: Dataset<f32> = Dataset::synthesize(&spec, 4).expect("synthesize");
    let batch: Vec<&_> = dataset.samples.iter().collect();
    let (cond, target) = stack_batch(&batch).expect("stack");

    let mut state = TrainState::new(gen_cfg, None, &cfg).expect("state");
    println!("fitting 4 pairs for {} quick steps...", cfg.total_steps);
    let mut last = f64::NAN;
    for _ in 0..cfg.total_steps {
        last = train_step(&mut state, &cond, &target, &cfg).expect("step").g_l1;
    }
    println!("final train L1: {last:.4}");

    let rows: Vec<Vec<Tensor<f32>>> = dataset
        .samples
        .iter()
        .map(|s| {
            let out = state.generator.translate(&s.input).expect("translate");
            vec![s.input.clone(), s.target.clone(), out]
        })
        .collect();
    let sheet = compose_sheet(&rows).expect("sheet");
    std::fs::create_dir_all("out").expect("out dir");
    let path = std::path::Path::new("out/infer_sheet.png");
    save_image(&sheet, path).expect("save");
    println!(
        "wrote {} ({}x{} pixels: 4 rows of input | target | output)",
        path.display(),
        sheet.shape()[2],
        sheet.shape()[1],
    );
}
