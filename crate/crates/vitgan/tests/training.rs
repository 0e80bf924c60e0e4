//! Training-loop contracts: loss composition, detachment, determinism,
//! checkpoint round-trips, and resume-exactness.

mod common;

use vitgan::data::{stack_batch, BatchPlan, Dataset, SyntheticSpec, SyntheticTask};
use vitgan::discriminator::{DiscriminatorConfig, DiscriminatorVariant};
use vitgan::error::Error;
use vitgan::generator::GeneratorConfig;
use vitgan::tensor::Tensor;
use vitgan::train::{train_step, train_step_traced, TrainConfig, TrainMode, TrainState};

fn tiny_gen_cfg() -> GeneratorConfig {
    GeneratorConfig {
        image_size: 16,
        patch_size: 4,
        in_channels: 3,
        out_channels: 3,
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2,
        residual_channels: 16,
        residual_blocks: 1,
    }
}

fn tiny_disc_cfg() -> DiscriminatorConfig {
    DiscriminatorConfig {
        variant: DiscriminatorVariant::ConvPatch,
        input_size: 16,
        condition_channels: 3,
        image_channels: 3,
        base_channels: 4,
        num_downsamples: 2,
    }
}

fn tiny_train_cfg(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        total_steps: 6,
        seed: 11,
        mode,
        ..TrainConfig::default()
    }
}

fn tiny_dataset() -> Dataset<f32> {
    let spec = SyntheticSpec {
        task: SyntheticTask::SegMaps,
        image_size: 16,
        min_shapes: 1,
        max_shapes: 3,
        seed: 5,
    };
    Dataset::synthesize(&spec, 4).unwrap()
}

fn run_steps(
    state: &mut TrainState<f32>,
    dataset: &Dataset<f32>,
    cfg: &TrainConfig,
    steps: u64,
) -> Vec<String> {
    let plan = BatchPlan::new(dataset.len(), cfg.batch_size, cfg.seed).unwrap();
    let mut lines = Vec::new();
    for _ in 0..steps {
        let idx = plan.indices_for_step(state.step);
        let batch: Vec<&_> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        let (cond, target) = stack_batch(&batch).unwrap();
        let m = train_step(state, &cond, &target, cfg).unwrap();
        lines.push(m.line());
    }
    lines
}

#[test]
fn loss_composition_holds_every_step() {
    let cfg = tiny_train_cfg(TrainMode::CganL1);
    let dataset = tiny_dataset();
    let mut state = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    let plan = BatchPlan::new(dataset.len(), cfg.batch_size, cfg.seed).unwrap();
    for step in 0..4 {
        let idx = plan.indices_for_step(step);
        let batch: Vec<&_> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        let (cond, target) = stack_batch(&batch).unwrap();
        let m = train_step(&mut state, &cond, &target, &cfg).unwrap();
        let recomposed = m.g_adv + cfg.lambda_l1 * m.g_l1;
        assert!(
            (m.g_total - recomposed).abs() <= 1e-6 * m.g_total.abs().max(1.0),
            "step {step}: g_total {} vs g_adv + lambda*l1 {}",
            m.g_total,
            recomposed
        );
    }
}

#[test]
fn discriminator_step_sends_zero_gradient_to_generator() {
    let cfg = tiny_train_cfg(TrainMode::CganL1);
    let dataset = tiny_dataset();
    let mut state = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    let plan = BatchPlan::new(dataset.len(), cfg.batch_size, cfg.seed).unwrap();
    for step in 0..3 {
        let idx = plan.indices_for_step(step);
        let batch: Vec<&_> = idx.iter().map(|&i| &dataset.samples[i]).collect();
        let (cond, target) = stack_batch(&batch).unwrap();
        let (_, trace) = train_step_traced(&mut state, &cond, &target, &cfg).unwrap();
        assert_eq!(
            trace.d_step_generator_grad_max, 0.0,
            "generator leaked into the discriminator step"
        );
    }
}

#[test]
fn fixed_seed_gives_identical_metric_traces() {
    let cfg = tiny_train_cfg(TrainMode::CganL1);
    let dataset = tiny_dataset();
    let mut s1 = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    let mut s2 = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    let t1 = run_steps(&mut s1, &dataset, &cfg, 5);
    let t2 = run_steps(&mut s2, &dataset, &cfg, 5);
    assert_eq!(t1, t2);
}

#[test]
fn checkpoint_roundtrip_resumes_bit_exactly() {
    let cfg = tiny_train_cfg(TrainMode::CganL1);
    let dataset = tiny_dataset();

    // Uninterrupted reference: 3 + 2 steps.
    let mut full = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    run_steps(&mut full, &dataset, &cfg, 3);
    let reference = run_steps(&mut full, &dataset, &cfg, 2);

    // Interrupted run: 3 steps, save, load, 2 more.
    let mut first = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    run_steps(&mut first, &dataset, &cfg, 3);
    let dir = std::env::temp_dir().join("vitgan_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("state.vitg");
    first.save(&path).unwrap();
    let mut resumed = TrainState::load(&path, &cfg).unwrap();
    assert_eq!(resumed.step, 3);
    let continued = run_steps(&mut resumed, &dataset, &cfg, 2);

    assert_eq!(reference, continued, "resume diverged from uninterrupted run");
}

#[test]
fn checkpoint_bytes_roundtrip_bit_exactly() {
    let cfg = tiny_train_cfg(TrainMode::CganL1);
    let dataset = tiny_dataset();
    let mut state = TrainState::new(tiny_gen_cfg(), Some(tiny_disc_cfg()), &cfg).unwrap();
    run_steps(&mut state, &dataset, &cfg, 2);
    let bytes = state.to_container().unwrap().to_bytes();
    let reloaded = TrainState::<f32>::from_container(
        &vitgan::checkpoint::Container::from_bytes(&bytes).unwrap(),
        &cfg,
    )
    .unwrap();
    let rebytes = reloaded.to_container().unwrap().to_bytes();
    assert_eq!(bytes, rebytes);
}

#[test]
fn generator_only_checkpoint_into_cgan_mode_is_a_load_error() {
    let l1_cfg = tiny_train_cfg(TrainMode::L1Only);
    let state = TrainState::<f32>::new(tiny_gen_cfg(), None, &l1_cfg).unwrap();
    let dir = std::env::temp_dir().join("vitgan_ckpt_test");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("gen_only.vitg");
    state.save(&path).unwrap();

    let cgan_cfg = tiny_train_cfg(TrainMode::CganL1);
    let loaded = TrainState::<f32>::load(&path, &cgan_cfg).unwrap();
    let err = loaded.ensure_mode(TrainMode::CganL1).unwrap_err();
    match err {
        Error::Load(msg) => assert!(msg.contains("disc."), "{msg}"),
        other => panic!("expected Load error, got {other:?}"),
    }
}

#[test]
fn zero_lambda_l1_only_leaves_parameters_unchanged() {
    let mut cfg = tiny_train_cfg(TrainMode::L1Only);
    cfg.lambda_l1 = 0.0;
    let dataset = tiny_dataset();
    let mut state = TrainState::new(tiny_gen_cfg(), None, &cfg).unwrap();
    let before: Vec<Tensor<f32>> = state.generator.params().iter().map(|(_, t)| (*t).clone()).collect();
    run_steps(&mut state, &dataset, &cfg, 2);
    for ((_, after), b) in state.generator.params().iter().zip(&before) {
        assert!(after.same_values(b), "parameters moved under zero loss");
    }
}

#[test]
fn l1_only_metrics_have_zero_adversarial_terms() {
    let cfg = tiny_train_cfg(TrainMode::L1Only);
    let dataset = tiny_dataset();
    let mut state = TrainState::new(tiny_gen_cfg(), None, &cfg).unwrap();
    let lines = run_steps(&mut state, &dataset, &cfg, 3);
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 5);
        assert_eq!(fields[1], "0"); // d_loss
        assert_eq!(fields[2], "0"); // g_adv
    }
}

#[test]
fn position_embeddings_stay_live_after_training() {
    // Train briefly, then shuffle the input's patch blocks: if position
    // embeddings are live, the output must change (the network is not
    // permutation-invariant over patches).
    let mut cfg = tiny_train_cfg(TrainMode::L1Only);
    cfg.lr_g = 1e-3;
    let dataset = tiny_dataset();
    let batch: Vec<&_> = dataset.samples.iter().take(2).collect();
    let (cond, target) = stack_batch(&batch).unwrap();
    let mut state = TrainState::new(tiny_gen_cfg(), None, &cfg).unwrap();
    for _ in 0..100 {
        train_step(&mut state, &cond, &target, &cfg).unwrap();
    }

    let img = &dataset.samples[0].input; // [3,16,16], patch size 4
    let mut shuffled = img.data().to_vec();
    // Swap the (0,0) and (2,1) patch blocks in every channel.
    let (s, p) = (16, 4);
    for c in 0..3 {
        for y in 0..p {
            for x in 0..p {
                let a = (c * s + y) * s + x;
                let b = (c * s + 2 * p + y) * s + p + x;
                shuffled.swap(a, b);
            }
        }
    }
    let shuffled = Tensor::new(shuffled, img.shape()).unwrap();

    use vitgan::metrics::Translate;
    let out_base = state.generator.translate(img).unwrap();
    let out_shuf = state.generator.translate(&shuffled).unwrap();
    let dist: f32 = out_base
        .data()
        .iter()
        .zip(out_shuf.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(dist > 0.0, "patch shuffle left the output unchanged");
}

#[test]
fn l1_loss_descends_quickly_on_a_fixed_batch() {
    // Convergence smoke at tiny scale; the full overfit run lives in the
    // acceptance suite.
    let mut cfg = tiny_train_cfg(TrainMode::L1Only);
    cfg.lr_g = 2e-3;
    cfg.total_steps = 40;
    let dataset = tiny_dataset();
    let batch: Vec<&_> = dataset.samples.iter().take(2).collect();
    let (cond, target) = stack_batch(&batch).unwrap();
    let mut state = TrainState::new(tiny_gen_cfg(), None, &cfg).unwrap();
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for step in 0..40 {
        let m = train_step(&mut state, &cond, &target, &cfg).unwrap();
        if step == 0 {
            first = m.g_l1;
        }
        last = m.g_l1;
    }
    assert!(
        last < first * 0.55,
        "L1 did not descend: first {first}, last {last}"
    );
}
