//! Experiment configuration and the operator commands behind the
//! `vitgan` binary: `gen-data`, `train`, `infer`, `eval`.
//!
//! Configs are plain text: `[section]` headers and `key = value` lines
//! (strings quoted, numbers and booleans bare, `#` comments). Every key
//! is validated before any compute; unknown keys are rejected by name.
//! Command-line flags override file values, which override defaults.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{
    load_image, save_image, stack_batch, synth_pair, BatchPlan, Dataset, SyntheticSpec,
    SyntheticTask,
};
use crate::discriminator::{DiscriminatorConfig, DiscriminatorVariant};
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::metrics::{
    evaluate_model, FileEmbeddingProvider, IdentityTranslate, PixelPoolProvider, Provider, Report,
    Translate,
};
use crate::tensor::{Element, Tensor};
use crate::train::{train_step, TrainConfig, TrainMode, TrainState};

// ---------------------------------------------------------------------------
// Config text format
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Value {
    Str(String),
    Num(f64),
}

#[derive(Clone, Debug)]
struct RawKey {
    value: Value,
    line: usize,
}

#[derive(Default)]
struct RawConfig {
    sections: HashMap<String, HashMap<String, RawKey>>,
}

fn parse_value(s: &str, line: usize) -> Result<Value> {
    if let Some(stripped) = s.strip_prefix('"') {
        let inner = stripped
            .strip_suffix('"')
            .ok_or_else(|| Error::Config(format!("line {line}: unterminated string")))?;
        return Ok(Value::Str(inner.to_string()));
    }
    s.parse::<f64>()
        .map(Value::Num)
        .map_err(|_| Error::Config(format!("line {line}: cannot parse value '{s}'")))
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut cfg = RawConfig::default();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                // Only strip comments outside quoted strings.
                Some(pos) if !raw_line[..pos].contains('"') => &raw_line[..pos],
                _ => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {line_no}: malformed section header")))?;
                section = name.trim().to_string();
                cfg.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected key = value")))?;
            let key = key.trim().to_string();
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {line_no}: key '{key}' outside any [section]"
                )));
            }
            let value = parse_value(value.trim(), line_no)?;
            let dup = cfg
                .sections
                .get_mut(&section)
                .expect("section entry created above")
                .insert(key.clone(), RawKey { value, line: line_no });
            if dup.is_some() {
                return Err(Error::Config(format!(
                    "line {line_no}: duplicate key {section}.{key}"
                )));
            }
        }
        Ok(cfg)
    }
}

/// Typed view over one section that tracks which keys were consumed.
struct SectionReader<'a> {
    name: &'a str,
    keys: Option<&'a HashMap<String, RawKey>>,
    consumed: Vec<String>,
}

impl<'a> SectionReader<'a> {
    fn new(cfg: &'a RawConfig, name: &'a str) -> Self {
        SectionReader {
            name,
            keys: cfg.sections.get(name),
            consumed: Vec::new(),
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a RawKey> {
        self.consumed.push(key.to_string());
        self.keys.and_then(|m| m.get(key))
    }

    fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(rk) => match rk.value {
                Value::Num(n) if n >= 0.0 && n.fract() == 0.0 => Ok(n as usize),
                _ => Err(Error::Config(format!(
                    "{}.{key} (line {}) must be a non-negative integer",
                    self.name, rk.line
                ))),
            },
        }
    }

    fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.usize_or(key, default as usize)? as u64)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(rk) => match rk.value {
                Value::Num(n) => Ok(n),
                _ => Err(Error::Config(format!(
                    "{}.{key} (line {}) must be a number",
                    self.name, rk.line
                ))),
            },
        }
    }

    fn str_or(&mut self, key: &str, default: &str) -> Result<String> {
        match self.raw(key) {
            None => Ok(default.to_string()),
            Some(rk) => match &rk.value {
                Value::Str(s) => Ok(s.clone()),
                _ => Err(Error::Config(format!(
                    "{}.{key} (line {}) must be a quoted string",
                    self.name, rk.line
                ))),
            },
        }
    }

    fn str_opt(&mut self, key: &str) -> Result<Option<String>> {
        match self.raw(key) {
            None => Ok(None),
            Some(rk) => match &rk.value {
                Value::Str(s) => Ok(Some(s.clone())),
                _ => Err(Error::Config(format!(
                    "{}.{key} (line {}) must be a quoted string",
                    self.name, rk.line
                ))),
            },
        }
    }

    fn finish(self) -> Result<()> {
        if let Some(keys) = self.keys {
            for (key, rk) in keys {
                if !self.consumed.contains(key) {
                    return Err(Error::Config(format!(
                        "unknown key {}.{key} (line {})",
                        self.name, rk.line
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum DatasetSource {
    Dir(PathBuf),
    Synthetic { spec: SyntheticSpec, count: usize },
}

#[derive(Clone, Debug)]
pub enum MetricsProvider {
    PixelPool { grid: usize },
    EmbeddingFile { path: PathBuf, dim: usize },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub disc_variant: String,
    pub disc_base_channels: usize,
    pub disc_num_downsamples: usize,
    pub disc_patch_size: usize,
    pub disc_embed_dim: usize,
    pub disc_num_layers: usize,
    pub disc_num_heads: usize,
    pub training: TrainConfig,
    pub dataset: DatasetSource,
    pub metrics: MetricsProvider,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let raw = RawConfig::parse(text)?;
        for section in raw.sections.keys() {
            if !["generator", "discriminator", "training", "dataset", "metrics", "output"]
                .contains(&section.as_str())
            {
                return Err(Error::Config(format!("unknown section [{section}]")));
            }
        }
        let gd = GeneratorConfig::default();
        let mut g = SectionReader::new(&raw, "generator");
        let generator = GeneratorConfig {
            image_size: g.usize_or("image_size", gd.image_size)?,
            patch_size: g.usize_or("patch_size", gd.patch_size)?,
            in_channels: g.usize_or("in_channels", gd.in_channels)?,
            out_channels: g.usize_or("out_channels", gd.out_channels)?,
            embed_dim: g.usize_or("embed_dim", gd.embed_dim)?,
            num_layers: g.usize_or("num_layers", gd.num_layers)?,
            num_heads: g.usize_or("num_heads", gd.num_heads)?,
            mlp_ratio: g.usize_or("mlp_ratio", gd.mlp_ratio)?,
            residual_channels: g.usize_or("residual_channels", gd.residual_channels)?,
            residual_blocks: g.usize_or("residual_blocks", gd.residual_blocks)?,
        };
        g.finish()?;
        generator.validate()?;

        let mut d = SectionReader::new(&raw, "discriminator");
        let disc_variant = d.str_or("variant", "conv_patchgan")?;
        let disc_base_channels = d.usize_or("base_channels", 64)?;
        let disc_num_downsamples = d.usize_or("num_downsamples", 3)?;
        let disc_patch_size = d.usize_or("patch_size", generator.patch_size)?;
        let disc_embed_dim = d.usize_or("embed_dim", generator.embed_dim)?;
        let disc_num_layers = d.usize_or("num_layers", generator.num_layers)?;
        let disc_num_heads = d.usize_or("num_heads", generator.num_heads)?;
        d.finish()?;
        if !["conv_patchgan", "transformer_patchgan"].contains(&disc_variant.as_str()) {
            return Err(Error::Config(format!(
                "discriminator.variant '{disc_variant}' (expected conv_patchgan or transformer_patchgan)"
            )));
        }

        let td = TrainConfig::default();
        let mut t = SectionReader::new(&raw, "training");
        let training = TrainConfig {
            lambda_l1: t.f64_or("lambda_l1", td.lambda_l1)?,
            lr_g: t.f64_or("lr_g", td.lr_g)?,
            lr_d: t.f64_or("lr_d", td.lr_d)?,
            beta1: t.f64_or("beta1", td.beta1)?,
            beta2: t.f64_or("beta2", td.beta2)?,
            eps: t.f64_or("eps", td.eps)?,
            batch_size: t.usize_or("batch_size", td.batch_size)?,
            total_steps: t.u64_or("total_steps", td.total_steps)?,
            seed: t.u64_or("seed", td.seed)?,
            mode: TrainMode::parse(&t.str_or("mode", td.mode.name())?)?,
            checkpoint_every: t.u64_or("checkpoint_every", td.checkpoint_every)?,
        };
        t.finish()?;
        training.validate()?;

        let mut ds = SectionReader::new(&raw, "dataset");
        let dir = ds.str_opt("dir")?;
        let task = ds.str_or("task", "seg_maps")?;
        let image_size = ds.usize_or("image_size", generator.image_size)?;
        let min_shapes = ds.usize_or("min_shapes", 2)?;
        let max_shapes = ds.usize_or("max_shapes", 5)?;
        let data_seed = ds.u64_or("seed", 7)?;
        let count = ds.usize_or("count", 64)?;
        ds.finish()?;
        let dataset = match dir {
            Some(dir) => DatasetSource::Dir(PathBuf::from(dir)),
            None => {
                let spec = SyntheticSpec {
                    task: SyntheticTask::parse(&task)?,
                    image_size,
                    min_shapes,
                    max_shapes,
                    seed: data_seed,
                };
                spec.validate()?;
                DatasetSource::Synthetic { spec, count }
            }
        };

        let mut m = SectionReader::new(&raw, "metrics");
        let provider_name = m.str_or("provider", "pixel_pool")?;
        let pool_grid = m.usize_or("pool_grid", 8)?;
        let embedding_file = m.str_opt("embedding_file")?;
        let embedding_dim = m.usize_or("embedding_dim", 64)?;
        m.finish()?;
        let metrics = match provider_name.as_str() {
            "pixel_pool" => MetricsProvider::PixelPool { grid: pool_grid },
            "embedding_file" => MetricsProvider::EmbeddingFile {
                path: PathBuf::from(embedding_file.ok_or_else(|| {
                    Error::Config("metrics.embedding_file required for the embedding_file provider".into())
                })?),
                dim: embedding_dim,
            },
            other => {
                return Err(Error::Config(format!(
                    "metrics.provider '{other}' (expected pixel_pool or embedding_file)"
                )))
            }
        };

        let mut o = SectionReader::new(&raw, "output");
        let out_dir = PathBuf::from(o.str_or("dir", "out")?);
        o.finish()?;

        Ok(ExperimentConfig {
            generator,
            disc_variant,
            disc_base_channels,
            disc_num_downsamples,
            disc_patch_size,
            disc_embed_dim,
            disc_num_layers,
            disc_num_heads,
            training,
            dataset,
            metrics,
            out_dir,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn default_text() -> &'static str {
        "[generator]\n[discriminator]\n[training]\n[dataset]\n[metrics]\n[output]\n"
    }

    pub fn discriminator_config(&self) -> Result<DiscriminatorConfig> {
        let variant = match self.disc_variant.as_str() {
            "conv_patchgan" => DiscriminatorVariant::ConvPatch,
            "transformer_patchgan" => DiscriminatorVariant::TransformerPatch {
                patch_size: self.disc_patch_size,
                embed_dim: self.disc_embed_dim,
                num_layers: self.disc_num_layers,
                num_heads: self.disc_num_heads,
            },
            other => return Err(Error::Config(format!("discriminator.variant '{other}'"))),
        };
        let cfg = DiscriminatorConfig {
            variant,
            input_size: self.generator.image_size,
            condition_channels: self.generator.in_channels,
            image_channels: self.generator.out_channels,
            base_channels: self.disc_base_channels,
            num_downsamples: self.disc_num_downsamples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_dataset<E: Element>(&self) -> Result<Dataset<E>> {
        match &self.dataset {
            DatasetSource::Dir(dir) => Dataset::load_dir(dir),
            DatasetSource::Synthetic { spec, count } => Dataset::synthesize(spec, *count),
        }
    }

    pub fn provider<E: Element>(&self) -> Result<Box<dyn Provider<E>>> {
        Ok(match &self.metrics {
            MetricsProvider::PixelPool { grid } => Box::new(PixelPoolProvider { grid: *grid }),
            MetricsProvider::EmbeddingFile { path, dim } => {
                Box::new(FileEmbeddingProvider::load(path, *dim)?)
            }
        })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

/// Write `count` synthetic pairs plus a manifest into `<out>/`.
pub fn cmd_gen_data(cfg: &ExperimentConfig, count_override: Option<usize>) -> Result<PathBuf> {
    let DatasetSource::Synthetic { spec, count } = &cfg.dataset else {
        return Err(Error::Config(
            "gen-data requires a synthetic [dataset] section (no dir key)".into(),
        ));
    };
    let count = count_override.unwrap_or(*count);
    let dir = cfg.out_dir.join("dataset");
    ensure_dir(&dir)?;
    let mut manifest = format!(
        "spec_hash={:016x}\ntask={}\nimage_size={}\ncount={}\n",
        spec.fingerprint(),
        spec.task.name(),
        spec.image_size,
        count
    );
    for i in 0..count {
        let sample = synth_pair::<f32>(spec, i as u64)?;
        save_image(&sample.input, &dir.join(format!("{}.input.png", sample.id)))?;
        save_image(&sample.target, &dir.join(format!("{}.target.png", sample.id)))?;
        manifest.push_str(&format!("id {}\n", sample.id));
    }
    let manifest_path = dir.join("manifest.txt");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::Io {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(dir)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics_file: PathBuf,
    pub final_l1: f64,
    pub steps_run: u64,
}

/// Run (or resume) training per the config; writes the metrics stream
/// and periodic checkpoints under the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    let tc = &cfg.training;
    tc.validate()?;
    let dataset: Dataset<f32> = cfg.load_dataset()?;
    if dataset.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    let sample_channels = dataset.samples[0].input.shape()[0];
    let target_channels = dataset.samples[0].target.shape()[0];
    if sample_channels != cfg.generator.in_channels || target_channels != cfg.generator.out_channels
    {
        return Err(Error::Config(format!(
            "dataset channels ({sample_channels} in, {target_channels} out) do not match generator ({}, {})",
            cfg.generator.in_channels, cfg.generator.out_channels
        )));
    }
    let plan = BatchPlan::new(dataset.len(), tc.batch_size, tc.seed)?;
    ensure_dir(&cfg.out_dir)?;

    let mut state: TrainState<f32> = match resume {
        Some(path) => TrainState::load(path, tc)?,
        None => {
            let disc_cfg = match tc.mode {
                TrainMode::CganL1 => Some(cfg.discriminator_config()?),
                TrainMode::L1Only => None,
            };
            TrainState::new(cfg.generator, disc_cfg, tc)?
        }
    };
    state.ensure_mode(tc.mode)?;

    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut metrics_file = std::fs::OpenOptions::new()
        .create(true)
        .append(resume.is_some())
        .write(true)
        .truncate(resume.is_none())
        .open(&metrics_path)
        .map_err(|e| Error::Io {
            path: metrics_path.display().to_string(),
            message: e.to_string(),
        })?;

    let mut final_l1 = f64::NAN;
    let start = state.step;
    while state.step < tc.total_steps {
        let indices = plan.indices_for_step(state.step);
        let batch: Vec<&_> = indices.iter().map(|&i| &dataset.samples[i]).collect();
        let (cond, target) = stack_batch(&batch)?;
        let metrics = train_step(&mut state, &cond, &target, tc)?;
        final_l1 = metrics.g_l1;
        writeln!(metrics_file, "{}", metrics.line()).map_err(|e| Error::Io {
            path: metrics_path.display().to_string(),
            message: e.to_string(),
        })?;
        metrics_file.flush().ok();
        if tc.checkpoint_every > 0 && state.step.is_multiple_of(tc.checkpoint_every) {
            state.save(&cfg.out_dir.join(format!("ckpt_{:06}.vitg", state.step)))?;
        }
    }
    let checkpoint = cfg.out_dir.join("checkpoint.vitg");
    state.save(&checkpoint)?;
    Ok(TrainOutcome {
        checkpoint,
        metrics_file: metrics_path,
        final_l1,
        steps_run: state.step - start,
    })
}

// ---------------------------------------------------------------------------
// infer
// ---------------------------------------------------------------------------

const SHEET_GUTTER: usize = 2;

fn expand_to_rgb<E: Element>(t: &Tensor<E>) -> Tensor<E> {
    if t.shape()[0] == 3 {
        return t.clone();
    }
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(t.data());
    }
    Tensor::new(data, &[3, h, w]).expect("replicated plane")
}

/// Side-by-side sheet: one row per sample, columns separated by a
/// white 2-pixel gutter. Width = cols*size + (cols-1)*gutter.
pub fn compose_sheet<E: Element>(rows: &[Vec<Tensor<E>>]) -> Result<Tensor<E>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Contract("sheet needs at least one image".into()));
    }
    let cols = rows[0].len();
    let size = rows[0][0].shape()[1];
    let width = cols * size + (cols - 1) * SHEET_GUTTER;
    let height = rows.len() * size + (rows.len() - 1) * SHEET_GUTTER;
    let mut data = vec![E::ONE; 3 * height * width];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Contract("ragged sheet rows".into()));
        }
        for (c, img) in row.iter().enumerate() {
            let rgb = expand_to_rgb(img);
            if rgb.shape()[1] != size || rgb.shape()[2] != size {
                return Err(Error::dim("sheet image", rgb.shape(), &[3, size, size]));
            }
            let y0 = r * (size + SHEET_GUTTER);
            let x0 = c * (size + SHEET_GUTTER);
            for ch in 0..3 {
                for y in 0..size {
                    let src = &rgb.data()[(ch * size + y) * size..][..size];
                    let dst_off = (ch * height + y0 + y) * width + x0;
                    data[dst_off..dst_off + size]
                        .copy_from_slice(src);
                }
            }
        }
    }
    Tensor::new(data, &[3, height, width])
}

#[derive(Debug)]
pub struct InferOutcome {
    pub outputs: Vec<PathBuf>,
    pub sheet: PathBuf,
}

/// Translate input images through a checkpointed generator; writes one
/// output per input plus a sheet with input | target (when a sibling
/// `<id>.target.*` exists) | output columns.
pub fn cmd_infer(checkpoint: &Path, inputs: &[PathBuf], out_dir: &Path) -> Result<InferOutcome> {
    if inputs.is_empty() {
        return Err(Error::Contract("infer needs at least one input image".into()));
    }
    let tc = TrainConfig::default();
    let mut state: TrainState<f32> = TrainState::load(checkpoint, &tc)?;
    let size = state.generator.cfg.image_size;
    ensure_dir(out_dir)?;

    let mut outputs = Vec::new();
    let mut rows = Vec::new();
    for input_path in inputs {
        let input: Tensor<f32> = load_image(input_path)?;
        if input.shape()[1] != size || input.shape()[2] != size {
            return Err(Error::Config(format!(
                "input {} is {}x{} but the checkpoint was trained at {}x{}",
                input_path.display(),
                input.shape()[1],
                input.shape()[2],
                size,
                size
            )));
        }
        let output = state.generator.translate(&input)?;
        let stem = input_path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("input")
            .replace(".input", "");
        let stem = stem.rsplit_once('.').map(|(s, _)| s.to_string()).unwrap_or(stem);
        let out_path = out_dir.join(format!("{stem}.output.png"));
        save_image(&output, &out_path)?;
        outputs.push(out_path);

        let mut row = vec![input.clone()];
        let name = input_path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        for ext in ["png", "ppm", "pgm"] {
            let target_name = name.replace(".input.", ".target.");
            let cand = input_path.with_file_name(&target_name).with_extension(ext);
            if target_name != name && cand.exists() {
                row.push(load_image(&cand)?);
                break;
            }
        }
        row.push(output);
        rows.push(row);
    }
    // Pad target-less rows so the sheet is rectangular.
    let cols = rows.iter().map(Vec::len).max().unwrap_or(2);
    for row in rows.iter_mut() {
        while row.len() < cols {
            let blank = Tensor::full(&[3, size, size], f32::ONE);
            row.insert(1, blank);
        }
    }
    let sheet = compose_sheet(&rows)?;
    let sheet_path = out_dir.join("sheet.png");
    save_image(&sheet, &sheet_path)?;
    Ok(InferOutcome {
        outputs,
        sheet: sheet_path,
    })
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

/// Evaluate a checkpoint (or the literal stub name `identity`) on the
/// configured dataset; writes and returns the report.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Report> {
    let dataset: Dataset<f32> = cfg.load_dataset()?;
    if dataset.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    let provider = cfg.provider::<f32>()?;
    let report = if checkpoint.as_os_str() == "identity" {
        let mut stub = IdentityTranslate;
        evaluate_model(&mut stub, &dataset.samples, provider.as_ref())?
    } else {
        let tc = TrainConfig::default();
        let mut state: TrainState<f32> = TrainState::load(checkpoint, &tc)?;
        evaluate_model(&mut state.generator, &dataset.samples, provider.as_ref())?
    };
    ensure_dir(&cfg.out_dir)?;
    let report_path = cfg.out_dir.join("report.txt");
    std::fs::write(&report_path, report.render()).map_err(|e| Error::Io {
        path: report_path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(report)
}
