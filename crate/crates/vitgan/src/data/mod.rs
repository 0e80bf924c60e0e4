//! Paired-image datasets: lossless image IO, normalization, batching,
//! and a procedural generator of paired samples (shapes -> labels,
//! labels -> shaded shapes, shapes -> depth) that stands in for
//! photographic datasets at desk scale.

pub mod png;
pub mod ppm;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// One (condition, target) pair in normalized [-1, 1] float form.
#[derive(Clone)]
pub struct PairedSample<E: Element> {
    pub id: String,
    /// `[c, h, w]`
    pub input: Tensor<E>,
    /// `[c, h, w]`; spatial dims match `input`.
    pub target: Tensor<E>,
}

impl<E: Element> PairedSample<E> {
    pub fn new(id: String, input: Tensor<E>, target: Tensor<E>) -> Result<Self> {
        if input.rank() != 3 || target.rank() != 3 || input.shape()[1..] != target.shape()[1..] {
            return Err(Error::dim("paired sample", input.shape(), target.shape()));
        }
        let in_range = |t: &Tensor<E>| {
            t.data()
                .iter()
                .all(|v| (-1.0..=1.0).contains(&v.to_f64()))
        };
        if !in_range(&input) || !in_range(&target) {
            return Err(Error::Contract(format!(
                "sample {id} has values outside [-1, 1]"
            )));
        }
        Ok(PairedSample { id, input, target })
    }
}

// ---------------------------------------------------------------------------
// Image file IO
// ---------------------------------------------------------------------------

fn to_u8(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn from_u8(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Save a `[c,h,w]` tensor in [-1,1] as an 8-bit image; the format comes
/// from the extension (.png, .ppm for RGB, .pgm for grayscale).
pub fn save_image<E: Element>(t: &Tensor<E>, path: &Path) -> Result<()> {
    let (c, h, w) = match t.shape() {
        [c, h, w] => (*c, *h, *w),
        s => return Err(Error::dim("save_image", s, &[0, 0, 0])),
    };
    // channel-interleave
    let mut pixels = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                pixels.push(to_u8(t.data()[(ch * h + y) * w + x].to_f64()));
            }
        }
    }
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let bytes = match ext {
        "png" => png::encode(w, h, c, &pixels)?,
        "ppm" | "pgm" => ppm::encode(w, h, c, &pixels)?,
        other => {
            return Err(io_err(path, format!("unsupported image extension '{other}'")));
        }
    };
    std::fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Load an 8-bit PNG/PPM/PGM into a `[c,h,w]` tensor in [-1,1].
pub fn load_image<E: Element>(path: &Path) -> Result<Tensor<E>> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let (w, h, c, pixels) = match ext {
        "png" => png::decode(&bytes).map_err(|e| io_err(path, e))?,
        "ppm" | "pgm" => ppm::decode(&bytes).map_err(|e| io_err(path, e))?,
        other => {
            return Err(io_err(path, format!("unsupported image extension '{other}'")));
        }
    };
    // de-interleave to planar [c,h,w]
    let mut data = vec![E::ZERO; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                data[(ch * h + y) * w + x] = E::from_f64(from_u8(pixels[(y * w + x) * c + ch]));
            }
        }
    }
    Tensor::new(data, &[c, h, w])
}

// ---------------------------------------------------------------------------
// Synthetic paired data
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Shaded shapes on a gradient background -> flat label colors.
    SegMaps,
    /// Flat label colors -> shaded shapes.
    InverseSeg,
    /// Shaded shapes -> single-channel depth by layering, near = bright.
    Depth,
}

impl SyntheticTask {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seg_maps" => Ok(SyntheticTask::SegMaps),
            "inverse_seg" => Ok(SyntheticTask::InverseSeg),
            "depth" => Ok(SyntheticTask::Depth),
            other => Err(Error::Config(format!(
                "unknown synthetic task '{other}' (seg_maps, inverse_seg, depth)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SyntheticTask::SegMaps => "seg_maps",
            SyntheticTask::InverseSeg => "inverse_seg",
            SyntheticTask::Depth => "depth",
        }
    }

    pub fn target_channels(&self) -> usize {
        match self {
            SyntheticTask::Depth => 1,
            _ => 3,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub image_size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::Config("synthetic image_size must be >= 8".into()));
        }
        if self.min_shapes == 0 || self.max_shapes < self.min_shapes {
            return Err(Error::Config(format!(
                "invalid shape count range {}..={}",
                self.min_shapes, self.max_shapes
            )));
        }
        Ok(())
    }

    /// Cheap stable fingerprint of every generation-relevant field.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in [
            self.task as u64,
            self.image_size as u64,
            self.min_shapes as u64,
            self.max_shapes as u64,
            self.seed,
        ] {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

#[derive(Clone, Copy)]
enum ShapeKind {
    Rect,
    Ellipse,
}

struct Shape {
    kind: ShapeKind,
    class: usize,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
}

impl Shape {
    /// Normalized radial coordinate: <= 1 inside the shape.
    fn radial(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        match self.kind {
            ShapeKind::Rect => dx.abs().max(dy.abs()),
            ShapeKind::Ellipse => (dx * dx + dy * dy).sqrt(),
        }
    }
}

const NUM_CLASSES: usize = 3;
// Shaded appearance per class (scene space).
const SCENE_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.70, 0.15, -0.20],
    [-0.30, 0.60, 0.20],
    [-0.10, -0.25, 0.70],
];
// Flat label palette (segmentation space), plus the background label.
const LABEL_COLORS: [[f64; 3]; NUM_CLASSES] = [
    [0.75, -0.75, -0.75],
    [-0.75, 0.75, -0.75],
    [-0.75, -0.75, 0.75],
];
const BACKGROUND_LABEL: [f64; 3] = [-0.75, -0.75, -0.75];

fn draw_scene(shapes: &[Shape], s: usize) -> Vec<f64> {
    let mut img = vec![0.0; 3 * s * s];
    let channel_gain = [1.0, 0.9, 0.8];
    for y in 0..s {
        for x in 0..s {
            let g = -0.6 + 1.2 * (x + y) as f64 / (2.0 * (s - 1) as f64);
            // Topmost (last-drawn) shape wins.
            let mut color = [g * channel_gain[0], g * channel_gain[1], g * channel_gain[2]];
            for shape in shapes {
                let r = shape.radial(x as f64, y as f64);
                if r <= 1.0 {
                    let shade = 1.0 - 0.45 * r;
                    let base = SCENE_COLORS[shape.class];
                    color = [base[0] * shade, base[1] * shade, base[2] * shade];
                }
            }
            for (c, &v) in color.iter().enumerate() {
                img[(c * s + y) * s + x] = v.clamp(-1.0, 1.0);
            }
        }
    }
    img
}

fn draw_labels(shapes: &[Shape], s: usize) -> Vec<f64> {
    let mut img = vec![0.0; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let mut color = BACKGROUND_LABEL;
            for shape in shapes {
                if shape.radial(x as f64, y as f64) <= 1.0 {
                    color = LABEL_COLORS[shape.class];
                }
            }
            for (c, &v) in color.iter().enumerate() {
                img[(c * s + y) * s + x] = v;
            }
        }
    }
    img
}

fn draw_depth(shapes: &[Shape], s: usize) -> Vec<f64> {
    let mut img = vec![0.0; s * s];
    let center = (s - 1) as f64 / 2.0;
    let rmax = center * std::f64::consts::SQRT_2;
    let n = shapes.len() as f64;
    for y in 0..s {
        for x in 0..s {
            // Radially receding background, far = dark.
            let rc = (((x as f64 - center).powi(2) + (y as f64 - center).powi(2)).sqrt()) / rmax;
            let mut depth = -0.8 + 0.2 * (1.0 - rc);
            for (i, shape) in shapes.iter().enumerate() {
                let r = shape.radial(x as f64, y as f64);
                if r <= 1.0 {
                    // Later shapes sit on top, hence nearer and brighter.
                    let layer = -0.6 + 1.2 * (i + 1) as f64 / n;
                    depth = (layer + 0.15 * (1.0 - r)).clamp(-1.0, 0.9);
                }
            }
            img[y * s + x] = depth;
        }
    }
    img
}

/// Deterministically generate pair `index` of the task's virtual dataset.
pub fn synth_pair<E: Element>(spec: &SyntheticSpec, index: u64) -> Result<PairedSample<E>> {
    spec.validate()?;
    let s = spec.image_size;
    let mut rng = Rng::for_index(spec.seed, index);
    let n = spec.min_shapes + rng.below(spec.max_shapes - spec.min_shapes + 1);
    let span = s as f64;
    let shapes: Vec<Shape> = (0..n)
        .map(|_| Shape {
            kind: if rng.below(2) == 0 { ShapeKind::Rect } else { ShapeKind::Ellipse },
            class: rng.below(NUM_CLASSES),
            cx: rng.uniform_in(0.15, 0.85) * span,
            cy: rng.uniform_in(0.15, 0.85) * span,
            rx: rng.uniform_in(0.08, 0.25) * span,
            ry: rng.uniform_in(0.08, 0.25) * span,
        })
        .collect();

    let (input, target, tc) = match spec.task {
        SyntheticTask::SegMaps => (draw_scene(&shapes, s), draw_labels(&shapes, s), 3),
        SyntheticTask::InverseSeg => (draw_labels(&shapes, s), draw_scene(&shapes, s), 3),
        SyntheticTask::Depth => (draw_scene(&shapes, s), draw_depth(&shapes, s), 1),
    };
    let to_tensor = |v: Vec<f64>, c: usize| {
        Tensor::new(v.into_iter().map(E::from_f64).collect(), &[c, s, s])
    };
    PairedSample::new(
        format!("{index:05}"),
        to_tensor(input, 3)?,
        to_tensor(target, tc)?,
    )
}

// ---------------------------------------------------------------------------
// Datasets and batching
// ---------------------------------------------------------------------------

pub struct Dataset<E: Element> {
    pub samples: Vec<PairedSample<E>>,
}

impl<E: Element> Dataset<E> {
    pub fn synthesize(spec: &SyntheticSpec, count: usize) -> Result<Self> {
        let samples = (0..count)
            .map(|i| synth_pair(spec, i as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }

    /// Load `<id>.input.<ext>` / `<id>.target.<ext>` pairs from a directory.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let entries = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
        let mut inputs: Vec<(String, PathBuf)> = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| io_err(dir, e))?.path();
            let name = match path.file_name().and_then(|n| n.to_str()) {
                Some(n) => n.to_string(),
                None => continue,
            };
            for ext in ["png", "ppm", "pgm"] {
                let suffix = format!(".input.{ext}");
                if let Some(id) = name.strip_suffix(&suffix) {
                    inputs.push((id.to_string(), path.clone()));
                }
            }
        }
        inputs.sort();
        if inputs.is_empty() {
            return Err(Error::Data(format!(
                "no *.input.(png|ppm|pgm) files in {}",
                dir.display()
            )));
        }
        let mut samples = Vec::with_capacity(inputs.len());
        for (id, input_path) in inputs {
            let target_path = ["png", "ppm", "pgm"]
                .iter()
                .map(|ext| dir.join(format!("{id}.target.{ext}")))
                .find(|p| p.exists())
                .ok_or_else(|| Error::Data(format!("missing target image for id {id}")))?;
            let input = load_image(&input_path)?;
            let target = load_image(&target_path)?;
            samples.push(PairedSample::new(id, input, target)?);
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Stack per-sample `[c,h,w]` tensors into batch `[b,c,h,w]` pairs.
pub fn stack_batch<E: Element>(samples: &[&PairedSample<E>]) -> Result<(Tensor<E>, Tensor<E>)> {
    if samples.is_empty() {
        return Err(Error::Contract("cannot stack an empty batch".into()));
    }
    let stack = |pick: &dyn Fn(&PairedSample<E>) -> &Tensor<E>| -> Result<Tensor<E>> {
        let first = pick(samples[0]).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * pick(samples[0]).numel());
        for s in samples {
            let t = pick(s);
            if t.shape() != first {
                return Err(Error::dim("stack_batch", t.shape(), &first));
            }
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![samples.len()];
        shape.extend_from_slice(&first);
        Tensor::new(data, &shape)
    };
    Ok((stack(&|s| &s.input)?, stack(&|s| &s.target)?))
}

/// Deterministic shuffled batching: epoch `e` uses the Fisher-Yates
/// permutation seeded by (seed, e); the trailing partial batch is
/// dropped. Batch selection is a pure function of the step index, which
/// is what makes checkpoint resume exact.
#[derive(Clone, Copy, Debug)]
pub struct BatchPlan {
    n: usize,
    batch: usize,
    seed: u64,
}

impl BatchPlan {
    pub fn new(n: usize, batch: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Contract("batcher over an empty dataset".into()));
        }
        if batch == 0 || batch > n {
            return Err(Error::Contract(format!(
                "batch size {batch} invalid for dataset of {n}"
            )));
        }
        Ok(BatchPlan { n, batch, seed })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch
    }

    pub fn indices_for_step(&self, step: u64) -> Vec<usize> {
        let per = self.batches_per_epoch() as u64;
        let epoch = step / per;
        let slot = (step % per) as usize;
        let perm = Rng::for_index(self.seed, epoch).permutation(self.n);
        perm[slot * self.batch..(slot + 1) * self.batch].to_vec()
    }

    /// Endless iterator over batches, epoch by epoch.
    pub fn iter(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0u64..).map(|step| self.indices_for_step(step))
    }
}
