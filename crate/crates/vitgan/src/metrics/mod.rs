//! Image-quality metrics: exact windowed SSIM, Frechet distance over
//! pluggable feature statistics, and the Inception-Score formula over
//! pluggable class-probability providers.
//!
//! No pretrained network ships with the crate; anything that would need
//! one is abstracted behind [`Provider`]. The default provider pools
//! pixels, which keeps every formula exactly testable.

mod linalg;

pub use linalg::{matmul_square, sqrtm_psd, sym_eigen};

use std::collections::HashMap;
use std::path::Path;

use crate::data::PairedSample;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::tensor::{Element, Tape, Tensor};

// ---------------------------------------------------------------------------
// SSIM
// ---------------------------------------------------------------------------

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut w: Vec<f64> = (0..size * size)
        .map(|i| {
            let y = (i / size) as f64 - half;
            let x = (i % size) as f64 - half;
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    w
}

fn image_dims<E: Element>(t: &Tensor<E>) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [h, w] => Ok((1, *h, *w)),
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::dim("ssim image", s, &[0, 0, 0])),
    }
}

/// Mean local SSIM over all fully-covered Gaussian window positions;
/// multi-channel images average the per-channel values. `dynamic_range`
/// is the value span L (2.0 for images in [-1, 1]).
pub fn ssim<E: Element>(x: &Tensor<E>, y: &Tensor<E>, dynamic_range: f64) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::dim("ssim", x.shape(), y.shape()));
    }
    let (c, h, w) = image_dims(x)?;
    let win = SSIM_WINDOW.min(h).min(w);
    let kernel = gaussian_window(win, SSIM_SIGMA);
    let c1 = (SSIM_K1 * dynamic_range).powi(2);
    let c2 = (SSIM_K2 * dynamic_range).powi(2);
    let (oh, ow) = (h - win + 1, w - win + 1);
    if oh == 0 || ow == 0 {
        return Err(Error::Contract(format!("image {h}x{w} smaller than SSIM window")));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let xd = &x.data()[ch * h * w..][..h * w];
        let yd = &y.data()[ch * h * w..][..h * w];
        let mut ch_sum = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for ky in 0..win {
                    for kx in 0..win {
                        let g = kernel[ky * win + kx];
                        let xv = xd[(oy + ky) * w + ox + kx].to_f64();
                        let yv = yd[(oy + ky) * w + ox + kx].to_f64();
                        mx += g * xv;
                        my += g * yv;
                        mxx += g * xv * xv;
                        myy += g * yv * yv;
                        mxy += g * xv * yv;
                    }
                }
                let vx = mxx - mx * mx;
                let vy = myy - my * my;
                let cov = mxy - mx * my;
                let num = (2.0 * mx * my + c1) * (2.0 * cov + c2);
                let den = (mx * mx + my * my + c1) * (vx + vy + c2);
                ch_sum += num / den;
            }
        }
        total += ch_sum / (oh * ow) as f64;
    }
    Ok(total / c as f64)
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major d x d covariance, unbiased (n - 1) estimator.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::Contract(format!(
                "covariance needs at least 2 samples, got {n}"
            )));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Contract("feature vectors have mixed dimensions".into()));
        }
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, &v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n as f64;
        }
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        let denom = (n - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }
}

/// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2)); the cross term is
/// evaluated as tr( sqrt( sqrt(Sa) Sb sqrt(Sa) ) ), negative eigenvalues
/// clipped at zero.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if d != b.dim() {
        return Err(Error::Contract(format!(
            "feature dimensions differ: {d} vs {}",
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();

    let root_a = sqrtm_psd(&a.cov, d)?;
    let inner = matmul_square(&root_a, &matmul_square(&b.cov, &root_a, d), d);
    let eig = sym_eigen(&inner, d)?;
    let tr_cross: f64 = eig.values.iter().map(|&l| l.max(0.0).sqrt()).sum();

    let value = mean_term + tr_a + tr_b - 2.0 * tr_cross;
    if !value.is_finite() {
        return Err(Error::Numeric(format!("FID evaluated to {value}")));
    }
    Ok(value.max(0.0))
}

// ---------------------------------------------------------------------------
// Inception Score
// ---------------------------------------------------------------------------

fn check_rows(probs: &[Vec<f64>]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::Contract("inception score over zero images".into()));
    }
    let k = probs[0].len();
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k {
            return Err(Error::Contract("probability rows have mixed lengths".into()));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&p| p < 0.0) {
            return Err(Error::Contract(format!(
                "row {i} is not a probability distribution (sum {s})"
            )));
        }
    }
    Ok(k)
}

/// exp of the mean KL divergence between each row and the row marginal.
pub fn inception_score(probs: &[Vec<f64>]) -> Result<f64> {
    let k = check_rows(probs)?;
    let n = probs.len() as f64;
    let mut marginal = vec![0.0; k];
    for row in probs {
        for (m, &p) in marginal.iter_mut().zip(row) {
            *m += p / n;
        }
    }
    let mut kl_sum = 0.0;
    for row in probs {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                kl_sum += p * (p.ln() - marginal[j].ln());
            }
        }
    }
    Ok((kl_sum / n).exp())
}

/// k-split variant: mean and population std of per-split scores.
pub fn inception_score_splits(probs: &[Vec<f64>], splits: usize) -> Result<(f64, f64)> {
    if splits == 0 || probs.len() < splits {
        return Err(Error::Contract(format!(
            "cannot form {splits} splits from {} rows",
            probs.len()
        )));
    }
    let per = probs.len() / splits;
    let mut scores = Vec::with_capacity(splits);
    for s in 0..splits {
        let lo = s * per;
        let hi = if s == splits - 1 { probs.len() } else { lo + per };
        scores.push(inception_score(&probs[lo..hi])?);
    }
    let mean = scores.iter().sum::<f64>() / splits as f64;
    let var = scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((mean, var.sqrt()))
}

// ---------------------------------------------------------------------------
// Feature / probability providers
// ---------------------------------------------------------------------------

/// Maps images to fixed-dimension feature vectors and class distributions.
/// `key` distinguishes real from generated entries for providers that look
/// embeddings up externally; evaluation passes `real/<id>` and `gen/<id>`.
pub trait Provider<E: Element> {
    fn feature_dim(&self) -> usize;
    fn features(&self, key: &str, img: &Tensor<E>) -> Result<Vec<f64>>;

    fn n_classes(&self) -> usize {
        self.feature_dim()
    }

    /// Default class distribution: softmax over the feature vector.
    fn class_probs(&self, key: &str, img: &Tensor<E>) -> Result<Vec<f64>> {
        let f = self.features(key, img)?;
        let max = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = f.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(exps.into_iter().map(|e| e / sum).collect())
    }
}

/// Average-pooled grayscale pixels; `grid`=8 gives 64 features. Purely
/// deterministic, which makes every metric formula exactly testable.
pub struct PixelPoolProvider {
    pub grid: usize,
}

impl Default for PixelPoolProvider {
    fn default() -> Self {
        PixelPoolProvider { grid: 8 }
    }
}

impl<E: Element> Provider<E> for PixelPoolProvider {
    fn feature_dim(&self) -> usize {
        self.grid * self.grid
    }

    fn features(&self, _key: &str, img: &Tensor<E>) -> Result<Vec<f64>> {
        let (c, h, w) = image_dims(img)?;
        if h < self.grid || w < self.grid {
            return Err(Error::Contract(format!(
                "image {h}x{w} smaller than pooling grid {}",
                self.grid
            )));
        }
        let g = self.grid;
        let mut out = vec![0.0; g * g];
        for gy in 0..g {
            let y0 = gy * h / g;
            let y1 = (gy + 1) * h / g;
            for gx in 0..g {
                let x0 = gx * w / g;
                let x1 = (gx + 1) * w / g;
                let mut acc = 0.0;
                for ch in 0..c {
                    let plane = &img.data()[ch * h * w..][..h * w];
                    for y in y0..y1 {
                        for x in x0..x1 {
                            acc += plane[y * w + x].to_f64();
                        }
                    }
                }
                out[gy * g + gx] = acc / ((y1 - y0) * (x1 - x0) * c) as f64;
            }
        }
        Ok(out)
    }
}

/// Looks up precomputed embeddings by key from a binary file of records:
/// `u32 key length, UTF-8 key, d_f little-endian f32 values` each.
pub struct FileEmbeddingProvider {
    dim: usize,
    map: HashMap<String, Vec<f64>>,
}

impl FileEmbeddingProvider {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut map = HashMap::new();
        let mut pos = 0usize;
        while pos < bytes.len() {
            if pos + 4 > bytes.len() {
                return Err(Error::Load("truncated embedding record header".into()));
            }
            let klen =
                u32::from_le_bytes(bytes[pos..pos + 4].try_into().expect("4 bytes")) as usize;
            pos += 4;
            if pos + klen + dim * 4 > bytes.len() {
                return Err(Error::Load("truncated embedding record".into()));
            }
            let key = std::str::from_utf8(&bytes[pos..pos + klen])
                .map_err(|_| Error::Load("embedding key is not UTF-8".into()))?
                .to_string();
            pos += klen;
            let mut vals = Vec::with_capacity(dim);
            for i in 0..dim {
                let b = &bytes[pos + 4 * i..pos + 4 * i + 4];
                vals.push(f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64);
            }
            pos += dim * 4;
            if map.insert(key.clone(), vals).is_some() {
                return Err(Error::Load(format!("duplicate embedding key {key}")));
            }
        }
        Ok(FileEmbeddingProvider { dim, map })
    }

    pub fn write(path: &Path, dim: usize, items: &[(String, Vec<f32>)]) -> Result<()> {
        let mut out = Vec::new();
        for (key, vals) in items {
            if vals.len() != dim {
                return Err(Error::Contract(format!(
                    "embedding for {key} has {} values, expected {dim}",
                    vals.len()
                )));
            }
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

impl<E: Element> Provider<E> for FileEmbeddingProvider {
    fn feature_dim(&self) -> usize {
        self.dim
    }

    fn features(&self, key: &str, _img: &Tensor<E>) -> Result<Vec<f64>> {
        self.map
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no precomputed embedding for {key}")))
    }
}

// ---------------------------------------------------------------------------
// Model evaluation
// ---------------------------------------------------------------------------

/// Anything that maps a `[c,h,w]` input image to an output image.
pub trait Translate<E: Element> {
    fn translate(&mut self, input: &Tensor<E>) -> Result<Tensor<E>>;
}

impl<E: Element> Translate<E> for Generator<E> {
    fn translate(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(Error::dim("translate input", s, &[0, 0, 0]));
        }
        let mut tape = Tape::new();
        let batched = tape.reshape(input, &[1, s[0], s[1], s[2]])?;
        let mut frozen = self.frozen();
        let out = frozen.forward(&mut tape, &batched, false)?;
        let out_shape = [out.shape()[1], out.shape()[2], out.shape()[3]];
        let mut t2 = Tape::new();
        t2.reshape(&out.detach(), &out_shape)
    }
}

/// Passes the input through unchanged; a diagnostic stub.
pub struct IdentityTranslate;

impl<E: Element> Translate<E> for IdentityTranslate {
    fn translate(&mut self, input: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(input.detach())
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub fid: f64,
    pub inception: f64,
    pub ssim_mean: f64,
    pub samples: usize,
}

impl Report {
    /// Aligned table in the published column order, the reference rows of
    /// the original Cityscapes comparison as an ordinal footer, then a
    /// machine-readable key=value dump.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<24} {:>12} {:>8} {:>8}\n",
            "model", "FID", "IS", "SSIM"
        ));
        s.push_str(&format!(
            "{:<24} {:>12.4} {:>8.4} {:>8.4}\n",
            "this-run",
            self.fid,
            self.inception,
            self.ssim_mean
        ));
        s.push('\n');
        s.push_str("reference (original Cityscapes comparison; ordinal only, not reproduced here):\n");
        s.push_str(&format!(
            "{:<24} {:>12} {:>8} {:>8}\n",
            "tensor-to-image", "939", "1.281", "0.46"
        ));
        s.push_str(&format!(
            "{:<24} {:>12} {:>8} {:>8}\n",
            "u-net", "4318", "1.280", "0.36"
        ));
        s.push_str(&format!(
            "{:<24} {:>12} {:>8} {:>8}\n",
            "autoencoder", "6434", "1.343", "0.25"
        ));
        s.push('\n');
        s.push_str(&format!("fid={}\n", self.fid));
        s.push_str(&format!("is={}\n", self.inception));
        s.push_str(&format!("ssim_mean={}\n", self.ssim_mean));
        s.push_str(&format!("n={}\n", self.samples));
        s
    }
}

/// Run inference over the dataset, fit Gaussians to real/generated
/// features, and aggregate FID, IS, and mean SSIM.
pub fn evaluate_model<E: Element>(
    translator: &mut dyn Translate<E>,
    dataset: &[PairedSample<E>],
    provider: &dyn Provider<E>,
) -> Result<Report> {
    if dataset.is_empty() {
        return Err(Error::Data("evaluation dataset is empty".into()));
    }
    let mut real_features = Vec::with_capacity(dataset.len());
    let mut gen_features = Vec::with_capacity(dataset.len());
    let mut probs = Vec::with_capacity(dataset.len());
    let mut ssim_sum = 0.0;
    for sample in dataset {
        let out = translator.translate(&sample.input)?;
        real_features.push(provider.features(&format!("real/{}", sample.id), &sample.target)?);
        gen_features.push(provider.features(&format!("gen/{}", sample.id), &out)?);
        probs.push(provider.class_probs(&format!("gen/{}", sample.id), &out)?);
        ssim_sum += ssim(&sample.target, &out, 2.0)?;
    }
    let stats_real = GaussianStats::from_samples(&real_features)?;
    let stats_gen = GaussianStats::from_samples(&gen_features)?;
    Ok(Report {
        fid: fid(&stats_real, &stats_gen)?,
        inception: inception_score(&probs)?,
        ssim_mean: ssim_sum / dataset.len() as f64,
        samples: dataset.len(),
    })
}

/// Mean absolute discrete Laplacian over interior pixels: the
/// high-frequency energy used by the sharpness comparison.
pub fn mean_abs_laplacian<E: Element>(img: &Tensor<E>) -> Result<f64> {
    let (c, h, w) = image_dims(img)?;
    if h < 3 || w < 3 {
        return Err(Error::Contract("laplacian needs at least 3x3 images".into()));
    }
    let mut acc = 0.0;
    for ch in 0..c {
        let p = &img.data()[ch * h * w..][..h * w];
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let v = 4.0 * p[y * w + x].to_f64()
                    - p[(y - 1) * w + x].to_f64()
                    - p[(y + 1) * w + x].to_f64()
                    - p[y * w + x - 1].to_f64()
                    - p[y * w + x + 1].to_f64();
                acc += v.abs();
            }
        }
    }
    Ok(acc / (c * (h - 2) * (w - 2)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn ssim_self_is_one() {
        let mut rng = Rng::new(40);
        let x = Tensor::<f64>::from_fn(&[3, 16, 16], |_| rng.uniform_in(-1.0, 1.0));
        let s = ssim(&x, &x.clone(), 2.0).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_images_reduce_to_luminance_term() {
        let a = Tensor::<f64>::full(&[16, 16], 0.2);
        let b = Tensor::<f64>::full(&[16, 16], 0.6);
        let s = ssim(&a, &b, 2.0).unwrap();
        let c1 = (0.01f64 * 2.0).powi(2);
        let want = (2.0 * 0.2 * 0.6 + c1) / (0.2f64.powi(2) + 0.6f64.powi(2) + c1);
        assert!((s - want).abs() < 1e-9, "{s} vs {want}");
    }

    #[test]
    fn ssim_symmetry_and_bounds() {
        let mut rng = Rng::new(41);
        let x = Tensor::<f64>::from_fn(&[16, 16], |_| rng.uniform_in(-1.0, 1.0));
        let y = Tensor::<f64>::from_fn(&[16, 16], |_| rng.uniform_in(-1.0, 1.0));
        let a = ssim(&x, &y, 2.0).unwrap();
        let b = ssim(&y, &x, 2.0).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn fid_identical_stats_is_zero() {
        let mut rng = Rng::new(42);
        let samples: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..5).map(|_| rng.normal()).collect())
            .collect();
        let s = GaussianStats::from_samples(&samples).unwrap();
        let f = fid(&s, &s.clone()).unwrap();
        assert!(f.abs() < 1e-6, "{f}");
    }

    #[test]
    fn fid_identity_covariance_mean_shift() {
        // Sa = Sb = I and ||mu shift|| = 2 -> FID = 4 (trace terms cancel).
        let d = 4;
        let eye: Vec<f64> = (0..d * d)
            .map(|i| if i / d == i % d { 1.0 } else { 0.0 })
            .collect();
        let a = GaussianStats {
            mean: vec![0.0; d],
            cov: eye.clone(),
        };
        let b = GaussianStats {
            mean: vec![1.0, 1.0, 1.0, 1.0],
            cov: eye,
        };
        let f = fid(&a, &b).unwrap();
        assert!((f - 4.0).abs() < 1e-9, "{f}");
    }

    #[test]
    fn fid_diagonal_closed_form_matches_eigen_path() {
        // Commuting (diagonal) covariances: FID trace term is
        // sum (sqrt(a_i) - sqrt(b_i))^2.
        let d = 6;
        let avals = [0.5, 1.0, 2.0, 3.0, 0.25, 4.0];
        let bvals = [1.5, 0.75, 2.5, 0.5, 1.0, 2.0];
        let diag = |vals: &[f64]| -> Vec<f64> {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                m[i * d + i] = vals[i];
            }
            m
        };
        let a = GaussianStats {
            mean: vec![0.0; d],
            cov: diag(&avals),
        };
        let b = GaussianStats {
            mean: vec![0.0; d],
            cov: diag(&bvals),
        };
        let closed: f64 = avals
            .iter()
            .zip(&bvals)
            .map(|(&x, &y)| (x.sqrt() - y.sqrt()).powi(2))
            .sum();
        let f = fid(&a, &b).unwrap();
        assert!((f - closed).abs() < 1e-6, "{f} vs {closed}");
    }

    #[test]
    fn inception_score_identical_rows_is_one() {
        let rows = vec![vec![0.25; 4]; 10];
        let is = inception_score(&rows).unwrap();
        assert!((is - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inception_score_uniform_one_hot_is_n() {
        let n = 5;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r
            })
            .collect();
        let is = inception_score(&rows).unwrap();
        assert!((is - n as f64).abs() < 1e-9, "{is}");
    }

    #[test]
    fn inception_score_matches_double_loop_oracle() {
        let mut rng = Rng::new(43);
        let n = 20;
        let k = 7;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.uniform() + 1e-3).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        // Oracle: explicit marginal then per-row KL.
        let mut marginal = vec![0.0; k];
        for row in &rows {
            for j in 0..k {
                marginal[j] += row[j] / n as f64;
            }
        }
        let mut mean_kl = 0.0;
        for row in &rows {
            let mut kl = 0.0;
            for j in 0..k {
                kl += row[j] * (row[j] / marginal[j]).ln();
            }
            mean_kl += kl / n as f64;
        }
        let want = mean_kl.exp();
        let got = inception_score(&rows).unwrap();
        assert!((got - want).abs() < 1e-9);
        // Bounds: 1 <= IS <= k.
        assert!(got >= 1.0 - 1e-12 && got <= k as f64 + 1e-12);
    }

    #[test]
    fn inception_score_rejects_unnormalized_rows() {
        let rows = vec![vec![0.5, 0.2]];
        assert!(matches!(inception_score(&rows), Err(Error::Contract(_))));
    }

    #[test]
    fn laplacian_flat_image_is_zero_and_noise_is_not() {
        let flat = Tensor::<f64>::full(&[8, 8], 0.3);
        assert!(mean_abs_laplacian(&flat).unwrap() < 1e-12);
        let mut rng = Rng::new(44);
        let noisy = Tensor::<f64>::from_fn(&[8, 8], |_| rng.uniform_in(-1.0, 1.0));
        assert!(mean_abs_laplacian(&noisy).unwrap() > 0.1);
    }
}
