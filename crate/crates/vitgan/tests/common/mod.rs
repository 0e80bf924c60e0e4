//! Shared test oracles: central finite differences and direct-summation
//! reference implementations, all independent of the library's compute
//! paths (plain loops over plain slices).

#![allow(dead_code)]

pub mod checks;

use vitgan::tensor::{Tape, Tensor};

pub const FD_H: f64 = 1e-5;
pub const FD_TOL_ABS: f64 = 1e-4;
pub const FD_TOL_REL: f64 = 1e-3;

/// A differentiable computation under test: owns its parameters and a
/// fixed input, and maps a tape to a scalar loss.
pub trait Checkable {
    fn params(&mut self) -> Vec<(String, &mut Tensor<f64>)>;
    fn loss(&mut self, tape: &mut Tape<f64>) -> Tensor<f64>;
}

fn eval_loss<C: Checkable>(c: &mut C) -> f64 {
    let mut tape = Tape::new();
    c.loss(&mut tape).item().expect("scalar loss")
}

fn nudge<C: Checkable>(c: &mut C, param: usize, elem: usize, delta: f64) {
    let mut params = c.params();
    let p = &mut params[param].1;
    let mut data = p.data().to_vec();
    data[elem] += delta;
    **p = Tensor::new(data, p.shape())
        .expect("same shape")
        .with_requires_grad();
}

/// Assert autodiff gradients match central finite differences for every
/// element of every parameter, within max(FD_TOL_ABS, FD_TOL_REL * mag).
pub fn grad_check<C: Checkable>(label: &str, c: &mut C) {
    let mut tape = Tape::new();
    let loss = c.loss(&mut tape);
    let grads = tape.backward(&loss).expect("backward");
    let analytic: Vec<(String, Option<Vec<f64>>, usize)> = c
        .params()
        .iter()
        .map(|(name, p)| {
            (
                name.clone(),
                grads.wrt(p).map(|g| g.data().to_vec()),
                p.numel(),
            )
        })
        .collect();
    assert!(!analytic.is_empty(), "{label}: no parameters to check");
    for (i, (name, grad, numel)) in analytic.iter().enumerate() {
        for j in 0..*numel {
            nudge(c, i, j, FD_H);
            let plus = eval_loss(c);
            nudge(c, i, j, -2.0 * FD_H);
            let minus = eval_loss(c);
            nudge(c, i, j, FD_H);
            let fd = (plus - minus) / (2.0 * FD_H);
            let ad = grad.as_ref().map_or(0.0, |g| g[j]);
            let tol = FD_TOL_ABS.max(FD_TOL_REL * ad.abs().max(fd.abs()));
            assert!(
                (ad - fd).abs() <= tol,
                "{label}: {name}[{j}] autodiff {ad} vs finite-diff {fd} (tol {tol})"
            );
        }
    }
}

/// Loss "sum(output * weights)" with fixed pseudo-random weights, so
/// every output element influences the scalar.
pub fn weighted_sum(tape: &mut Tape<f64>, out: &Tensor<f64>, weights: &Tensor<f64>) -> Tensor<f64> {
    let prod = tape.mul(out, weights).expect("same shape");
    tape.sum_all(&prod).expect("sum")
}

// ---------------------------------------------------------------------------
// Direct-summation oracles
// ---------------------------------------------------------------------------

/// Scaled dot-product attention by three explicit loops.
pub fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], b: usize, t: usize, dk: usize) -> Vec<f64> {
    let mut out = vec![0.0; b * t * dk];
    let scale = 1.0 / (dk as f64).sqrt();
    for bi in 0..b {
        let base = bi * t * dk;
        for i in 0..t {
            let mut scores = vec![0.0; t];
            for j in 0..t {
                let mut dot = 0.0;
                for d in 0..dk {
                    dot += q[base + i * dk + d] * k[base + j * dk + d];
                }
                scores[j] = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for d in 0..dk {
                let mut acc = 0.0;
                for j in 0..t {
                    acc += exps[j] / z * v[base + j * dk + d];
                }
                out[base + i * dk + d] = acc;
            }
        }
    }
    out
}

/// Multi-head attention by slicing the projection weights per head,
/// running the single-head oracle on each slice, concatenating, and
/// applying the output projection.
#[allow(clippy::too_many_arguments)]
pub fn mha_oracle(
    x: &[f64],
    b: usize,
    t: usize,
    d: usize,
    heads: usize,
    wq: (&[f64], &[f64]),
    wk: (&[f64], &[f64]),
    wv: (&[f64], &[f64]),
    wo: (&[f64], &[f64]),
) -> Vec<f64> {
    let dk = d / heads;
    let project = |w: (&[f64], &[f64])| -> Vec<f64> {
        // [b,t,d] @ [d,d] + bias
        let mut out = vec![0.0; b * t * d];
        for bi in 0..b {
            for i in 0..t {
                for o in 0..d {
                    let mut acc = w.1[o];
                    for c in 0..d {
                        acc += x[(bi * t + i) * d + c] * w.0[c * d + o];
                    }
                    out[(bi * t + i) * d + o] = acc;
                }
            }
        }
        out
    };
    let q = project(wq);
    let k = project(wk);
    let v = project(wv);
    // Per head: gather columns [h*dk, (h+1)*dk), run attention, scatter back.
    let mut concat = vec![0.0; b * t * d];
    for h in 0..heads {
        let slice = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; b * t * dk];
            for bi in 0..b {
                for i in 0..t {
                    for c in 0..dk {
                        out[(bi * t + i) * dk + c] = src[(bi * t + i) * d + h * dk + c];
                    }
                }
            }
            out
        };
        let head = attention_oracle(&slice(&q), &slice(&k), &slice(&v), b, t, dk);
        for bi in 0..b {
            for i in 0..t {
                for c in 0..dk {
                    concat[(bi * t + i) * d + h * dk + c] = head[(bi * t + i) * dk + c];
                }
            }
        }
    }
    // Output projection.
    let mut out = vec![0.0; b * t * d];
    for bi in 0..b {
        for i in 0..t {
            for o in 0..d {
                let mut acc = wo.1[o];
                for c in 0..d {
                    acc += concat[(bi * t + i) * d + c] * wo.0[c * d + o];
                }
                out[(bi * t + i) * d + o] = acc;
            }
        }
    }
    out
}

/// Cross-correlation by quadruple loop, one image.
pub fn conv2d_oracle(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    weight: &[f64],
    (co, kh, kw): (usize, usize, usize),
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; co * oh * ow];
    for oc in 0..co {
        for oi in 0..oh {
            for oj in 0..ow {
                let mut acc = 0.0;
                for ic in 0..ci {
                    for ki in 0..kh {
                        for kj in 0..kw {
                            let y = (oi * stride + ki) as isize - pad as isize;
                            let xx = (oj * stride + kj) as isize - pad as isize;
                            if y >= 0 && y < h as isize && xx >= 0 && xx < w as isize {
                                acc += x[(ic * h + y as usize) * w + xx as usize]
                                    * weight[((oc * ci + ic) * kh + ki) * kw + kj];
                            }
                        }
                    }
                }
                out[(oc * oh + oi) * ow + oj] = acc;
            }
        }
    }
    out
}

/// SSIM by explicit per-window two-pass statistics (weighted mean first,
/// then weighted central moments), Gaussian 11x11 sigma 1.5 window.
pub fn ssim_oracle(x: &[f64], y: &[f64], h: usize, w: usize, dynamic_range: f64) -> f64 {
    let win = 11usize.min(h).min(w);
    let half = (win as f64 - 1.0) / 2.0;
    let mut kernel = vec![0.0; win * win];
    let mut total = 0.0;
    for i in 0..win * win {
        let ky = (i / win) as f64 - half;
        let kx = (i % win) as f64 - half;
        kernel[i] = (-(kx * kx + ky * ky) / (2.0 * 1.5 * 1.5)).exp();
        total += kernel[i];
    }
    for v in kernel.iter_mut() {
        *v /= total;
    }
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let (oh, ow) = (h - win + 1, w - win + 1);
    let mut acc = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut mx = 0.0;
            let mut my = 0.0;
            for ky in 0..win {
                for kx in 0..win {
                    let g = kernel[ky * win + kx];
                    mx += g * x[(oy + ky) * w + ox + kx];
                    my += g * y[(oy + ky) * w + ox + kx];
                }
            }
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut cov = 0.0;
            for ky in 0..win {
                for kx in 0..win {
                    let g = kernel[ky * win + kx];
                    let dx = x[(oy + ky) * w + ox + kx] - mx;
                    let dy = y[(oy + ky) * w + ox + kx] - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    acc / (oh * ow) as f64
}
