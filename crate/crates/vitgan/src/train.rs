//! The adversarial + L1 optimization loop.
//!
//! One training step in `cgan_l1` mode runs two phases on one tape:
//! the discriminator phase scores (condition, target) against
//! (condition, detached fake) and updates D; the generator phase then
//! re-runs G with gradient tracking, scores the fake through a frozen
//! copy of the updated D, and minimizes `adv + lambda * L1`. The
//! `l1_only` mode runs only the reconstruction phase and never touches
//! a discriminator.

use std::path::Path;

use crate::checkpoint::Container;
use crate::discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorVariant};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::rng::Rng;
use crate::tensor::{Element, Gradients, Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    CganL1,
    L1Only,
}

impl TrainMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cgan_l1" => Ok(TrainMode::CganL1),
            "l1_only" => Ok(TrainMode::L1Only),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected cgan_l1 or l1_only)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::CganL1 => "cgan_l1",
            TrainMode::L1Only => "l1_only",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub mode: TrainMode,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_l1: 100.0,
            lr_g: 2e-4,
            lr_d: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 4,
            total_steps: 200,
            seed: 0,
            mode: TrainMode::CganL1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_l1 < 0.0 {
            return Err(Error::Config("lambda_l1 must be >= 0".into()));
        }
        if self.lr_g <= 0.0 || self.lr_d <= 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("learning rates and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction; one moment pair per parameter, aligned
/// with the owning network's parameter order.
pub struct Adam<E: Element> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, params: &[(String, &Tensor<E>)]) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn moments(&self) -> (&[Tensor<E>], &[Tensor<E>]) {
        (&self.m, &self.v)
    }

    pub fn restore_moments(&mut self, t: u64, m: Vec<Tensor<E>>, v: Vec<Tensor<E>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }

    pub fn step(&mut self, params: &mut [(String, &mut Tensor<E>)], grads: &Gradients<E>) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter mismatch");
        debug_assert!(
            params
                .iter()
                .zip(&self.m)
                .all(|((_, p), m)| p.shape() == m.shape()),
            "parameter order changed under the optimizer"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let one_m_b1 = E::from_f64(1.0 - self.beta1);
        let one_m_b2 = E::from_f64(1.0 - self.beta2);
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);
        let inv_bc1 = E::from_f64(1.0 / bc1);
        let inv_bc2 = E::from_f64(1.0 / bc2);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let n = p.numel();
            let grad = grads.wrt(p).map(Tensor::data);
            let mut m_new = Vec::with_capacity(n);
            let mut v_new = Vec::with_capacity(n);
            let mut p_new = Vec::with_capacity(n);
            let m_old = self.m[i].data();
            let v_old = self.v[i].data();
            let p_old = p.data();
            for j in 0..n {
                let g = grad.map_or(E::ZERO, |g| g[j]);
                let m = b1 * m_old[j] + one_m_b1 * g;
                let v = b2 * v_old[j] + one_m_b2 * g * g;
                let m_hat = m * inv_bc1;
                let v_hat = v * inv_bc2;
                p_new.push(p_old[j] - lr * m_hat / ((v_hat).sqrt() + eps));
                m_new.push(m);
                v_new.push(v);
            }
            self.m[i] = Tensor::new(m_new, p.shape()).expect("same shape");
            self.v[i] = Tensor::new(v_new, p.shape()).expect("same shape");
            **p = Tensor::new(p_new, p.shape()).expect("same shape").with_requires_grad();
        }
    }
}

/// Mean absolute error over all elements.
pub fn l1_loss<E: Element>(tape: &mut Tape<E>, output: &Tensor<E>, target: &Tensor<E>) -> Result<Tensor<E>> {
    if output.shape() != target.shape() {
        return Err(Error::dim("l1_loss", output.shape(), target.shape()));
    }
    let diff = tape.sub(output, target)?;
    let mag = tape.abs(&diff)?;
    tape.mean_all(&mag)
}

/// (d_loss, g_adv): BCE-with-logits against per-cell all-ones/all-zeros
/// targets; d_loss = (BCE(real,1) + BCE(fake,0)) / 2, g_adv = BCE(fake,1).
pub fn gan_losses<E: Element>(
    tape: &mut Tape<E>,
    real_logits: &Tensor<E>,
    fake_logits: &Tensor<E>,
) -> Result<(Tensor<E>, Tensor<E>)> {
    if real_logits.shape() != fake_logits.shape() {
        return Err(Error::dim("gan_losses", real_logits.shape(), fake_logits.shape()));
    }
    let real_term = tape.bce_with_logits(real_logits, E::ONE)?;
    let fake_term = tape.bce_with_logits(fake_logits, E::ZERO)?;
    let sum = tape.add(&real_term, &fake_term)?;
    let d_loss = tape.scale(&sum, E::from_f64(0.5))?;
    let g_adv = tape.bce_with_logits(fake_logits, E::ONE)?;
    Ok((d_loss, g_adv))
}

#[derive(Clone, Copy, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub g_l1: f64,
    pub g_total: f64,
}

impl StepMetrics {
    /// One line of the metrics stream: `step,d_loss,g_adv,g_l1,g_total`.
    pub fn line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.d_loss, self.g_adv, self.g_l1, self.g_total
        )
    }
}

/// Diagnostics emitted alongside the metrics by the traced step.
#[derive(Clone, Copy, Debug, Default)]
pub struct StepTrace {
    /// Largest |dL/dp| any generator parameter received during the
    /// discriminator phase; exactly 0.0 when detachment is correct.
    pub d_step_generator_grad_max: f64,
}

pub struct TrainState<E: Element> {
    pub generator: Generator<E>,
    pub discriminator: Option<Discriminator<E>>,
    pub opt_g: Adam<E>,
    pub opt_d: Option<Adam<E>>,
    pub step: u64,
    pub rng: Rng,
}

impl<E: Element> TrainState<E> {
    pub fn new(
        gen_cfg: GeneratorConfig,
        disc_cfg: Option<DiscriminatorConfig>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::new(cfg.seed);
        let generator = Generator::new(gen_cfg, &mut rng)?;
        let discriminator = disc_cfg.map(|dc| Discriminator::new(dc, &mut rng)).transpose()?;
        let opt_g = Adam::new(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps, &generator.params());
        let opt_d = discriminator
            .as_ref()
            .map(|d| Adam::new(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps, &d.params()));
        Ok(TrainState {
            generator,
            discriminator,
            opt_g,
            opt_d,
            step: 0,
            rng,
        })
    }

    /// cgan_l1 needs a discriminator in the state; name what is missing.
    pub fn ensure_mode(&self, mode: TrainMode) -> Result<()> {
        if mode == TrainMode::CganL1 && self.discriminator.is_none() {
            return Err(Error::Load(
                "state has no 'disc.' parameters (generator-only checkpoint) but mode is cgan_l1"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// One optimization step; see the module docs for the phase structure.
pub fn train_step<E: Element>(
    state: &mut TrainState<E>,
    cond: &Tensor<E>,
    target: &Tensor<E>,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    train_step_traced(state, cond, target, cfg).map(|(m, _)| m)
}

pub fn train_step_traced<E: Element>(
    state: &mut TrainState<E>,
    cond: &Tensor<E>,
    target: &Tensor<E>,
    cfg: &TrainConfig,
) -> Result<(StepMetrics, StepTrace)> {
    if cond.rank() != 4 || cond.shape()[0] == 0 {
        return Err(Error::Contract("train_step requires a nonempty [b,c,h,w] batch".into()));
    }
    if cond.shape()[0] != target.shape()[0]
        || cond.shape()[2..] != target.shape()[2..]
    {
        return Err(Error::dim("train_step batch", cond.shape(), target.shape()));
    }
    state.ensure_mode(cfg.mode)?;
    let step = state.step;
    let lambda = E::from_f64(cfg.lambda_l1);
    let mut tape = Tape::new();
    let mut trace = StepTrace::default();

    let mut d_loss_val = 0.0;
    if cfg.mode == TrainMode::CganL1 {
        // Discriminator phase: the fake comes from a frozen generator
        // copy, so nothing can leak back into G.
        let fake = state.generator.frozen().forward(&mut tape, cond, true)?;
        let disc = state.discriminator.as_mut().expect("checked by ensure_mode");
        let real_score = disc.discriminate(&mut tape, cond, target, true)?;
        let fake_score = disc.discriminate(&mut tape, cond, &fake, true)?;
        let (d_loss, _) = gan_losses(&mut tape, &real_score.logits, &fake_score.logits)?;
        let d_grads = tape.backward(&d_loss)?;
        for (_, p) in state.generator.params() {
            if let Some(g) = d_grads.wrt(p) {
                let m = g.data().iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max);
                trace.d_step_generator_grad_max = trace.d_step_generator_grad_max.max(m);
            }
        }
        state
            .opt_d
            .as_mut()
            .expect("optimizer exists with discriminator")
            .step(&mut disc.params_mut(), &d_grads);
        d_loss_val = d_loss.item()?.to_f64();
    }

    // Generator phase.
    let fake = state.generator.forward(&mut tape, cond, true)?;
    let g_l1 = l1_loss(&mut tape, &fake, target)?;
    let weighted_l1 = tape.scale(&g_l1, lambda)?;
    let (g_adv_val, g_total) = match cfg.mode {
        TrainMode::CganL1 => {
            let mut frozen_d = state
                .discriminator
                .as_ref()
                .expect("checked by ensure_mode")
                .frozen();
            let fake_score = frozen_d.discriminate(&mut tape, cond, &fake, true)?;
            let g_adv = tape.bce_with_logits(&fake_score.logits, E::ONE)?;
            let total = tape.add(&g_adv, &weighted_l1)?;
            (g_adv.item()?.to_f64(), total)
        }
        TrainMode::L1Only => (0.0, weighted_l1),
    };
    let g_grads = tape.backward(&g_total)?;
    state.opt_g.step(&mut state.generator.params_mut(), &g_grads);

    let metrics = StepMetrics {
        step,
        d_loss: d_loss_val,
        g_adv: g_adv_val,
        g_l1: g_l1.item()?.to_f64(),
        g_total: g_total.item()?.to_f64(),
    };
    for (name, v) in [
        ("d_loss", metrics.d_loss),
        ("g_adv", metrics.g_adv),
        ("g_l1", metrics.g_l1),
        ("g_total", metrics.g_total),
    ] {
        if !v.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("{name} is not finite ({v})"),
            });
        }
    }
    state.step += 1;
    Ok((metrics, trace))
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

fn put_gen_cfg(c: &mut Container, cfg: &GeneratorConfig) -> Result<()> {
    for (k, v) in [
        ("image_size", cfg.image_size),
        ("patch_size", cfg.patch_size),
        ("in_channels", cfg.in_channels),
        ("out_channels", cfg.out_channels),
        ("embed_dim", cfg.embed_dim),
        ("num_layers", cfg.num_layers),
        ("num_heads", cfg.num_heads),
        ("mlp_ratio", cfg.mlp_ratio),
        ("residual_channels", cfg.residual_channels),
        ("residual_blocks", cfg.residual_blocks),
    ] {
        c.put_u64s(&format!("cfg.gen.{k}"), &[v as u64])?;
    }
    Ok(())
}

fn get_gen_cfg(c: &Container, consumed: &mut Vec<String>) -> Result<GeneratorConfig> {
    let mut get = |k: &str| -> Result<usize> {
        let name = format!("cfg.gen.{k}");
        let v = c.u64_scalar(&name)? as usize;
        consumed.push(name);
        Ok(v)
    };
    Ok(GeneratorConfig {
        image_size: get("image_size")?,
        patch_size: get("patch_size")?,
        in_channels: get("in_channels")?,
        out_channels: get("out_channels")?,
        embed_dim: get("embed_dim")?,
        num_layers: get("num_layers")?,
        num_heads: get("num_heads")?,
        mlp_ratio: get("mlp_ratio")?,
        residual_channels: get("residual_channels")?,
        residual_blocks: get("residual_blocks")?,
    })
}

fn put_disc_cfg(c: &mut Container, cfg: &DiscriminatorConfig) -> Result<()> {
    let (variant, p, d, l, h) = match &cfg.variant {
        DiscriminatorVariant::ConvPatch => (0u64, 0, 0, 0, 0),
        DiscriminatorVariant::TransformerPatch {
            patch_size,
            embed_dim,
            num_layers,
            num_heads,
        } => (1u64, *patch_size, *embed_dim, *num_layers, *num_heads),
    };
    for (k, v) in [
        ("variant", variant),
        ("input_size", cfg.input_size as u64),
        ("condition_channels", cfg.condition_channels as u64),
        ("image_channels", cfg.image_channels as u64),
        ("base_channels", cfg.base_channels as u64),
        ("num_downsamples", cfg.num_downsamples as u64),
        ("patch_size", p as u64),
        ("embed_dim", d as u64),
        ("num_layers", l as u64),
        ("num_heads", h as u64),
    ] {
        c.put_u64s(&format!("cfg.disc.{k}"), &[v])?;
    }
    Ok(())
}

fn get_disc_cfg(c: &Container, consumed: &mut Vec<String>) -> Result<DiscriminatorConfig> {
    let mut get = |k: &str| -> Result<u64> {
        let name = format!("cfg.disc.{k}");
        let v = c.u64_scalar(&name)?;
        consumed.push(name);
        Ok(v)
    };
    let variant_tag = get("variant")?;
    let input_size = get("input_size")? as usize;
    let condition_channels = get("condition_channels")? as usize;
    let image_channels = get("image_channels")? as usize;
    let base_channels = get("base_channels")? as usize;
    let num_downsamples = get("num_downsamples")? as usize;
    let patch_size = get("patch_size")? as usize;
    let embed_dim = get("embed_dim")? as usize;
    let num_layers = get("num_layers")? as usize;
    let num_heads = get("num_heads")? as usize;
    let variant = match variant_tag {
        0 => DiscriminatorVariant::ConvPatch,
        1 => DiscriminatorVariant::TransformerPatch {
            patch_size,
            embed_dim,
            num_layers,
            num_heads,
        },
        other => return Err(Error::Load(format!("unknown discriminator variant tag {other}"))),
    };
    Ok(DiscriminatorConfig {
        variant,
        input_size,
        condition_channels,
        image_channels,
        base_channels,
        num_downsamples,
    })
}

impl<E: Element> TrainState<E> {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        put_gen_cfg(&mut c, &self.generator.cfg)?;
        for (name, t) in self.generator.params() {
            c.put_tensor(&format!("gen.{name}"), t)?;
        }
        for (name, t) in self.generator.buffers() {
            c.put_tensor(&format!("gen.{name}"), t)?;
        }
        let (gm, gv) = self.opt_g.moments();
        for (i, (name, _)) in self.generator.params().iter().enumerate() {
            c.put_tensor(&format!("opt_g.m.{name}"), &gm[i])?;
            c.put_tensor(&format!("opt_g.v.{name}"), &gv[i])?;
        }
        c.put_u64s("opt_g.t", &[self.opt_g.t])?;
        if let (Some(d), Some(opt_d)) = (&self.discriminator, &self.opt_d) {
            put_disc_cfg(&mut c, &d.cfg)?;
            for (name, t) in d.params() {
                c.put_tensor(&format!("disc.{name}"), t)?;
            }
            for (name, t) in d.buffers() {
                c.put_tensor(&format!("disc.{name}"), t)?;
            }
            let (dm, dv) = opt_d.moments();
            for (i, (name, _)) in d.params().iter().enumerate() {
                c.put_tensor(&format!("opt_d.m.{name}"), &dm[i])?;
                c.put_tensor(&format!("opt_d.v.{name}"), &dv[i])?;
            }
            c.put_u64s("opt_d.t", &[opt_d.t])?;
        }
        c.put_u64s("train.step", &[self.step])?;
        c.put_u64s("train.rng", &self.rng.state())?;
        Ok(c)
    }

    pub fn from_container(c: &Container, cfg: &TrainConfig) -> Result<Self> {
        let mut consumed: Vec<String> = Vec::new();
        let gen_cfg = get_gen_cfg(c, &mut consumed)?;
        let mut throwaway = Rng::new(0);
        let mut generator = Generator::new(gen_cfg, &mut throwaway)?;
        for (name, t) in generator.params_mut() {
            let full = format!("gen.{name}");
            let loaded: Tensor<E> = c.tensor(&full)?;
            if loaded.shape() != t.shape() {
                return Err(Error::Load(format!(
                    "parameter {full} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            *t = loaded.with_requires_grad();
            consumed.push(full);
        }
        for (name, t) in generator.buffers_mut() {
            let full = format!("gen.{name}");
            *t = c.tensor(&full)?;
            consumed.push(full);
        }
        let mut opt_g = Adam::new(cfg.lr_g, cfg.beta1, cfg.beta2, cfg.eps, &generator.params());
        let mut gm = Vec::new();
        let mut gv = Vec::new();
        for (name, _) in generator.params() {
            let mname = format!("opt_g.m.{name}");
            let vname = format!("opt_g.v.{name}");
            gm.push(c.tensor(&mname)?);
            gv.push(c.tensor(&vname)?);
            consumed.push(mname);
            consumed.push(vname);
        }
        opt_g.restore_moments(c.u64_scalar("opt_g.t")?, gm, gv);
        consumed.push("opt_g.t".into());

        let (discriminator, opt_d) = if c.contains("cfg.disc.variant") {
            let disc_cfg = get_disc_cfg(c, &mut consumed)?;
            let mut d = Discriminator::new(disc_cfg, &mut throwaway)?;
            for (name, t) in d.params_mut() {
                let full = format!("disc.{name}");
                let loaded: Tensor<E> = c.tensor(&full)?;
                if loaded.shape() != t.shape() {
                    return Err(Error::Load(format!(
                        "parameter {full} has shape {:?}, expected {:?}",
                        loaded.shape(),
                        t.shape()
                    )));
                }
                *t = loaded.with_requires_grad();
                consumed.push(full);
            }
            for (name, t) in d.buffers_mut() {
                let full = format!("disc.{name}");
                *t = c.tensor(&full)?;
                consumed.push(full);
            }
            let mut opt = Adam::new(cfg.lr_d, cfg.beta1, cfg.beta2, cfg.eps, &d.params());
            let mut dm = Vec::new();
            let mut dv = Vec::new();
            for (name, _) in d.params() {
                let mname = format!("opt_d.m.{name}");
                let vname = format!("opt_d.v.{name}");
                dm.push(c.tensor(&mname)?);
                dv.push(c.tensor(&vname)?);
                consumed.push(mname);
                consumed.push(vname);
            }
            opt.restore_moments(c.u64_scalar("opt_d.t")?, dm, dv);
            consumed.push("opt_d.t".into());
            (Some(d), Some(opt))
        } else {
            (None, None)
        };

        let step = c.u64_scalar("train.step")?;
        let rng_state = c.u64s("train.rng")?;
        if rng_state.len() != 4 {
            return Err(Error::Load("train.rng must hold 4 words".into()));
        }
        consumed.push("train.step".into());
        consumed.push("train.rng".into());

        let consumed: std::collections::HashSet<String> = consumed.into_iter().collect();
        for name in c.names() {
            if !consumed.contains(name) {
                return Err(Error::Load(format!("unknown parameter name {name}")));
            }
        }

        Ok(TrainState {
            generator,
            discriminator,
            opt_g,
            opt_d,
            step,
            rng: Rng::from_state([rng_state[0], rng_state[1], rng_state[2], rng_state[3]]),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.write_to(path)
    }

    pub fn load(path: &Path, cfg: &TrainConfig) -> Result<Self> {
        Self::from_container(&Container::read_from(path)?, cfg)
    }
}
