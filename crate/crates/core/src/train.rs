//! Single optimisation steps: the generator-only initialisation step and
//! the alternating discriminator/generator step, plus checkpoint export of
//! the full training state.
//!
//! The cyclic learning rate is indexed by one global step counter that runs
//! through both phases.

use alloc::format;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{shape_err, Error, Result};
use crate::losses::{
    adversarial_loss_d_weighted, adversarial_loss_g, AdversarialWeights, ExtractorConfig,
    FeatureExtractor, LossWeights,
};
use crate::models::{DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet};
use crate::nn::{cyclic_lr, AdamW, LrSchedule, Mode, Network};
use crate::tensor::Tensor;

/// Everything a single step needs besides the networks and data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConfig {
    pub schedule: LrSchedule,
    pub optimizer: AdamW,
    pub loss: LossWeights,
    pub adversarial: AdversarialWeights,
}

impl StepConfig {
    pub fn new(schedule: LrSchedule) -> Self {
        Self {
            schedule,
            optimizer: AdamW::default(),
            loss: LossWeights::default(),
            adversarial: AdversarialWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub lr: f64,
    /// Absent during the initialisation phase.
    pub d_loss: Option<f64>,
    pub g_adv: Option<f64>,
    pub g_con: f64,
    /// `g_adv + omega * g_con` (just `g_con` during initialisation).
    pub total: f64,
}

/// Photos, cartoons and edge-smoothed cartoons of one step.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub p: Tensor,
    pub c: Tensor,
    pub e: Tensor,
}

impl TrainingBatch {
    pub fn new(p: Tensor, c: Tensor, e: Tensor) -> Result<Self> {
        p.ensure_same_shape(&c, "TrainingBatch")?;
        p.ensure_same_shape(&e, "TrainingBatch")?;
        Ok(Self { p, c, e })
    }
}

/// SplitMix64 of `seed` and a stream index, for independent sub-seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn ensure_finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(String::from(what)))
    }
}

fn apply_adamw(net: &mut Network, prefix: &str, lr: f64, opt: &AdamW) -> Result<()> {
    let mut result = Ok(());
    net.for_each_param_mut(|name, p| {
        if result.is_ok() {
            result = opt.step(p, lr, &format!("{prefix}.{name}"));
        }
    });
    result
}

/// Generator-only reconstruction step on `content_loss(p, G(p))`.
pub fn init_step(
    g: &mut GeneratorNet,
    f: &mut FeatureExtractor,
    photos: &Tensor,
    cfg: &StepConfig,
    t: u64,
) -> Result<StepStats> {
    let lr = cyclic_lr(t, &cfg.schedule);
    let (gp, tape) = g.forward(photos, Mode::Train)?;
    let con = f.content_loss(photos, &gp)?;
    ensure_finite(con.value, "generator content loss")?;
    g.net.zero_grad();
    g.backward(&tape, &con.grad, true)?;
    apply_adamw(&mut g.net, "generator", lr, &cfg.optimizer)?;
    Ok(StepStats {
        step: t,
        lr,
        d_loss: None,
        g_adv: None,
        g_con: con.value,
        total: con.value,
    })
}

fn split3(t: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let n = t.shape().n / 3;
    Ok((t.slice_batch(0, n)?, t.slice_batch(n, 2 * n)?, t.slice_batch(2 * n, 3 * n)?))
}

/// Discriminator objective on the three populations, evaluated as one
/// concatenated batch `[c; e; gp]` so batch statistics are shared.
pub fn discriminator_loss(
    d: &mut DiscriminatorNet,
    c: &Tensor,
    e: &Tensor,
    gp: &Tensor,
    w: &AdversarialWeights,
    mode: Mode,
) -> Result<f64> {
    let logits = d.infer(&Tensor::concat_batch(&[c, e, gp])?, mode)?;
    let (lc, le, lg) = split3(&logits)?;
    Ok(adversarial_loss_d_weighted(&lc, &le, &lg, w)?.value)
}

/// One alternating update: the discriminator on the adversarial objective
/// with the generator output held fixed, then the generator on
/// `adv + omega * con` through the updated discriminator with its
/// parameters and running statistics frozen. Both use `cyclic_lr(t)`.
pub fn gan_step(
    g: &mut GeneratorNet,
    d: &mut DiscriminatorNet,
    f: &mut FeatureExtractor,
    batch: &TrainingBatch,
    cfg: &StepConfig,
    t: u64,
) -> Result<StepStats> {
    let lr = cyclic_lr(t, &cfg.schedule);
    let n = batch.p.shape().n;
    // The tape of this pass is reused for the generator update: the
    // generator's parameters do not change in between.
    let (gp, g_tape) = g.forward(&batch.p, Mode::Train)?;
    let x = Tensor::concat_batch(&[&batch.c, &batch.e, &gp])?;

    let (logits, d_tape) = d.forward(&x, Mode::Train)?;
    let (lc, le, lg) = split3(&logits)?;
    let dl = adversarial_loss_d_weighted(&lc, &le, &lg, &cfg.adversarial)?;
    ensure_finite(dl.value, "discriminator loss")?;
    let d_grad = Tensor::concat_batch(&[&dl.grad_cartoon, &dl.grad_smoothed, &dl.grad_generated])?;
    d.net.zero_grad();
    d.backward(&d_tape, &d_grad, true)?;
    apply_adamw(&mut d.net, "discriminator", lr, &cfg.optimizer)?;

    let (logits, d_tape) = d.forward(&x, Mode::TrainFrozen)?;
    let lg = logits.slice_batch(2 * n, 3 * n)?;
    let adv = adversarial_loss_g(&lg)?;
    let zeros = Tensor::zeros(lg.shape());
    let gx = d.backward(&d_tape, &Tensor::concat_batch(&[&zeros, &zeros, &adv.grad])?, false)?;
    let mut g_grad = gx.slice_batch(2 * n, 3 * n)?;

    let con = f.content_loss(&batch.p, &gp)?;
    let total = crate::losses::total_loss(adv.value, con.value, &cfg.loss);
    ensure_finite(total, "generator loss")?;
    g_grad.axpy(cfg.loss.omega as f32, &con.grad)?;
    g.net.zero_grad();
    g.backward(&g_tape, &g_grad, true)?;
    apply_adamw(&mut g.net, "generator", lr, &cfg.optimizer)?;

    Ok(StepStats {
        step: t,
        lr,
        d_loss: Some(dl.value),
        g_adv: Some(adv.value),
        g_con: con.value,
        total,
    })
}

/// Writes parameters (and optionally AdamW moments and step counts) and
/// batch-norm buffers under `prefix`.
pub fn export_network(ck: &mut Checkpoint, prefix: &str, net: &Network, optimizer: bool) -> Result<()> {
    let mut result = Ok(());
    let mut put = |name: String, t: &Tensor| {
        if result.is_ok() {
            result = ck.insert(name, t.clone()).map_err(Error::from);
        }
    };
    let mut steps = alloc::vec::Vec::new();
    net.for_each_param(|name, p| {
        put(format!("{prefix}.{name}"), &p.value);
        if optimizer {
            put(format!("{prefix}.{name}.adam_m"), &p.m);
            put(format!("{prefix}.{name}.adam_v"), &p.v);
            steps.push((format!("{prefix}.{name}.adam_steps"), p.step_count));
        }
    });
    net.for_each_buffer(|name, t| put(format!("{prefix}.{name}"), t));
    result?;
    for (k, v) in steps {
        ck.set_meta(&k, v)?;
    }
    Ok(())
}

/// Inverse of [`export_network`] into a network of the same layout.
/// Missing optimizer entries reset that state to zero.
pub fn import_network(ck: &Checkpoint, prefix: &str, net: &mut Network) -> Result<()> {
    let mut result = Ok(());
    let load = |name: &str, dst: &mut Tensor| -> Result<()> {
        let src = ck.tensor(name)?;
        if src.shape() != dst.shape() {
            return Err(shape_err("import_network", dst.shape(), src.shape()));
        }
        dst.data_mut().copy_from_slice(src.data());
        Ok(())
    };
    net.for_each_param_mut(|name, p| {
        if result.is_err() {
            return;
        }
        let full = format!("{prefix}.{name}");
        result = load(&full, &mut p.value).and_then(|_| {
            if ck.get(&format!("{full}.adam_m")).is_some() {
                load(&format!("{full}.adam_m"), &mut p.m)?;
                load(&format!("{full}.adam_v"), &mut p.v)?;
                p.step_count = ck.meta_parse(&format!("{full}.adam_steps"))?;
            } else {
                p.m.fill(0.0);
                p.v.fill(0.0);
                p.step_count = 0;
            }
            p.zero_grad();
            Ok(())
        });
    });
    result?;
    let mut result = Ok(());
    net.for_each_buffer_mut(|name, t| {
        if result.is_ok() {
            result = load(&format!("{prefix}.{name}"), t);
        }
    });
    result
}

/// Generator, discriminator, frozen extractor and the global step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub generator: GeneratorNet,
    pub discriminator: DiscriminatorNet,
    pub extractor: FeatureExtractor,
    pub step: u64,
}

impl TrainState {
    /// Fresh networks with sub-seeds derived from `seed`.
    pub fn new(g: GeneratorConfig, d: DiscriminatorConfig, e: ExtractorConfig, seed: u64) -> Self {
        Self {
            generator: GeneratorNet::new(g, derive_seed(seed, 1)),
            discriminator: DiscriminatorNet::new(d, derive_seed(seed, 2)),
            extractor: FeatureExtractor::seeded(e, derive_seed(seed, 3)),
            step: 0,
        }
    }

    pub fn init_step(&mut self, photos: &Tensor, cfg: &StepConfig) -> Result<StepStats> {
        let s = init_step(&mut self.generator, &mut self.extractor, photos, cfg, self.step)?;
        self.step += 1;
        Ok(s)
    }

    pub fn gan_step(&mut self, batch: &TrainingBatch, cfg: &StepConfig) -> Result<StepStats> {
        let s = gan_step(
            &mut self.generator,
            &mut self.discriminator,
            &mut self.extractor,
            batch,
            cfg,
            self.step,
        )?;
        self.step += 1;
        Ok(s)
    }

    /// Networks, optimizer state, buffers and the step counter. Callers
    /// add their own metadata (configs, data position) before encoding.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::new();
        export_network(&mut ck, "generator", &self.generator.net, true)?;
        export_network(&mut ck, "discriminator", &self.discriminator.net, true)?;
        export_network(&mut ck, "extractor", self.extractor.network(), false)?;
        ck.set_meta("step", self.step)?;
        Ok(ck)
    }

    /// Loads into networks built from the given configs.
    pub fn from_checkpoint(
        ck: &Checkpoint,
        g: GeneratorConfig,
        d: DiscriminatorConfig,
        e: ExtractorConfig,
    ) -> Result<Self> {
        let mut s = Self::new(g, d, e, 0);
        import_network(ck, "generator", &mut s.generator.net)?;
        import_network(ck, "discriminator", &mut s.discriminator.net)?;
        import_network(ck, "extractor", s.extractor.network_mut())?;
        s.step = ck.meta_parse("step")?;
        Ok(s)
    }
}

/// Checks that `p` is an image batch the generator accepts.
pub fn check_batch(p: &Tensor) -> Result<()> {
    let s = p.shape();
    if s.c != 3 || !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
        return Err(shape_err("training batch", "N x 3 x H x W, H and W divisible by 4", s));
    }
    Ok(())
}
