//! Finite-difference checks of every differentiable layer and loss.
//!
//! Each check draws random inputs, reduces the output to a scalar (a random
//! projection `sum(r * y)` for plain layers, the loss itself for losses),
//! takes the analytic gradient from the production `f32` backward pass and
//! compares it with central differences of the [`reference`] evaluator.
//! Shapes stay at or below `2 x 4 x 8 x 8`.

pub mod reference;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use self::reference::{Branches, RefTensor};
use crate::error::{Error, Result};
use crate::losses::{adversarial_loss_d, adversarial_loss_g, ExtractorConfig, FeatureExtractor};
use crate::models::{DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet};
use crate::nn::{
    activation_backward, conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward,
    grad_check_piecewise, grad_check_subset, ActKind, BatchNorm2d, ConvSpec, Evaluation, GradCheckOptions,
    GradCheckReport, Layer, Mode, Network,
};
use crate::tensor::{Shape, Tensor};

/// Relative-error bound every check must meet.
pub const GRAD_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub probes: usize,
    pub skipped: usize,
}

impl LayerCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= GRAD_TOLERANCE && self.probes > 0
    }
}

#[derive(Debug, Default)]
struct Tally {
    max_rel_error: f64,
    probes: usize,
    skipped: usize,
}

impl Tally {
    fn add(&mut self, r: GradCheckReport) {
        self.max_rel_error = self.max_rel_error.max(r.max_rel_error);
        self.probes += r.probes.len();
        self.skipped += r.skipped;
    }
}

fn opts(seed: u64, probes: usize) -> GradCheckOptions {
    GradCheckOptions {
        probe_count: probes,
        epsilon: 1e-3,
        seed: seed ^ 0x9e37_79b9,
    }
}

fn smooth(value: f64) -> Evaluation {
    Evaluation { value, branch: 0 }
}

fn piecewise(value: f64, branches: Branches) -> Evaluation {
    Evaluation {
        value,
        branch: branches.value(),
    }
}

fn projection(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

fn check_conv2d(seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec::new(3, 3, 2, 1);
    let mut x = Tensor::randn([2, 4, 8, 8], 1.0, &mut rng);
    let mut w = Tensor::randn([3, 4, 3, 3], 0.3, &mut rng);
    let mut b = Tensor::randn([1, 3, 1, 1], 0.3, &mut rng);
    let y = conv2d(&x, &w, &b, &spec)?;
    let r = projection(y.shape(), &mut rng);
    let g = conv2d_backward(&x, &w, &spec, &r, true)?;
    let (gw, gb) = (g.weight.expect("requested"), g.bias.expect("requested"));

    let (ws, bs, xs) = (w.shape(), b.shape(), x.shape());
    let (w0, b0, x0) = (w.clone(), b.clone(), RefTensor::from_tensor(&x));
    let mut t = Tally::default();
    t.add(grad_check_piecewise(
        x.data_mut(),
        g.input.data(),
        |v| {
            let xr = RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?);
            Ok(smooth(reference::conv2d(&xr, &w0, &b0, &spec)?.dot(&r)?))
        },
        &opts(seed, 24),
    )?);
    t.add(grad_check_piecewise(
        w.data_mut(),
        gw.data(),
        |v| {
            let wv = Tensor::from_vec(ws, v.to_vec())?;
            Ok(smooth(reference::conv2d(&x0, &wv, &b0, &spec)?.dot(&r)?))
        },
        &opts(seed + 1, 24),
    )?);
    t.add(grad_check_piecewise(
        b.data_mut(),
        gb.data(),
        |v| {
            let bv = Tensor::from_vec(bs, v.to_vec())?;
            Ok(smooth(reference::conv2d(&x0, &w0, &bv, &spec)?.dot(&r)?))
        },
        &opts(seed + 2, 3),
    )?);
    Ok(t)
}

fn check_conv_transpose2d(seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ConvSpec::new(3, 2, 2, 1);
    let op = 1;
    let mut x = Tensor::randn([2, 4, 4, 4], 1.0, &mut rng);
    let mut w = Tensor::randn([4, 2, 3, 3], 0.3, &mut rng);
    let mut b = Tensor::randn([1, 2, 1, 1], 0.3, &mut rng);
    let y = conv_transpose2d(&x, &w, &b, &spec, op)?;
    let r = projection(y.shape(), &mut rng);
    let g = conv_transpose2d_backward(&x, &w, &spec, op, &r, true)?;
    let (gw, gb) = (g.weight.expect("requested"), g.bias.expect("requested"));

    let (ws, bs, xs) = (w.shape(), b.shape(), x.shape());
    let (w0, b0, x0) = (w.clone(), b.clone(), RefTensor::from_tensor(&x));
    let f = |x: &RefTensor, w: &Tensor, b: &Tensor| -> Result<Evaluation> {
        Ok(smooth(reference::conv_transpose2d(x, w, b, &spec, op)?.dot(&r)?))
    };
    let mut t = Tally::default();
    t.add(grad_check_piecewise(
        x.data_mut(),
        g.input.data(),
        |v| f(&RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?), &w0, &b0),
        &opts(seed, 24),
    )?);
    t.add(grad_check_piecewise(
        w.data_mut(),
        gw.data(),
        |v| f(&x0, &Tensor::from_vec(ws, v.to_vec())?, &b0),
        &opts(seed + 1, 24),
    )?);
    t.add(grad_check_piecewise(
        b.data_mut(),
        gb.data(),
        |v| f(&x0, &w0, &Tensor::from_vec(bs, v.to_vec())?),
        &opts(seed + 2, 2),
    )?);
    Ok(t)
}

fn check_batch_norm(seed: u64, mode: Mode) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bn = BatchNorm2d::new(4);
    bn.gamma.value = Tensor::uniform([1, 4, 1, 1], 0.5, 1.5, &mut rng);
    bn.beta.value = Tensor::randn([1, 4, 1, 1], 0.5, &mut rng);
    bn.running_mean = Tensor::randn([1, 4, 1, 1], 0.5, &mut rng);
    bn.running_var = Tensor::uniform([1, 4, 1, 1], 0.5, 2.0, &mut rng);
    let mut x = Tensor::randn([2, 4, 8, 8], 1.0, &mut rng).map(|v| 2.0 * v + 0.5);
    let (y, cache) = bn.forward(&x, mode)?;
    let r = projection(y.shape(), &mut rng);
    let gx = bn.backward(&cache, &r, true)?;

    let xs = x.shape();
    let x0 = RefTensor::from_tensor(&x);
    let f = |x: &RefTensor, gamma: &Tensor, beta: &Tensor| -> Result<Evaluation> {
        let out = reference::batch_norm(x, gamma, beta, &bn.running_mean, &bn.running_var, mode);
        Ok(smooth(out.dot(&r)?))
    };
    let (g0, b0) = (bn.gamma.value.clone(), bn.beta.value.clone());
    let mut t = Tally::default();
    t.add(grad_check_piecewise(
        x.data_mut(),
        gx.data(),
        |v| f(&RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?), &g0, &b0),
        &opts(seed, 24),
    )?);
    let mut gamma = g0.clone();
    t.add(grad_check_piecewise(
        gamma.data_mut(),
        bn.gamma.grad.data(),
        |v| f(&x0, &Tensor::from_vec(g0.shape(), v.to_vec())?, &b0),
        &opts(seed + 1, 4),
    )?);
    let mut beta = b0.clone();
    t.add(grad_check_piecewise(
        beta.data_mut(),
        bn.beta.grad.data(),
        |v| f(&x0, &g0, &Tensor::from_vec(b0.shape(), v.to_vec())?),
        &opts(seed + 2, 4),
    )?);
    Ok(t)
}

fn check_activation(seed: u64, kind: ActKind) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Tensor::randn([2, 4, 8, 8], 1.0, &mut rng);
    let r = projection(x.shape(), &mut rng);
    let gx = activation_backward(&x, &r, kind)?;
    let xs = x.shape();
    let mut t = Tally::default();
    t.add(grad_check_piecewise(
        x.data_mut(),
        gx.data(),
        |v| {
            let mut br = Branches::default();
            let xr = RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?);
            let y = reference::activation(&xr, kind, &mut br);
            Ok(piecewise(y.dot(&r)?, br))
        },
        &opts(seed, 32),
    )?);
    Ok(t)
}

/// Flat-parameter mask of convolution biases feeding directly into batch
/// norm. With batch statistics the mean subtraction cancels them, so their
/// exact gradient is zero and a relative comparison is meaningless.
fn cancelled_bias_mask(net: &Network) -> Vec<bool> {
    let mut mask = Vec::new();
    for block in &net.blocks {
        for (i, (_, layer)) in block.layers.iter().enumerate() {
            let next_is_norm = matches!(block.layers.get(i + 1), Some((_, Layer::Norm(_))));
            match layer {
                Layer::Conv(c) => {
                    mask.extend(core::iter::repeat_n(false, c.weight.value.len()));
                    mask.extend(core::iter::repeat_n(next_is_norm, c.bias.value.len()));
                }
                Layer::ConvTranspose(c) => {
                    mask.extend(core::iter::repeat_n(false, c.weight.value.len()));
                    mask.extend(core::iter::repeat_n(next_is_norm, c.bias.value.len()));
                }
                Layer::Norm(n) => {
                    mask.extend(core::iter::repeat_n(false, n.gamma.value.len() + n.beta.value.len()));
                }
                Layer::Act(_) => {}
            }
        }
    }
    mask
}

/// Finite differences over the parameters of `net` outside the cancelled
/// biases. The cancelled ones must instead be negligible next to the
/// largest gradient entry; that ratio is folded into `max_rel_error`.
fn check_params<F>(net: &Network, analytic: &[f32], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&[f32]) -> Result<Evaluation>,
{
    let mask = cancelled_bias_mask(net);
    let candidates: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i]).collect();
    let mut theta = net.flat_values();
    let mut report = grad_check_subset(&mut theta, analytic, &candidates, f, opts)?;
    let scale = analytic.iter().fold(0.0f32, |m, g| m.max(g.abs())) as f64;
    let residue = analytic
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold(0.0f32, |m, (g, _)| m.max(g.abs())) as f64;
    if scale > 0.0 {
        report.max_rel_error = report.max_rel_error.max(residue / scale);
    }
    Ok(report)
}

/// Parameter and input gradients of `net` under `sum(r * net(x))`.
fn check_network(seed: u64, net: &Network, x: &Tensor, probes: usize) -> Result<Tally> {
    let mode = Mode::TrainFrozen;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151);
    let mut work = net.clone();
    work.zero_grad();
    let (y, tape) = work.forward(x, mode)?;
    let r = projection(y.shape(), &mut rng);
    let gx = work.backward(&tape, &r, true)?;
    let analytic = work.flat_grads();

    let x0 = RefTensor::from_tensor(x);
    let mut t = Tally::default();
    let mut probe_net = net.clone();
    t.add(check_params(
        net,
        &analytic,
        |v| {
            probe_net.set_flat_values(v)?;
            let mut br = Branches::default();
            let y = reference::network(&probe_net, &x0, mode, &mut br)?;
            Ok(piecewise(y.dot(&r)?, br))
        },
        &opts(seed, probes),
    )?);
    let mut xin = x.clone();
    let xs = x.shape();
    t.add(grad_check_piecewise(
        xin.data_mut(),
        gx.data(),
        |v| {
            let mut br = Branches::default();
            let xr = RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?);
            let y = reference::network(net, &xr, mode, &mut br)?;
            Ok(piecewise(y.dot(&r)?, br))
        },
        &opts(seed + 1, probes),
    )?);
    Ok(t)
}

pub fn tiny_discriminator(seed: u64) -> DiscriminatorNet {
    DiscriminatorNet::new(
        DiscriminatorConfig {
            flat_channels: 2,
            down_channels: [[3, 4], [4, 4]],
            feature_channels: 4,
        },
        seed,
    )
}

pub fn tiny_generator(seed: u64) -> GeneratorNet {
    GeneratorNet::new(
        GeneratorConfig {
            flat_channels: 2,
            down_channels: [3, 4],
            residual_blocks: 8,
            up_channels: [3, 2],
            flat_kernel: 7,
        },
        seed,
    )
}

/// Discriminator objective through a tiny discriminator; the cartoon,
/// smoothed and generated batches go through separate passes.
fn check_adversarial_d(seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = tiny_discriminator(seed);
    let c = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let e = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let gp = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let mode = Mode::TrainFrozen;

    let mut work = d.clone();
    let (dc, tc) = work.forward(&c, mode)?;
    let (de, te) = work.forward(&e, mode)?;
    let (dg, tg) = work.forward(&gp, mode)?;
    let loss = adversarial_loss_d(&dc, &de, &dg)?;
    work.net.zero_grad();
    work.backward(&tc, &loss.grad_cartoon, true)?;
    work.backward(&te, &loss.grad_smoothed, true)?;
    let g_gp = work.backward(&tg, &loss.grad_generated, true)?;
    let analytic = work.net.flat_grads();

    let (cr, er) = (RefTensor::from_tensor(&c), RefTensor::from_tensor(&e));
    let objective = |net: &Network, gp: &RefTensor| -> Result<Evaluation> {
        let mut br = Branches::default();
        let dc = reference::network(net, &cr, mode, &mut br)?;
        let de = reference::network(net, &er, mode, &mut br)?;
        let dg = reference::network(net, gp, mode, &mut br)?;
        let v = reference::bce_logits(&dc, true)
            + reference::bce_logits(&de, false)
            + reference::bce_logits(&dg, false);
        Ok(piecewise(v, br))
    };
    let gpr = RefTensor::from_tensor(&gp);
    let mut t = Tally::default();
    let mut probe = d.net.clone();
    t.add(check_params(
        &d.net,
        &analytic,
        |v| {
            probe.set_flat_values(v)?;
            objective(&probe, &gpr)
        },
        &opts(seed, 32),
    )?);
    let mut xin = gp.clone();
    let xs = gp.shape();
    t.add(grad_check_piecewise(
        xin.data_mut(),
        g_gp.data(),
        |v| objective(&d.net, &RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?)),
        &opts(seed + 1, 24),
    )?);
    Ok(t)
}

/// Generator adversarial objective: tiny generator feeding a frozen tiny
/// discriminator, differentiated with respect to the generator parameters.
fn check_adversarial_g(seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = tiny_generator(seed);
    let d = tiny_discriminator(seed + 100);
    let p = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let mode = Mode::TrainFrozen;

    let mut gw = g.clone();
    let mut dw = d.clone();
    let (gp, tg) = gw.forward(&p, mode)?;
    let (dg, td) = dw.forward(&gp, mode)?;
    let l = adversarial_loss_g(&dg)?;
    let ggp = dw.backward(&td, &l.grad, false)?;
    gw.net.zero_grad();
    gw.backward(&tg, &ggp, true)?;
    let analytic = gw.net.flat_grads();

    let pr = RefTensor::from_tensor(&p);
    let mut probe = g.net.clone();
    let mut t = Tally::default();
    t.add(check_params(
        &g.net,
        &analytic,
        |v| {
            probe.set_flat_values(v)?;
            let mut br = Branches::default();
            let gp = reference::network(&probe, &pr, mode, &mut br)?;
            let dg = reference::network(&d.net, &gp, mode, &mut br)?;
            Ok(piecewise(reference::bce_logits(&dg, true), br))
        },
        &opts(seed, 32),
    )?);
    Ok(t)
}

fn check_content(seed: u64) -> Result<Tally> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ExtractorConfig {
        channels: [4, 4, 4, 4],
        strides: [1, 2, 2, 2],
    };
    let mut fx = FeatureExtractor::seeded(cfg, seed);
    let p = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let mut gp = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
    let l = fx.content_loss(&p, &gp)?;
    let xs = gp.shape();
    let net = fx.network();
    let mut scratch = Branches::default();
    let fp = reference::network(net, &RefTensor::from_tensor(&p), Mode::Eval, &mut scratch)?;
    let mut t = Tally::default();
    t.add(grad_check_piecewise(
        gp.data_mut(),
        l.grad.data(),
        |v| {
            let mut br = Branches::default();
            let xr = RefTensor::from_tensor(&Tensor::from_vec(xs, v.to_vec())?);
            let fg = reference::network(net, &xr, Mode::Eval, &mut br)?;
            Ok(piecewise(reference::mean_abs_diff(&fg, &fp, &mut br), br))
        },
        &opts(seed, 24),
    )?);
    Ok(t)
}

/// Names of the checks run by [`run_suite`], in order.
pub const CHECK_NAMES: [&str; 11] = [
    "conv2d",
    "conv_transpose2d",
    "batch_norm2d(train)",
    "batch_norm2d(eval)",
    "relu",
    "lrelu",
    "generator",
    "discriminator",
    "adversarial_loss_d",
    "adversarial_loss_g",
    "content_loss",
];

pub fn run_check(name: &str, seed: u64) -> Result<LayerCheck> {
    let tally = match name {
        "conv2d" => check_conv2d(seed)?,
        "conv_transpose2d" => check_conv_transpose2d(seed)?,
        "batch_norm2d(train)" => check_batch_norm(seed, Mode::Train)?,
        "batch_norm2d(eval)" => check_batch_norm(seed, Mode::Eval)?,
        "relu" => check_activation(seed, ActKind::Relu)?,
        "lrelu" => check_activation(seed, ActKind::lrelu())?,
        "generator" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
            check_network(seed, &tiny_generator(seed).net, &x, 32)?
        }
        "discriminator" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::uniform([2, 3, 8, 8], -1.0, 1.0, &mut rng);
            check_network(seed, &tiny_discriminator(seed).net, &x, 32)?
        }
        "adversarial_loss_d" => check_adversarial_d(seed)?,
        "adversarial_loss_g" => check_adversarial_g(seed)?,
        "content_loss" => check_content(seed)?,
        other => return Err(Error::InvalidArgument(alloc::format!("unknown check `{other}`"))),
    };
    Ok(LayerCheck {
        name: name.into(),
        seed,
        max_rel_error: tally.max_rel_error,
        probes: tally.probes,
        skipped: tally.skipped,
    })
}

/// Runs every check for each seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<LayerCheck>> {
    let mut out = Vec::new();
    for name in CHECK_NAMES {
        for &seed in seeds {
            out.push(run_check(name, seed)?);
        }
    }
    Ok(out)
}

/// Entries with magnitude in `[margin, 1]` and random sign.
pub fn away_from_zero(shape: Shape, margin: f32, rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        let mag: f32 = rng.random_range(margin..1.0);
        *v = if rng.random::<bool>() { mag } else { -mag };
    }
    t
}
