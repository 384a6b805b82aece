//! Generator and patch discriminator stacks.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::{
    ActKind, BatchNorm2d, Block, Conv2d, ConvSpec, ConvTranspose2d, Layer, Mode, Network, Tape,
};
use crate::tensor::Tensor;

/// Channel widths of the generator. Kernel sizes and strides are fixed by
/// the block layout; only widths and the residual count are configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub flat_channels: usize,
    pub down_channels: [usize; 2],
    pub residual_blocks: usize,
    pub up_channels: [usize; 2],
    pub flat_kernel: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            flat_channels: 64,
            down_channels: [128, 256],
            residual_blocks: 8,
            up_channels: [128, 64],
            flat_kernel: 7,
        }
    }
}

impl GeneratorConfig {
    /// Same topology at a fraction of the width, for gradient checks and
    /// toy-scale training.
    pub fn narrow(base: usize) -> Self {
        Self {
            flat_channels: base,
            down_channels: [2 * base, 4 * base],
            residual_blocks: 8,
            up_channels: [2 * base, base],
            flat_kernel: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscriminatorConfig {
    pub flat_channels: usize,
    /// `[stride-2 conv, stride-1 conv]` widths of each down block.
    pub down_channels: [[usize; 2]; 2],
    pub feature_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            flat_channels: 32,
            down_channels: [[64, 128], [128, 256]],
            feature_channels: 256,
        }
    }
}

impl DiscriminatorConfig {
    pub fn narrow(base: usize) -> Self {
        Self {
            flat_channels: base,
            down_channels: [[2 * base, 4 * base], [4 * base, 8 * base]],
            feature_channels: 8 * base,
        }
    }
}

fn conv(name: &str, in_c: usize, spec: ConvSpec, rng: &mut ChaCha8Rng) -> (String, Layer) {
    (name.to_string(), Layer::Conv(Conv2d::new(in_c, spec, rng)))
}

fn norm(name: &str, c: usize) -> (String, Layer) {
    (name.to_string(), Layer::Norm(BatchNorm2d::new(c)))
}

fn act(name: &str, kind: ActKind) -> (String, Layer) {
    (name.to_string(), Layer::Act(kind))
}

fn check_image_batch(op: &'static str, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.c != 3 || !s.h.is_multiple_of(4) || !s.w.is_multiple_of(4) {
        return Err(shape_err(
            op,
            "N x 3 x H x W with H, W divisible by 4",
            s,
        ));
    }
    Ok(())
}

/// Photo-to-cartoon generator: flat block, two down blocks, residual
/// blocks, two up blocks and a final convolution (no output nonlinearity).
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub net: Network,
}

pub fn build_generator(seed: u64) -> GeneratorNet {
    GeneratorNet::new(GeneratorConfig::default(), seed)
}

impl GeneratorNet {
    pub fn new(config: GeneratorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let mut blocks = Vec::new();
        let fk = c.flat_kernel;
        blocks.push(Block::plain(
            "flat",
            vec![
                conv("conv", 3, ConvSpec::new(fk, c.flat_channels, 1, fk / 2), &mut rng),
                norm("norm", c.flat_channels),
                act("relu", ActKind::Relu),
            ],
        ));
        let mut in_c = c.flat_channels;
        for (i, &n) in c.down_channels.iter().enumerate() {
            blocks.push(Block::plain(
                format!("down{}", i + 1),
                vec![
                    conv("conv_s2", in_c, ConvSpec::new(3, n, 2, 1), &mut rng),
                    conv("conv_s1", n, ConvSpec::new(3, n, 1, 1), &mut rng),
                    norm("norm", n),
                    act("relu", ActKind::Relu),
                ],
            ));
            in_c = n;
        }
        for i in 0..c.residual_blocks {
            blocks.push(Block::residual(
                format!("res{}", i + 1),
                vec![
                    conv("conv1", in_c, ConvSpec::new(3, in_c, 1, 1), &mut rng),
                    norm("norm1", in_c),
                    act("relu", ActKind::Relu),
                    conv("conv2", in_c, ConvSpec::new(3, in_c, 1, 1), &mut rng),
                    norm("norm2", in_c),
                ],
            ));
        }
        for (i, &n) in c.up_channels.iter().enumerate() {
            blocks.push(Block::plain(
                format!("up{}", i + 1),
                vec![
                    (
                        "convt".to_string(),
                        Layer::ConvTranspose(ConvTranspose2d::new(
                            in_c,
                            ConvSpec::new(3, n, 2, 1),
                            1,
                            &mut rng,
                        )),
                    ),
                    conv("conv", n, ConvSpec::new(3, n, 1, 1), &mut rng),
                    norm("norm", n),
                    act("relu", ActKind::Relu),
                ],
            ));
            in_c = n;
        }
        blocks.push(Block::plain(
            "final",
            vec![conv("conv", in_c, ConvSpec::new(fk, 3, 1, fk / 2), &mut rng)],
        ));
        Self {
            config,
            net: Network::new(blocks),
        }
    }

    /// Number of blocks along the spine.
    pub fn block_count(&self) -> usize {
        self.net.blocks.len()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        check_image_batch("generator_forward", x)?;
        self.net.forward(x, mode)
    }

    pub fn infer(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_image_batch("generator_forward", x)?;
        self.net.infer(x, mode)
    }

    pub fn backward(&mut self, tape: &Tape, grad: &Tensor, param_grads: bool) -> Result<Tensor> {
        self.net.backward(tape, grad, param_grads)
    }
}

pub fn generator_forward(g: &mut GeneratorNet, x: &Tensor, mode: Mode) -> Result<Tensor> {
    g.infer(x, mode)
}

/// Patch discriminator emitting one logit per receptive-field patch.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub config: DiscriminatorConfig,
    pub net: Network,
}

pub fn build_discriminator(seed: u64) -> DiscriminatorNet {
    DiscriminatorNet::new(DiscriminatorConfig::default(), seed)
}

impl DiscriminatorNet {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let lrelu = ActKind::lrelu();
        let mut blocks = vec![Block::plain(
            "flat",
            vec![
                conv("conv", 3, ConvSpec::new(3, c.flat_channels, 1, 1), &mut rng),
                act("lrelu", lrelu),
            ],
        )];
        let mut in_c = c.flat_channels;
        for (i, &[n1, n2]) in c.down_channels.iter().enumerate() {
            blocks.push(Block::plain(
                format!("down{}", i + 1),
                vec![
                    conv("conv_s2", in_c, ConvSpec::new(3, n1, 2, 1), &mut rng),
                    conv("conv_s1", n1, ConvSpec::new(3, n2, 1, 1), &mut rng),
                    norm("norm", n2),
                    act("lrelu", lrelu),
                ],
            ));
            in_c = n2;
        }
        blocks.push(Block::plain(
            "feature",
            vec![
                conv("conv", in_c, ConvSpec::new(3, c.feature_channels, 1, 1), &mut rng),
                norm("norm", c.feature_channels),
                act("lrelu", lrelu),
            ],
        ));
        blocks.push(Block::plain(
            "final",
            vec![conv("conv", c.feature_channels, ConvSpec::new(3, 1, 1, 1), &mut rng)],
        ));
        Self {
            config,
            net: Network::new(blocks),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        check_image_batch("discriminator_forward", x)?;
        self.net.forward(x, mode)
    }

    pub fn infer(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        check_image_batch("discriminator_forward", x)?;
        self.net.infer(x, mode)
    }

    pub fn backward(&mut self, tape: &Tape, grad: &Tensor, param_grads: bool) -> Result<Tensor> {
        self.net.backward(tape, grad, param_grads)
    }

    /// Every negative slope used by the discriminator's activations.
    pub fn activation_slopes(&self) -> Vec<f32> {
        self.net
            .blocks
            .iter()
            .flat_map(|b| b.layers.iter())
            .filter_map(|(_, l)| match l {
                Layer::Act(ActKind::LeakyRelu(a)) => Some(*a),
                Layer::Act(ActKind::Relu) => Some(0.0),
                _ => None,
            })
            .collect()
    }
}

pub fn discriminator_forward(d: &mut DiscriminatorNet, x: &Tensor, mode: Mode) -> Result<Tensor> {
    d.infer(x, mode)
}
