//! Layer stacks with explicit forward tapes for backpropagation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::act::{activation, activation_backward, ActKind};
use super::conv::{Conv2d, ConvTranspose2d};
use super::norm::{BatchNorm2d, NormCache};
use super::param::Parameter;
use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv2d),
    ConvTranspose(ConvTranspose2d),
    Norm(BatchNorm2d),
    Act(ActKind),
}

/// What a layer keeps from its forward pass.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    Norm(NormCache),
}

impl Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode, keep: bool) -> Result<(Tensor, Option<Cache>)> {
        let keep_input = || keep.then(|| Cache::Input(x.clone()));
        Ok(match self {
            Layer::Conv(c) => (c.forward(x)?, keep_input()),
            Layer::ConvTranspose(c) => (c.forward(x)?, keep_input()),
            Layer::Act(k) => (activation(x, *k), keep_input()),
            Layer::Norm(n) => {
                let (y, cache) = n.forward(x, mode)?;
                (y, keep.then_some(Cache::Norm(cache)))
            }
        })
    }

    fn backward(&mut self, cache: &Cache, grad: &Tensor, param_grads: bool) -> Result<Tensor> {
        match (self, cache) {
            (Layer::Conv(c), Cache::Input(x)) => c.backward(x, grad, param_grads),
            (Layer::ConvTranspose(c), Cache::Input(x)) => c.backward(x, grad, param_grads),
            (Layer::Act(k), Cache::Input(x)) => activation_backward(x, grad, *k),
            (Layer::Norm(n), Cache::Norm(c)) => n.backward(c, grad, param_grads),
            _ => Err(Error::InvalidArgument("tape does not match layer".into())),
        }
    }

    fn params(&self) -> Vec<(&'static str, &Parameter)> {
        match self {
            Layer::Conv(c) => alloc::vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::ConvTranspose(c) => alloc::vec![("weight", &c.weight), ("bias", &c.bias)],
            Layer::Norm(n) => alloc::vec![("gamma", &n.gamma), ("beta", &n.beta)],
            Layer::Act(_) => Vec::new(),
        }
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Parameter)> {
        match self {
            Layer::Conv(c) => alloc::vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
            Layer::ConvTranspose(c) => {
                alloc::vec![("weight", &mut c.weight), ("bias", &mut c.bias)]
            }
            Layer::Norm(n) => alloc::vec![("gamma", &mut n.gamma), ("beta", &mut n.beta)],
            Layer::Act(_) => Vec::new(),
        }
    }

    fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Norm(n) => alloc::vec![
                ("running_mean", &mut n.running_mean),
                ("running_var", &mut n.running_var)
            ],
            _ => Vec::new(),
        }
    }

    fn buffers(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Norm(n) => alloc::vec![("running_mean", &n.running_mean), ("running_var", &n.running_var)],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Plain,
    /// Output is `input + body(input)`.
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub kind: BlockKind,
    pub layers: Vec<(String, Layer)>,
}

impl Block {
    pub fn plain(name: impl Into<String>, layers: Vec<(String, Layer)>) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::Plain,
            layers,
        }
    }

    pub fn residual(name: impl Into<String>, layers: Vec<(String, Layer)>) -> Self {
        Self {
            name: name.into(),
            kind: BlockKind::Residual,
            layers,
        }
    }
}

/// Forward record of a [`Network`] pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    caches: Vec<Vec<Cache>>,
}

/// An ordered list of blocks evaluated front to back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub blocks: Vec<Block>,
}

impl Network {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    fn run(&mut self, x: &Tensor, mode: Mode, keep: bool) -> Result<(Tensor, Tape)> {
        let mut tape = Tape::default();
        let mut cur = x.clone();
        for block in &mut self.blocks {
            let mut caches = Vec::new();
            let block_in = (block.kind == BlockKind::Residual).then(|| cur.clone());
            for (_, layer) in &mut block.layers {
                let (y, cache) = layer.forward(&cur, mode, keep)?;
                caches.extend(cache);
                cur = y;
            }
            if let Some(skip) = block_in {
                cur = cur.add(&skip)?;
            }
            tape.caches.push(caches);
        }
        Ok((cur, tape))
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tape)> {
        self.run(x, mode, true)
    }

    /// Forward pass that keeps no tape.
    pub fn infer(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.run(x, mode, false)?.0)
    }

    /// Backpropagates `grad` through the recorded pass, returning the input
    /// gradient. Parameter gradients accumulate only when `param_grads`.
    pub fn backward(&mut self, tape: &Tape, grad: &Tensor, param_grads: bool) -> Result<Tensor> {
        if tape.caches.len() != self.blocks.len() {
            return Err(Error::InvalidArgument("tape does not match network".into()));
        }
        let mut g = grad.clone();
        for (block, caches) in self.blocks.iter_mut().zip(&tape.caches).rev() {
            let skip = (block.kind == BlockKind::Residual).then(|| g.clone());
            for ((_, layer), cache) in block.layers.iter_mut().zip(caches).rev() {
                g = layer.backward(cache, &g, param_grads)?;
            }
            if let Some(s) = skip {
                g.axpy(1.0, &s)?;
            }
        }
        Ok(g)
    }

    pub fn for_each_param(&self, mut f: impl FnMut(&str, &Parameter)) {
        for block in &self.blocks {
            for (lname, layer) in &block.layers {
                for (pname, p) in layer.params() {
                    f(&format!("{}.{}.{}", block.name, lname, pname), p);
                }
            }
        }
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&str, &mut Parameter)) {
        for block in &mut self.blocks {
            for (lname, layer) in &mut block.layers {
                for (pname, p) in layer.params_mut() {
                    f(&format!("{}.{}.{}", block.name, lname, pname), p);
                }
            }
        }
    }

    pub fn for_each_buffer(&self, mut f: impl FnMut(&str, &Tensor)) {
        for block in &self.blocks {
            for (lname, layer) in &block.layers {
                for (bname, t) in layer.buffers() {
                    f(&format!("{}.{}.{}", block.name, lname, bname), t);
                }
            }
        }
    }

    /// Mutable access to non-trainable state (batch-norm running stats).
    pub fn for_each_buffer_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for block in &mut self.blocks {
            for (lname, layer) in &mut block.layers {
                for (bname, t) in layer.buffers_mut() {
                    f(&format!("{}.{}.{}", block.name, lname, bname), t);
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.for_each_param_mut(|_, p| p.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(|_, p| n += p.value.len());
        n
    }

    /// All parameter values concatenated in visiting order.
    pub fn flat_values(&self) -> Vec<f32> {
        let mut out = Vec::new();
        self.for_each_param(|_, p| out.extend_from_slice(p.value.data()));
        out
    }

    pub fn flat_grads(&self) -> Vec<f32> {
        let mut out = Vec::new();
        self.for_each_param(|_, p| out.extend_from_slice(p.grad.data()));
        out
    }

    pub fn set_flat_values(&mut self, values: &[f32]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter values, got {}",
                self.param_count(),
                values.len()
            )));
        }
        let mut off = 0;
        self.for_each_param_mut(|_, p| {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        });
        Ok(())
    }
}
