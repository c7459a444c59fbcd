//! Neural network layers recorded on a [`Tape`].

use std::collections::HashMap;

use rand::{Rng, RngCore};

use super::{r, Gradients, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-pass forward settings.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    /// Whether train-mode batch norm updates its running statistics.
    pub update_stats: bool,
    /// Use a cumulative average instead of the momentum rule when updating
    /// running statistics (for calibrating a freshly initialized network).
    pub cumulative_stats: bool,
    pub rng: &'a mut dyn RngCore,
}

impl<'a> ForwardCtx<'a> {
    pub fn train(rng: &'a mut dyn RngCore) -> Self {
        Self {
            mode: Mode::Train,
            update_stats: true,
            cumulative_stats: false,
            rng,
        }
    }

    pub fn eval(rng: &'a mut dyn RngCore) -> Self {
        Self {
            mode: Mode::Eval,
            update_stats: false,
            cumulative_stats: false,
            rng,
        }
    }
}

/// Anything that owns named parameters and (optionally) non-trainable
/// buffers such as batch-norm running statistics.
pub trait Module<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn visit_buffers(&self, _f: &mut dyn FnMut(&str, &Tensor<T>)) {}
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}

    /// Number of trainable scalars.
    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, t| t.zero_grad());
    }

    /// Accumulates tape gradients into each parameter's gradient buffer.
    /// Parameters the loss did not reach are left untouched.
    fn apply_gradients(&mut self, grads: &Gradients<T>) -> Result<()> {
        let mut res = Ok(());
        self.visit_params_mut(&mut |name, t| {
            if let Some(g) = grads.param(name) {
                if let Err(e) = t.accumulate_grad(g) {
                    res = Err(e);
                }
            }
        });
        res
    }

    /// Parameters followed by buffers, in visiting order.
    fn named_state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |n, t| out.push((n.to_string(), t.clone())));
        self.visit_buffers(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    /// Overwrites parameters and buffers from `state`; every name must be
    /// present with a matching shape.
    fn load_state(&mut self, state: &HashMap<String, Tensor<T>>) -> Result<()> {
        let mut res = Ok(());
        let mut load = |name: &str, t: &mut Tensor<T>| {
            if res.is_err() {
                return;
            }
            match state.get(name) {
                Some(src) if src.shape() == t.shape() => {
                    t.data_mut().copy_from_slice(src.data());
                }
                Some(src) => {
                    res = Err(Error::contract(format!(
                        "`{name}` has shape {:?}, expected {:?}",
                        src.shape(),
                        t.shape()
                    )))
                }
                None => res = Err(Error::contract(format!("missing state entry `{name}`"))),
            }
        };
        self.visit_params_mut(&mut load);
        self.visit_buffers_mut(&mut load);
        res
    }
}

fn uniform<T: Real>(n: usize, bound: f64, rng: &mut dyn RngCore) -> Vec<T> {
    (0..n).map(|_| r(rng.random_range(-bound..=bound))).collect()
}

/// 3x3-style convolution with "same" padding and stride 1.
#[derive(Clone, Debug)]
pub struct Conv2d<T: Real> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Conv2d<T> {
    /// Kaiming-uniform weights, fan-in scaled bias.
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, rng: &mut dyn RngCore) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let weight = Tensor::new(
            vec![cout, cin, kernel, kernel],
            uniform(cout * cin * kernel * kernel, (6.0 / fan_in).sqrt(), rng),
        )
        .unwrap()
        .with_requires_grad(true);
        let bias = Tensor::new(vec![cout], uniform(cout, 1.0 / fan_in.sqrt(), rng))
            .unwrap()
            .with_requires_grad(true);
        Self {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.weight", self.name), &self.weight);
        let b = tape.param(&format!("{}.bias", self.name), &self.bias);
        tape.conv2d(x, w, b)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.weight", self.name), &self.weight);
        f(&format!("{}.bias", self.name), &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Fully connected layer with `[out, in]` weights.
#[derive(Clone, Debug)]
pub struct Linear<T: Real> {
    pub name: String,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, inp: usize, out: usize, rng: &mut dyn RngCore) -> Self {
        let fan_in = inp as f64;
        let weight = Tensor::new(vec![out, inp], uniform(out * inp, (6.0 / fan_in).sqrt(), rng))
            .unwrap()
            .with_requires_grad(true);
        let bias = Tensor::new(vec![out], uniform(out, 1.0 / fan_in.sqrt(), rng))
            .unwrap()
            .with_requires_grad(true);
        Self {
            name: name.to_string(),
            weight,
            bias,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&format!("{}.weight", self.name), &self.weight);
        let b = tape.param(&format!("{}.bias", self.name), &self.bias);
        tape.linear(x, w, Some(b))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.weight", self.name), &self.weight);
        f(&format!("{}.bias", self.name), &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.weight", self.name), &mut self.weight);
        f(&format!("{}.bias", self.name), &mut self.bias);
    }
}

/// Batch normalization over axis 1 (works for `[B, C]` and `[B, C, H, W]`).
#[derive(Clone, Debug)]
pub struct BatchNorm<T: Real> {
    pub name: String,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// Count of training batches folded into the running statistics, kept as
    /// a one-element tensor so it serializes with the rest of the state.
    pub num_batches_tracked: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm<T> {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            gamma: Tensor::ones(vec![channels]).with_requires_grad(true),
            beta: Tensor::zeros(vec![channels]).with_requires_grad(true),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::ones(vec![channels]),
            num_batches_tracked: Tensor::zeros(vec![1]),
            eps: Self::DEFAULT_EPS,
            momentum: Self::DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn tracked(&self) -> usize {
        self.num_batches_tracked.data()[0].as_f64() as usize
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let g = tape.param(&format!("{}.gamma", self.name), &self.gamma);
        let b = tape.param(&format!("{}.beta", self.name), &self.beta);
        match ctx.mode {
            Mode::Train => {
                let (y, mean, var) = tape.batch_norm_train(x, g, b, r(self.eps))?;
                if ctx.update_stats {
                    let n = tape.value(x).len() / self.channels();
                    let unbias: T = if n > 1 { r(n as f64 / (n as f64 - 1.0)) } else { T::one() };
                    let tracked = self.tracked();
                    let m: T = if ctx.cumulative_stats {
                        r(1.0 / (tracked as f64 + 1.0))
                    } else {
                        r(self.momentum)
                    };
                    let keep = T::one() - m;
                    for (rm, &bm) in self.running_mean.data_mut().iter_mut().zip(&mean) {
                        *rm = keep * *rm + m * bm;
                    }
                    for (rv, &bv) in self.running_var.data_mut().iter_mut().zip(&var) {
                        *rv = keep * *rv + m * bv * unbias;
                    }
                    self.num_batches_tracked.data_mut()[0] = r(tracked as f64 + 1.0);
                }
                Ok(y)
            }
            Mode::Eval => {
                if self.tracked() == 0 {
                    return Err(Error::UninitializedStats(self.name.clone()));
                }
                tape.batch_norm_eval(
                    x,
                    g,
                    b,
                    self.running_mean.data(),
                    self.running_var.data(),
                    r(self.eps),
                )
            }
        }
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.gamma", self.name), &self.gamma);
        f(&format!("{}.beta", self.name), &self.beta);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.gamma", self.name), &mut self.gamma);
        f(&format!("{}.beta", self.name), &mut self.beta);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
        f(&format!("{}.num_batches_tracked", self.name), &self.num_batches_tracked);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
        f(&format!("{}.num_batches_tracked", self.name), &mut self.num_batches_tracked);
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Relu;

#[derive(Clone, Copy, Debug, Default)]
pub struct MaxPool2d;

/// Inverted dropout with drop probability `p`; identity in eval mode.
#[derive(Clone, Copy, Debug)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        if ctx.mode == Mode::Eval || self.p == 0.0 {
            return Ok(x);
        }
        tape.dropout(x, 1.0 - self.p, &mut *ctx.rng)
    }
}

/// One layer of any supported kind.
#[derive(Clone, Debug)]
pub enum Layer<T: Real> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Linear(Linear<T>),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout),
}

impl<T: Real> Layer<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        match self {
            Layer::Conv2d(l) => l.forward(tape, x),
            Layer::BatchNorm(l) => l.forward(tape, x, ctx),
            Layer::Linear(l) => l.forward(tape, x),
            Layer::Relu(_) => Ok(tape.relu(x)),
            Layer::MaxPool2d(_) => tape.max_pool2d(x),
            Layer::Dropout(l) => l.forward(tape, x, ctx),
        }
    }
}

impl<T: Real> Module<T> for Layer<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        match self {
            Layer::Conv2d(l) => l.visit_params(f),
            Layer::BatchNorm(l) => l.visit_params(f),
            Layer::Linear(l) => l.visit_params(f),
            _ => {}
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        match self {
            Layer::Conv2d(l) => l.visit_params_mut(f),
            Layer::BatchNorm(l) => l.visit_params_mut(f),
            Layer::Linear(l) => l.visit_params_mut(f),
            _ => {}
        }
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        if let Layer::BatchNorm(l) = self {
            l.visit_buffers(f);
        }
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        if let Layer::BatchNorm(l) = self {
            l.visit_buffers_mut(f);
        }
    }
}

/// Applies a single layer to `input`.
pub fn forward_layer<T: Real>(
    layer: &mut Layer<T>,
    tape: &mut Tape<T>,
    input: Var,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var> {
    layer.forward(tape, input, ctx)
}

/// Layers applied in order.
#[derive(Clone, Debug, Default)]
pub struct Sequential<T: Real> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Sequential<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, mut x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        for layer in &mut self.layers {
            x = layer.forward(tape, x, ctx)?;
        }
        Ok(x)
    }
}

impl<T: Real> Module<T> for Sequential<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.layers.iter().for_each(|l| l.visit_buffers(f));
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_buffers_mut(f));
    }
}
