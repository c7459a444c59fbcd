//! Bootstrap-your-own-latent training: online and target networks, the
//! symmetric normalized-MSE loss, and the EMA target update.

mod checkpoint;
mod pretrain;

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use pretrain::{output_paths, pretrain, LogRow, PretrainConfig, PretrainOutput};

use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, AdamState, BatchNorm, ForwardCtx, Linear, Mode, Module, Real, Tape, Tensor, Var};

/// Norm clamp in the cosine loss.
pub const LOSS_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ByolConfig {
    pub encoder: EncoderConfig,
    pub head_hidden: usize,
    pub projection_dim: usize,
    pub tau: f64,
    pub adam: AdamConfig,
}

impl Default for ByolConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            head_hidden: 4096,
            projection_dim: 256,
            tau: 0.99,
            adam: AdamConfig::default(),
        }
    }
}

impl ByolConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        Ok(())
    }
}

/// Linear, batch norm, ReLU, linear.
#[derive(Clone, Debug)]
pub struct Head<T: Real> {
    pub fc1: Linear<T>,
    pub bn: BatchNorm<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> Head<T> {
    pub fn new(name: &str, inp: usize, hidden: usize, out: usize, rng: &mut dyn RngCore) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), inp, hidden, rng),
            bn: BatchNorm::new(&format!("{name}.bn"), hidden),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, out, rng),
        }
    }

    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = self.bn.forward(tape, h, ctx)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, h)
    }
}

impl<T: Real> Module<T> for Head<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.fc1.visit_params(f);
        self.bn.visit_params(f);
        self.fc2.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.fc1.visit_params_mut(f);
        self.bn.visit_params_mut(f);
        self.fc2.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.bn.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.bn.visit_buffers_mut(f);
    }
}

/// Encoder followed by the projector; the part shared by online and target.
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    pub encoder: Encoder<T>,
    pub projector: Head<T>,
}

impl<T: Real> Network<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let y = self.encoder.forward(tape, x, ctx)?;
        self.projector.forward(tape, y, ctx)
    }
}

impl<T: Real> Module<T> for Network<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit_params(f);
        self.projector.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_params_mut(f);
        self.projector.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.encoder.visit_buffers(f);
        self.projector.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_buffers_mut(f);
        self.projector.visit_buffers_mut(f);
    }
}

/// The trained network: encoder, projector and predictor.
#[derive(Clone, Debug)]
pub struct Online<T: Real> {
    pub net: Network<T>,
    pub predictor: Head<T>,
}

impl<T: Real> Online<T> {
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, ctx: &mut ForwardCtx<'_>) -> Result<Var> {
        let z = self.net.forward(tape, x, ctx)?;
        self.predictor.forward(tape, z, ctx)
    }
}

impl<T: Real> Module<T> for Online<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.net.visit_params(f);
        self.predictor.visit_params(f);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.net.visit_params_mut(f);
        self.predictor.visit_params_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor<T>)) {
        self.net.visit_buffers(f);
        self.predictor.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.net.visit_buffers_mut(f);
        self.predictor.visit_buffers_mut(f);
    }
}

/// Online network, EMA target (no predictor), optimizer and counters.
#[derive(Clone, Debug)]
pub struct ModelState<T: Real> {
    pub config: ByolConfig,
    pub online: Online<T>,
    pub target: Network<T>,
    pub adam: AdamState<T>,
    pub step: u64,
    pub epoch: u64,
    pub seed: u64,
}

impl<T: Real> ModelState<T> {
    /// Seeded initialization; the target starts as a copy of the online
    /// encoder and projector.
    pub fn new(config: ByolConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config.encoder.clone(), &mut rng)?;
        let d = encoder.embedding_dim();
        let projector = Head::new("projector", d, config.head_hidden, config.projection_dim, &mut rng);
        let predictor = Head::new(
            "predictor",
            config.projection_dim,
            config.head_hidden,
            config.projection_dim,
            &mut rng,
        );
        let net = Network { encoder, projector };
        let target = net.clone();
        Ok(Self {
            adam: AdamState::new(config.adam),
            config,
            online: Online { net, predictor },
            target,
            step: 0,
            epoch: 0,
            seed,
        })
    }
}

/// Mean over rows of `2 - 2 cos(q, z)`, recorded on the tape. Gradient flows
/// only into whichever operands require it.
pub fn byol_loss_var<T: Real>(tape: &mut Tape<T>, q: Var, z: Var) -> Result<Var> {
    tape.cosine_loss(q, z, T::from(LOSS_EPS).unwrap())
}

/// [`byol_loss_var`] on plain `[B, D]` tensors.
pub fn byol_loss<T: Real>(q: &Tensor<T>, z: &Tensor<T>) -> Result<f64> {
    let mut tape = Tape::new();
    let qv = tape.constant(q.shape().to_vec(), q.data().to_vec())?;
    let zv = tape.constant(z.shape().to_vec(), z.data().to_vec())?;
    let l = byol_loss_var(&mut tape, qv, zv)?;
    Ok(tape.value(l)[0].as_f64())
}

/// A recorded symmetric loss, ready for `backward`.
pub struct LossGraph<T: Real> {
    pub tape: Tape<T>,
    pub loss: Var,
    /// The two asymmetric terms, in the order they are summed.
    pub terms: [Var; 2],
    /// Online projections of the first view.
    pub projection: Var,
}

impl<T: Real> LossGraph<T> {
    pub fn value(&self) -> f64 {
        self.tape.value(self.loss)[0].as_f64()
    }
}

/// `L(online(v1), target(v2)) + L(online(v2), target(v1))` over `[B, 1, F, T]`
/// view batches. Target parameters enter the tape as constants.
pub fn symmetric_loss<T: Real>(
    state: &mut ModelState<T>,
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    mode: Mode,
    rng: &mut dyn RngCore,
) -> Result<LossGraph<T>> {
    if v1.shape() != v2.shape() {
        return Err(Error::contract(format!(
            "view batches differ in shape: {:?} vs {:?}",
            v1.shape(),
            v2.shape()
        )));
    }
    let mut tape = Tape::new();
    let x1 = tape.leaf(v1);
    let x2 = tape.leaf(v2);
    let mut ctx = ForwardCtx {
        mode,
        update_stats: mode == Mode::Train,
        cumulative_stats: false,
        rng,
    };
    let z1 = state.online.net.forward(&mut tape, x1, &mut ctx)?;
    let q1 = state.online.predictor.forward(&mut tape, z1, &mut ctx)?;
    let q2 = state.online.forward(&mut tape, x2, &mut ctx)?;

    ctx.update_stats = false;
    tape.set_freeze_params(true);
    let t2 = state.target.forward(&mut tape, x2, &mut ctx)?;
    let t1 = state.target.forward(&mut tape, x1, &mut ctx)?;
    tape.set_freeze_params(false);

    let a = byol_loss_var(&mut tape, q1, t2)?;
    let b = byol_loss_var(&mut tape, q2, t1)?;
    let loss = tape.add(a, b)?;
    tape.check_finite(loss, "BYOL loss")?;
    Ok(LossGraph {
        tape,
        loss,
        terms: [a, b],
        projection: z1,
    })
}

/// `xi <- tau * xi + (1 - tau) * theta` over matching parameters and
/// batch-norm running statistics; batch counters are copied.
pub fn ema_update<T: Real>(target: &mut dyn Module<T>, online: &dyn Module<T>, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::contract(format!("tau {tau} outside [0, 1]")));
    }
    let mut src: HashMap<String, Tensor<T>> = HashMap::new();
    online.visit_params(&mut |n, t| {
        src.insert(n.to_string(), t.clone());
    });
    online.visit_buffers(&mut |n, t| {
        src.insert(n.to_string(), t.clone());
    });
    let (keep, mix): (T, T) = (T::from(tau).unwrap(), T::from(1.0 - tau).unwrap());
    let mut err = None;
    let mut seen = 0usize;
    let mut update = |name: &str, t: &mut Tensor<T>| {
        if err.is_some() {
            return;
        }
        let Some(s) = src.get(name).filter(|s| s.shape() == t.shape()) else {
            err = Some(Error::contract(format!("target entry `{name}` has no online counterpart")));
            return;
        };
        seen += 1;
        if name.ends_with("num_batches_tracked") {
            t.data_mut().copy_from_slice(s.data());
            return;
        }
        for (x, &y) in t.data_mut().iter_mut().zip(s.data()) {
            *x = keep * *x + mix * y;
        }
    };
    target.visit_params_mut(&mut update);
    target.visit_buffers_mut(&mut update);
    if let Some(e) = err {
        return Err(e);
    }
    if seen != src.len() {
        return Err(Error::contract(format!(
            "online network has {} entries, target matched {seen}",
            src.len()
        )));
    }
    Ok(())
}

/// One optimization step on a pair of view batches: loss, backward, Adam on
/// the online network, EMA into the target. Returns the loss value.
pub fn train_step<T: Real>(
    state: &mut ModelState<T>,
    v1: &Tensor<T>,
    v2: &Tensor<T>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let graph = symmetric_loss(state, v1, v2, Mode::Train, rng)?;
    let grads = graph.tape.backward(graph.loss)?;
    state.online.zero_grad();
    state.online.apply_gradients(&grads)?;
    state.adam.step(&mut state.online)?;
    state.online.zero_grad();
    ema_update(&mut state.target, &state.online.net, state.config.tau)?;
    state.step += 1;
    Ok(graph.value())
}

/// Online projections `[B, P]` of a view batch (batch statistics, no
/// running-stat updates).
pub fn project<T: Real>(state: &mut ModelState<T>, x: &Tensor<T>, rng: &mut dyn RngCore) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    tape.set_freeze_params(true);
    let xv = tape.leaf(x);
    let mut ctx = ForwardCtx {
        mode: Mode::Train,
        update_stats: false,
        cumulative_stats: false,
        rng,
    };
    let z = state.online.net.forward(&mut tape, xv, &mut ctx)?;
    Ok(tape.to_tensor(z))
}

/// Smallest per-dimension standard deviation across the rows of `[B, D]`.
pub fn min_dim_std<T: Real>(z: &Tensor<T>) -> f64 {
    let (b, d) = (z.shape()[0], z.shape()[1]);
    (0..d)
        .map(|j| {
            let col: Vec<f64> = (0..b).map(|i| z.data()[i * d + j].as_f64()).collect();
            let mean = col.iter().sum::<f64>() / b as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / b as f64).sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}
