//! Adam with bias correction.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{r, Module, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers keyed by parameter name.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter of `module` from its gradient
    /// buffer. Fails without touching anything if a parameter has no
    /// gradient.
    pub fn step(&mut self, module: &mut dyn Module<T>) -> Result<()> {
        let mut missing = None;
        module.visit_params(&mut |name, p| {
            if missing.is_none() && p.requires_grad() && p.grad().is_none() {
                missing = Some(name.to_string());
            }
        });
        if let Some(name) = missing {
            return Err(Error::contract(format!("parameter `{name}` has no gradient")));
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1: T = r(1.0 - c.beta1.powi(t));
        let bc2: T = r(1.0 - c.beta2.powi(t));
        let (b1, b2, lr, eps): (T, T, T, T) = (r(c.beta1), r(c.beta2), r(c.lr), r(c.eps));
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_params_mut(&mut |name, p| {
            if !p.requires_grad() {
                return;
            }
            let g = p.grad().expect("checked above").to_vec();
            let m = ms.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = vs.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }

    /// Serializable view: `step`, `m.<param>`, `v.<param>`.
    pub fn named_state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = vec![("step".to_string(), Tensor::full(vec![1], r(self.step as f64)))];
        for (prefix, map) in [("m", &self.m), ("v", &self.v)] {
            for (name, buf) in map {
                out.push((
                    format!("{prefix}.{name}"),
                    Tensor::new(vec![buf.len()], buf.clone()).unwrap(),
                ));
            }
        }
        out
    }

    pub fn load_state(config: AdamConfig, state: &HashMap<String, Tensor<T>>) -> Result<Self> {
        let mut s = Self::new(config);
        for (name, t) in state {
            if name == "step" {
                s.step = t.data()[0].as_f64() as u64;
            } else if let Some(p) = name.strip_prefix("m.") {
                s.m.insert(p.to_string(), t.data().to_vec());
            } else if let Some(p) = name.strip_prefix("v.") {
                s.v.insert(p.to_string(), t.data().to_vec());
            } else {
                return Err(Error::Format(format!("unknown optimizer entry `{name}`")));
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Linear;
    use rand::SeedableRng;

    struct One(Tensor<f64>);

    impl Module<f64> for One {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<f64>)) {
            f("p", &self.0)
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
            f("p", &mut self.0)
        }
    }

    fn param(v: f64, g: f64) -> One {
        let mut t = Tensor::full(vec![1], v).with_requires_grad(true);
        t.accumulate_grad(&[g]).unwrap();
        One(t)
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut p = param(0.25, 3.0);
        let mut adam = AdamState::new(AdamConfig { lr: 0.0, ..Default::default() });
        adam.step(&mut p).unwrap();
        assert_eq!(p.0.data()[0], 0.25);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // t=1: m = 0.1, v = 0.001, mhat = 1, vhat = 1 -> step = lr / (1 + eps)
        let mut p = param(0.0, 1.0);
        let mut adam = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() });
        adam.step(&mut p).unwrap();
        let expect = -0.1 / (1.0 + 1e-8);
        assert!((p.0.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new("fc", 2, 2, &mut rng);
        let before = lin.weight.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut lin), Err(Error::Contract(_))));
        assert_eq!(lin.weight, before);
        assert_eq!(adam.step_count(), 0);
    }
}
