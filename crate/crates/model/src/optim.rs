//! First-order optimizers. Parameters without a gradient in a step are left
//! untouched, including their moment buffers.

use egodoa_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::params::{Gradients, Mat, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd {
            lr: 1e-3,
            momentum: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        OptimizerConfig::Adam {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            OptimizerConfig::Sgd { lr, momentum } => lr > 0.0 && (0.0..1.0).contains(&momentum),
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                lr > 0.0 && (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    fn slot_count(&self) -> usize {
        match self {
            OptimizerConfig::Sgd { momentum, .. } if *momentum == 0.0 => 0,
            OptimizerConfig::Sgd { .. } => 1,
            OptimizerConfig::Adam { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    config: OptimizerConfig,
    /// Moment buffers, `slot_count` per parameter, parameter-major.
    slots: Vec<Mat>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let k = config.slot_count();
        let mut slots = Vec::with_capacity(k * params.len());
        for (_, v) in params.iter() {
            for _ in 0..k {
                slots.push(Mat::zeros(v.dim()));
            }
        }
        Ok(Self {
            config,
            slots,
            steps: 0,
        })
    }

    /// Rebuilds an optimizer from saved state.
    pub fn from_state(config: OptimizerConfig, params: &ParamStore, slots: Vec<Mat>, steps: u64) -> Result<Self> {
        let fresh = Self::new(config, params)?;
        if slots.len() != fresh.slots.len() || slots.iter().zip(&fresh.slots).any(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::Config("optimizer state does not match the parameters".into()));
        }
        Ok(Self { slots, steps, ..fresh })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn slots(&self) -> &[Mat] {
        &self.slots
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.steps += 1;
        let t = self.steps as f64;
        let k = self.config.slot_count();
        for id in params.ids().collect::<Vec<_>>() {
            let Some(g) = grads.get(id) else { continue };
            let p = params.get_mut(id);
            match self.config {
                OptimizerConfig::Sgd { lr, momentum } => {
                    if k == 0 {
                        p.zip_mut_with(g, |w, &d| *w -= lr * d);
                    } else {
                        let v = &mut self.slots[id.0];
                        v.zip_mut_with(g, |vv, &d| *vv = momentum * *vv + d);
                        p.zip_mut_with(v, |w, &vv| *w -= lr * vv);
                    }
                }
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powf(t);
                    let bc2 = 1.0 - beta2.powf(t);
                    let (m, v) = {
                        let (a, b) = self.slots.split_at_mut(2 * id.0 + 1);
                        (&mut a[2 * id.0], &mut b[0])
                    };
                    m.zip_mut_with(g, |mm, &d| *mm = beta1 * *mm + (1.0 - beta1) * d);
                    v.zip_mut_with(g, |vv, &d| *vv = beta2 * *vv + (1.0 - beta2) * d * d);
                    ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|w, &mm, &vv| {
                        *w -= lr * (mm / bc1) / ((vv / bc2).sqrt() + eps);
                    });
                }
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let n = grads.global_norm();
    if n > max_norm && n > 0.0 {
        grads.scale(max_norm / n);
    }
    n
}
