//! Adam optimizer and exponential moving average of weights.

use crate::module::Module;
use crate::tape::{Grads, Tape};
use crate::tensor::{Real, Tensor};
use indexmap::IndexMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moments are kept in f64 so that f32 training
/// updates stay well conditioned.
pub struct Adam {
    pub lr: f64,
    step: usize,
    slots: IndexMap<String, Slot>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            step: 0,
            slots: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Applies one update from the gradients of `tape`'s parameter leaves.
    pub fn step<T: Real, M: Module<T>>(&mut self, model: &mut M, tape: &Tape<T>, grads: &Grads<T>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        model.visit_params_mut(&mut |name, param| {
            let Some(var) = tape.param_var(name) else {
                return; // not bound this step
            };
            let Some(g) = grads.get(var) else {
                return;
            };
            let slot = self
                .slots
                .entry(name.to_string())
                .or_insert_with(|| Slot {
                    m: vec![0.0; param.numel()],
                    v: vec![0.0; param.numel()],
                });
            let data = param.data_mut();
            for i in 0..data.len() {
                let gi = g[i].to_f64();
                slot.m[i] = ADAM_BETA1 * slot.m[i] + (1.0 - ADAM_BETA1) * gi;
                slot.v[i] = ADAM_BETA2 * slot.v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                let upd = self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                data[i] = T::from_f64(data[i].to_f64() - upd);
            }
        });
    }
}

/// Shadow copy of the weights, decayed toward the live weights after every
/// step and overlaid onto a model for sampling. The effective decay is
/// warmed up as min(decay, (1 + n) / (10 + n)) so short desk-scale runs are
/// not biased toward the random initialization.
pub struct Ema<T: Real> {
    pub decay: f64,
    updates: usize,
    shadow: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Ema<T> {
    pub fn new<M: Module<T>>(model: &M, decay: f64) -> Self {
        let mut shadow = IndexMap::new();
        model.visit_params(&mut |name, t| {
            shadow.insert(name.to_string(), t.clone());
        });
        Ema {
            decay,
            updates: 0,
            shadow,
        }
    }

    pub fn update<M: Module<T>>(&mut self, model: &M) {
        self.updates += 1;
        let n = self.updates as f64;
        let d = self.decay.min((1.0 + n) / (10.0 + n));
        model.visit_params(&mut |name, t| {
            let s = self.shadow.get_mut(name).expect("shadow has every param");
            for (sv, &pv) in s.data_mut().iter_mut().zip(t.data()) {
                *sv = T::from_f64(d * sv.to_f64() + (1.0 - d) * pv.to_f64());
            }
        });
    }

    /// Writes the averaged weights into `model` (typically a clone of the
    /// trained model kept for sampling).
    pub fn overlay<M: Module<T>>(&self, model: &mut M) {
        model.visit_params_mut(&mut |name, t| {
            if let Some(s) = self.shadow.get(name) {
                t.data_mut().copy_from_slice(s.data());
            }
        });
    }
}
