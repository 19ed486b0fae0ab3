//! Parameter enumeration for models built from tensor-owning layers.

use crate::tensor::{Real, Tensor};

/// Anything with named trainable tensors. Names are stable across builds
/// from the same config and are used for tape binding, optimizer state,
/// and checkpoints.
pub trait Module<T: Real> {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

pub fn param_count<T: Real>(m: &dyn Module<T>) -> usize {
    let mut n = 0;
    m.visit_params(&mut |_, t| n += t.numel());
    n
}

pub fn param_names<T: Real>(m: &dyn Module<T>) -> Vec<String> {
    let mut names = Vec::new();
    m.visit_params(&mut |name, _| names.push(name.to_string()));
    names
}

#[cfg(test)]
pub(crate) fn params_vec<T: Real>(m: &dyn Module<T>) -> Vec<(String, Tensor<T>)> {
    let mut out = Vec::new();
    m.visit_params(&mut |name, t| out.push((name.to_string(), t.clone())));
    out
}
