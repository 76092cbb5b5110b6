//! Bias-corrected Adam updates over a [`NetParams`] store.

use super::NetParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(net: &NetParams, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: net
                .blocks()
                .iter()
                .map(|b| Tensor::zeros_real(b.value.dims()))
                .collect(),
            v: net
                .blocks()
                .iter()
                .map(|b| Tensor::zeros_real(b.value.dims()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam step over every parameter block: applies the bias-corrected
/// update in place, zeroes the gradients, and invalidates outstanding tapes.
pub fn adam_step(net: &mut NetParams, state: &mut AdamState) -> Result<()> {
    if state.m.len() != net.blocks().len() {
        return Err(Error::invalid("Adam state does not match parameter store"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (bi, block) in net.blocks_mut().iter_mut().enumerate() {
        let g = block.grad.real().to_vec();
        let m = state.m[bi].real_mut();
        let v = state.v[bi].real_mut();
        let p = block.value.real_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
        block.grad = Tensor::zeros_real(block.grad.dims());
    }
    net.bump_version();
    Ok(())
}
