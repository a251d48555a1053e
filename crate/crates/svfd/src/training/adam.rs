//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::network::{GradientBundle, VelocityNet};

/// First/second moment buffers plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over a flat parameter slice.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adam shapes disagree: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient in adam step"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

/// Apply one Adam update to all network parameters, walking the layers in
/// canonical order against a flat moment buffer.
pub fn adam_step_net(
    net: &mut VelocityNet,
    grads: &GradientBundle,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let grad_layers: Vec<(Vec<f64>, Vec<f64>)> = grads
        .theta_layers()
        .map(|(w, b)| (w.iter().copied().collect(), b.to_vec()))
        .collect();
    let mut offset = 0usize;
    for (layer, (gw, gb)) in net.layers_mut().into_iter().zip(&grad_layers) {
        let w = layer
            .weight
            .as_slice_mut()
            .expect("layer weights are contiguous");
        let mut sub = AdamSlice::new(state, offset, w.len());
        adam_slice_step(w, gw, &mut sub, lr)?;
        offset += w.len();
        let b = layer.bias.as_slice_mut().expect("bias is contiguous");
        let mut sub = AdamSlice::new(state, offset, b.len());
        adam_slice_step(b, gb, &mut sub, lr)?;
        offset += b.len();
    }
    state.step += 1;
    Ok(())
}

/// Borrowed window into a shared Adam state (the step counter advances once
/// per [`adam_step_net`] call, not per tensor).
struct AdamSlice<'a> {
    m: &'a mut [f64],
    v: &'a mut [f64],
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<'a> AdamSlice<'a> {
    fn new(state: &'a mut AdamState, offset: usize, len: usize) -> Self {
        Self {
            m: &mut state.m[offset..offset + len],
            v: &mut state.v[offset..offset + len],
            step: state.step,
            beta1: state.beta1,
            beta2: state.beta2,
            eps: state.eps,
        }
    }
}

fn adam_slice_step(params: &mut [f64], grads: &[f64], s: &mut AdamSlice, lr: f64) -> Result<()> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerical("non-finite gradient in adam step"));
    }
    let t = (s.step + 1) as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    for i in 0..params.len() {
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        params[i] -= lr * (s.m[i] / bc1) / ((s.v[i] / bc2).sqrt() + s.eps);
    }
    Ok(())
}
