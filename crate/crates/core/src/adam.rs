//! Adam over weights, biases and batch-norm scale/shift. Running statistics
//! are not optimizer state and are never touched here.

use serde::{Deserialize, Serialize};

use crate::backprop::GradientSet;
use crate::error::{Error, Result};
use crate::model::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    /// First moments, one flat buffer per parameter array.
    pub m: Vec<Vec<f64>>,
    /// Second moments.
    pub v: Vec<Vec<f64>>,
}

/// Parameter arrays in a fixed order: per layer weights, bias, then gamma and
/// shift when present.
fn param_arrays(params: &mut NetworkParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    for l in &mut params.layers {
        out.push(l.weights.data_mut());
        out.push(&mut l.bias);
        if let Some(bn) = l.bn.as_mut() {
            out.push(&mut bn.gamma);
            out.push(&mut bn.shift);
        }
    }
    out
}

fn grad_arrays(grads: &GradientSet) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = Vec::new();
    for g in &grads.layers {
        out.push(g.weights.data());
        out.push(&g.bias);
        if let (Some(gamma), Some(shift)) = (&g.gamma, &g.shift) {
            out.push(gamma);
            out.push(shift);
        }
    }
    out
}

impl AdamState {
    pub fn new(params: &NetworkParams, hyper: AdamHyper) -> Self {
        let mut p = params.clone();
        let sizes: Vec<usize> = param_arrays(&mut p).iter().map(|a| a.len()).collect();
        Self {
            hyper,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &GradientSet) -> Result<()> {
        let g_arrays = grad_arrays(grads);
        let p_arrays = param_arrays(params);
        if g_arrays.len() != p_arrays.len()
            || g_arrays.len() != self.m.len()
            || g_arrays
                .iter()
                .zip(&p_arrays)
                .zip(&self.m)
                .any(|((g, p), m)| g.len() != p.len() || g.len() != m.len())
        {
            return Err(Error::Shape(
                "gradient, parameter and optimizer layouts differ".into(),
            ));
        }
        if let Some(layer) = grads.first_non_finite() {
            return Err(Error::Numerical {
                layer,
                what: "gradient passed to Adam".into(),
            });
        }
        self.step += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in p_arrays
            .into_iter()
            .zip(g_arrays)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns the updated parameters and state.
pub fn adam_step(
    state: &AdamState,
    params: &NetworkParams,
    grads: &GradientSet,
) -> Result<(NetworkParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}
