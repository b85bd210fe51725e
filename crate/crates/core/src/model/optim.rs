use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use super::transformer::{Gradients, ModelParams};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for Adam.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Mat> = params
            .tensors
            .iter()
            .map(|t| Mat::zeros(t.rows, t.cols))
            .collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam step.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let congruent = |ms: &[Mat]| {
        ms.len() == params.tensors.len()
            && ms.iter().zip(&params.tensors).all(|(a, b)| a.shape() == b.shape())
    };
    if !congruent(&grads.tensors) || !congruent(&state.m) || !congruent(&state.v) {
        return Err(Error::ShapeMismatch(
            "gradients or optimizer state do not match parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, p) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[i].data;
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for k in 0..p.data.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p.data[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}
