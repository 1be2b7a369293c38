use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            config,
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, idx: usize) -> &[f64] {
        &self.first_moment[idx]
    }

    pub fn second_moment(&self, idx: usize) -> &[f64] {
        &self.second_moment[idx]
    }
}

/// One bias-corrected Adam update. `grads[i]` belongs to parameter `i`;
/// `None` means the parameter received no gradient this step.
///
/// All gradients are validated before anything is written, so a non-finite
/// gradient leaves both the parameters and the optimizer state untouched.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
) -> Result<()> {
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    for ((_, p), g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.value.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.value.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of `{}`", p.name),
                });
            }
        }
    }

    state.step_count += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step_count as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);

    for (i, (_, p)) in params.iter_mut().enumerate() {
        let Some(g) = &grads[i] else { continue };
        if !p.trainable {
            continue;
        }
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (k, w) in p.value.data_mut().iter_mut().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            *w -= lr * mh / (vh.sqrt() + epsilon);
        }
    }
    Ok(())
}
