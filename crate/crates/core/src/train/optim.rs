use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_CLIP_NORM: f64 = 5.0;

/// Adam moments and hyperparameters. Moments are keyed by parameter name and
/// stored in the parameter order they were created with.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub moments: Vec<Moments>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub name: String,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl OptimizerState {
    /// Zeroed moments for `params` with the default hyperparameters.
    pub fn new(params: &[(String, Tensor)], learning_rate: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            moments: params
                .iter()
                .map(|(name, t)| Moments {
                    name: name.clone(),
                    first: vec![0.0; t.numel()],
                    second: vec![0.0; t.numel()],
                })
                .collect(),
        }
    }
}

/// One bias-corrected Adam update from the gradients held by `params`.
/// A parameter without a gradient is treated as having a zero gradient.
pub fn adam_step(params: &[(String, Tensor)], state: &mut OptimizerState) -> Result<()> {
    if params.len() != state.moments.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} tensors, got {}",
            state.moments.len(),
            params.len()
        )));
    }
    for ((name, p), m) in params.iter().zip(&state.moments) {
        if *name != m.name || p.numel() != m.first.len() {
            return Err(Error::Shape(format!(
                "parameter {name} ({} values) does not match optimizer slot {} ({} values)",
                p.numel(),
                m.name,
                m.first.len()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((_, p), m) in params.iter().zip(&mut state.moments) {
        let g = p.grad();
        let mut data = p.data_mut();
        for i in 0..data.len() {
            let gi = g.as_ref().map_or(0.0, |g| g[i]);
            m.first[i] = b1 * m.first[i] + (1.0 - b1) * gi;
            m.second[i] = b2 * m.second[i] + (1.0 - b2) * gi * gi;
            let mhat = m.first[i] / c1;
            let vhat = m.second[i] / c2;
            data[i] -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Global L2 norm over all gradients.
pub fn gradient_norm(params: &[(String, Tensor)]) -> Result<f64> {
    let mut sq = 0.0;
    for (name, p) in params {
        if let Some(g) = p.grad() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {name}")));
            }
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    }
    Ok(sq.sqrt())
}

/// Rescales every gradient by the same factor so the global L2 norm is at
/// most `threshold`. Returns the factor (1 when no clipping happened).
pub fn clip_gradients(params: &[(String, Tensor)], threshold: f64) -> Result<f64> {
    let norm = gradient_norm(params)?;
    if norm <= threshold {
        return Ok(1.0);
    }
    let scale = threshold / norm;
    for (_, p) in params {
        if let Some(mut g) = p.grad() {
            g.iter_mut().for_each(|v| *v *= scale);
            p.set_grad(Some(g));
        }
    }
    Ok(scale)
}
