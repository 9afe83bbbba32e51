use std::f64::consts::PI;

use crate::error::{config, numeric, shape, Result};
use crate::nn::grad::FlatGradient;
use crate::nn::params::ModelParams;

/// Momentum buffer carried between [`sgd_step`] calls.
#[derive(Clone, Debug, PartialEq)]
pub struct Velocity(Vec<f64>);

impl Velocity {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// One SGD step with Nesterov momentum:
/// `v' = m v + g`, `theta' = theta - lr (g + m v')`.
/// With `momentum = 0` this is plain `theta - lr g`.
pub fn sgd_step(
    params: &ModelParams,
    g: &FlatGradient,
    lr: f64,
    momentum: f64,
    state: &Velocity,
) -> Result<(ModelParams, Velocity)> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(config(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(config(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if g.len() != params.len() || state.0.len() != params.len() {
        return Err(shape(
            "gradient, velocity and parameters must have equal length",
        ));
    }
    if !g.is_finite() {
        return Err(numeric("non-finite gradient passed to sgd_step"));
    }
    let mut next = params.clone();
    let mut v = state.0.clone();
    for ((theta, vi), &gi) in next
        .flat_mut()
        .iter_mut()
        .zip(v.iter_mut())
        .zip(g.as_slice())
    {
        *vi = momentum * *vi + gi;
        *theta -= lr * (gi + momentum * *vi);
    }
    Ok((next, Velocity(v)))
}

/// `lr0 * cos(7 pi t / (16 T))`, the FixMatch-style cosine decay.
pub fn cosine_lr(t: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(config("cosine schedule needs at least one epoch"));
    }
    if t > total {
        return Err(config(format!("epoch {t} beyond schedule length {total}")));
    }
    if !(lr0 > 0.0) {
        return Err(config(format!(
            "initial learning rate must be positive, got {lr0}"
        )));
    }
    Ok(lr0 * (7.0 * PI * t as f64 / (16.0 * total as f64)).cos())
}
