use crate::error::{config, numeric, shape, Result};
use crate::nn::params::ModelParams;

/// Gradient with the same length and ordering as the flattened parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatGradient(Vec<f64>);

impl FlatGradient {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn for_params(params: &ModelParams) -> Self {
        Self::zeros(params.len())
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &FlatGradient) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &FlatGradient) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// A scalar loss of the parameters with an exact gradient.
pub trait Objective {
    fn value(&self, params: &ModelParams) -> Result<f64>;

    fn value_and_grad(&self, params: &ModelParams) -> Result<(f64, FlatGradient)>;
}

/// Exact reverse-mode gradient of `loss` at `params`.
pub fn grad(params: &ModelParams, loss: &dyn Objective) -> Result<FlatGradient> {
    let (value, g) = loss.value_and_grad(params)?;
    if !value.is_finite() {
        return Err(numeric(format!("loss is not finite at params: {value}")));
    }
    if g.len() != params.len() {
        return Err(shape(format!(
            "gradient length {} != parameter count {}",
            g.len(),
            params.len()
        )));
    }
    if let Some(i) = g.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(numeric(format!(
            "gradient entry {i} is not finite (loss {value})"
        )));
    }
    Ok(g)
}

/// Central-difference gradient, one coordinate at a time.
pub fn finite_diff_grad(
    params: &ModelParams,
    loss: &dyn Objective,
    h: f64,
) -> Result<FlatGradient> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(config(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut probe = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = params.as_flat()[i];
        probe.flat_mut()[i] = orig + h;
        let up = loss.value(&probe)?;
        probe.flat_mut()[i] = orig - h;
        let down = loss.value(&probe)?;
        probe.flat_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(FlatGradient(out))
}

/// Largest per-coordinate relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &FlatGradient, b: &FlatGradient, floor: f64) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
