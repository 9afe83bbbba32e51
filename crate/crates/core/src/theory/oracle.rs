//! Stochastic gradient oracles for the quadratic objective.
//!
//! A draw is `∇L(θ) + c‖∇L(θ)‖·u + σ·v` with `u`, `v` independent uniform
//! unit vectors, so the draw is unbiased and
//! `E‖g − ∇L‖² = c²‖∇L‖² + σ²` holds with equality. The three kinds differ
//! only in `c`: 0 for labeled data, `√(ε/2)` for friendly and `√(ν/2)` for
//! unfriendly unlabeled data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::quadratic::{norm_sq, QuadraticObjective};
use crate::error::{config, Result};
use crate::nn::FlatGradient;
use crate::rng::{rng_from, unit_sphere};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Id,
    Friendly,
    Unfriendly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub sigma2: f64,
    pub epsilon: f64,
    pub nu: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            epsilon: 0.05,
            nu: 1e4,
        }
    }
}

impl OracleSpec {
    /// `sigma2 = 0` is accepted so noise-free runs can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(config("sigma2 must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(config("epsilon must lie in [0, 1)"));
        }
        if !(self.nu > 1.0) || !self.nu.is_finite() {
            return Err(config("nu must be finite and > 1"));
        }
        Ok(())
    }

    pub fn coefficient(&self, kind: OracleKind) -> f64 {
        match kind {
            OracleKind::Id => 0.0,
            OracleKind::Friendly => (self.epsilon / 2.0).sqrt(),
            OracleKind::Unfriendly => (self.nu / 2.0).sqrt(),
        }
    }

    /// Closed-form `E‖g − ∇L‖²` of one draw.
    pub fn variance(&self, kind: OracleKind, grad_norm_sq: f64) -> f64 {
        let c = self.coefficient(kind);
        c * c * grad_norm_sq + self.sigma2
    }

    /// `σ² + (1−λ)·((τε + (1−τ)ν)/2)·‖∇L‖²`.
    pub fn mixture_variance_bound(&self, lambda: f64, tau: f64, grad_norm_sq: f64) -> f64 {
        self.sigma2
            + (1.0 - lambda) * ((tau * self.epsilon + (1.0 - tau) * self.nu) / 2.0) * grad_norm_sq
    }
}

/// Adds `weight · (one draw of kind)` into `out`, given the true gradient.
pub(crate) fn accumulate_draw<R: Rng + ?Sized>(
    kind: OracleKind,
    spec: &OracleSpec,
    grad: &[f64],
    grad_norm: f64,
    weight: f64,
    rng: &mut R,
    out: &mut [f64],
) {
    let c = spec.coefficient(kind);
    let sigma = spec.sigma2.sqrt();
    let dim = grad.len();
    let u = if c != 0.0 {
        Some(unit_sphere(rng, dim))
    } else {
        None
    };
    let v = if sigma != 0.0 {
        Some(unit_sphere(rng, dim))
    } else {
        None
    };
    for i in 0..dim {
        let mut g = grad[i];
        if let Some(u) = &u {
            g += c * grad_norm * u[i];
        }
        if let Some(v) = &v {
            g += sigma * v[i];
        }
        out[i] += weight * g;
    }
}

/// Mixture weights `(λ, (1−λ)τ, (1−λ)(1−τ))` for id, friendly, unfriendly.
pub fn mixture_weights(lambda: f64, tau: f64) -> [(OracleKind, f64); 3] {
    [
        (OracleKind::Id, lambda),
        (OracleKind::Friendly, (1.0 - lambda) * tau),
        (OracleKind::Unfriendly, (1.0 - lambda) * (1.0 - tau)),
    ]
}

/// Draws the mixed gradient with a caller-owned generator. Components with
/// zero weight are not drawn.
pub fn mixed_gradient_with<R: Rng + ?Sized>(
    spec: &OracleSpec,
    grad: &[f64],
    lambda: f64,
    tau: f64,
    rng: &mut R,
) -> Vec<f64> {
    let gn = norm_sq(grad).sqrt();
    let mut out = vec![0.0; grad.len()];
    for (kind, w) in mixture_weights(lambda, tau) {
        if w != 0.0 {
            accumulate_draw(kind, spec, grad, gn, w, rng, &mut out);
        }
    }
    out
}

/// One oracle draw at `θ`.
pub fn sample_oracle(
    kind: OracleKind,
    objective: &QuadraticObjective,
    spec: &OracleSpec,
    theta: &[f64],
    seed: u64,
) -> FlatGradient {
    let grad = objective.grad(theta);
    let gn = norm_sq(&grad).sqrt();
    let mut out = vec![0.0; grad.len()];
    accumulate_draw(kind, spec, &grad, gn, 1.0, &mut rng_from(seed), &mut out);
    FlatGradient::from_vec(out)
}

/// `λ·g_id + (1−λ)(τ·g_fr + (1−τ)·g_uf)` with independent draws.
pub fn mixed_gradient(
    objective: &QuadraticObjective,
    spec: &OracleSpec,
    theta: &[f64],
    lambda: f64,
    tau: f64,
    seed: u64,
) -> Result<FlatGradient> {
    if !(0.0..=1.0).contains(&lambda) || !(0.0..=1.0).contains(&tau) {
        return Err(config("lambda and tau must lie in [0, 1]"));
    }
    let grad = objective.grad(theta);
    Ok(FlatGradient::from_vec(mixed_gradient_with(
        spec,
        &grad,
        lambda,
        tau,
        &mut rng_from(seed),
    )))
}
