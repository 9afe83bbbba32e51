//! Strongly convex quadratics with a prescribed spectrum.
//!
//! `L(θ) = ½ (θ − θ*)ᵀ H (θ − θ*) + L*` with `H = Q diag(λ) Qᵀ` for a random
//! orthogonal `Q`. The smallest eigenvalue is the PL constant and the largest
//! the smoothness constant.

use serde::Serialize;

use crate::error::{config, Result};
use crate::rng::{gaussian_vec, rng_from};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadraticObjective {
    pub dim: usize,
    /// Eigenvalues of `H`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Row-major `dim × dim` Hessian.
    pub hessian: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub l_star: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Random orthogonal matrix by modified Gram-Schmidt on Gaussian columns,
/// stored as rows `q[i]` (each an orthonormal vector).
fn random_orthonormal(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = gaussian_vec(&mut rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm_sq(&v).sqrt();
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

impl QuadraticObjective {
    /// Eigenvalues evenly spaced over `[mu, l_smooth]` (both endpoints hit
    /// exactly), random eigenbasis and a standard normal optimum.
    pub fn new(dim: usize, mu: f64, l_smooth: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(config("quadratic dimension must be >= 1"));
        }
        if !(mu > 0.0) || !(l_smooth >= mu) || !l_smooth.is_finite() {
            return Err(config(format!(
                "need 0 < mu <= L, got mu={mu}, L={l_smooth}"
            )));
        }
        let eigenvalues: Vec<f64> = if dim == 1 {
            vec![mu]
        } else {
            (0..dim)
                .map(|i| {
                    if i == dim - 1 {
                        l_smooth
                    } else {
                        mu + (l_smooth - mu) * i as f64 / (dim - 1) as f64
                    }
                })
                .collect()
        };
        let q = random_orthonormal(dim, seed);
        let mut hessian = vec![0.0; dim * dim];
        for (lam, v) in eigenvalues.iter().zip(&q) {
            for r in 0..dim {
                for c in 0..dim {
                    hessian[r * dim + c] += lam * v[r] * v[c];
                }
            }
        }
        // Symmetrize away rounding.
        for r in 0..dim {
            for c in r + 1..dim {
                let m = 0.5 * (hessian[r * dim + c] + hessian[c * dim + r]);
                hessian[r * dim + c] = m;
                hessian[c * dim + r] = m;
            }
        }
        let theta_star = gaussian_vec(&mut rng_from(seed ^ 0x5eed), dim);
        Ok(Self {
            dim,
            eigenvalues,
            hessian,
            theta_star,
            l_star: 0.0,
        })
    }

    /// `H = l·I`, optimum at the origin.
    pub fn isotropic(dim: usize, l: f64) -> Self {
        let mut hessian = vec![0.0; dim * dim];
        for i in 0..dim {
            hessian[i * dim + i] = l;
        }
        Self {
            dim,
            eigenvalues: vec![l; dim],
            hessian,
            theta_star: vec![0.0; dim],
            l_star: 0.0,
        }
    }

    pub fn mu(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn l_smooth(&self) -> f64 {
        self.eigenvalues[self.dim - 1]
    }

    pub fn hess_vec(&self, v: &[f64]) -> Vec<f64> {
        self.hessian
            .chunks_exact(self.dim)
            .map(|row| dot(row, v))
            .collect()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| a - b)
            .collect();
        self.hess_vec(&e)
    }

    /// `L(θ) − L*`.
    pub fn gap(&self, theta: &[f64]) -> f64 {
        let e: Vec<f64> = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| a - b)
            .collect();
        0.5 * dot(&e, &self.hess_vec(&e))
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.gap(theta) + self.l_star
    }

    /// A point with `L(θ₀) − L* = delta0` along a random direction.
    pub fn start_with_gap(&self, delta0: f64, seed: u64) -> Vec<f64> {
        let mut rng = rng_from(seed);
        let w = loop {
            let w = gaussian_vec(&mut rng, self.dim);
            if norm_sq(&w) > 0.0 {
                break w;
            }
        };
        let curv = dot(&w, &self.hess_vec(&w));
        let s = (2.0 * delta0 / curv).sqrt();
        self.theta_star
            .iter()
            .zip(&w)
            .map(|(t, x)| t + s * x)
            .collect()
    }

    /// Largest eigenvalue of `H` by power iteration.
    pub fn smoothness_constant(&self) -> f64 {
        power_iteration(self.dim, |v| self.hess_vec(v))
    }

    /// Smallest eigenvalue of `H`, via power iteration on `s·I − H`.
    pub fn pl_constant(&self) -> f64 {
        let s = self.smoothness_constant();
        s - power_iteration(self.dim, |v| {
            let hv = self.hess_vec(v);
            v.iter().zip(hv).map(|(a, b)| s * a - b).collect()
        })
    }
}

/// Dominant eigenvalue of a symmetric positive semidefinite map. Stops once
/// the residual `‖Av − ρv‖` drops below 1e-12, which bounds the eigenvalue
/// error by the same amount.
fn power_iteration(dim: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64)
        .collect();
    let n = norm_sq(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    let mut rho = 0.0;
    for _ in 0..1_000_000 {
        let av = apply(&v);
        rho = dot(&v, &av);
        let resid: f64 = av
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - rho * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let n = norm_sq(&av).sqrt();
        if resid < 1e-12 || n == 0.0 {
            break;
        }
        v = av.into_iter().map(|x| x / n).collect();
    }
    rho
}
