//! Monte-Carlo and direct checks of the inequalities behind the convergence
//! analysis.

use rayon::prelude::*;
use serde::Serialize;

use super::oracle::{mixed_gradient_with, OracleSpec};
use super::quadratic::{norm_sq, QuadraticObjective};
use super::sgd::Trajectory;
use crate::error::{config, domain, Result};
use crate::rng::{derive_seed, rng_from};
use crate::selection::otsu_threshold;

const CHUNK: usize = 1000;

/// Result of a Monte-Carlo inequality check `E[lhs] ≤ E[rhs]`. The check
/// passes when the mean margin `rhs − lhs` is at least `−3` standard errors.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub std_error: f64,
    pub draws: usize,
    pub holds: bool,
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Estimates means of `(lhs, rhs)` per draw, using a fixed chunking so the
/// result does not depend on the thread count.
fn monte_carlo<F>(name: &str, draws: usize, seed: u64, sample: F) -> Result<InequalityReport>
where
    F: Fn(&mut crate::rng::LabRng) -> (f64, f64) + Sync,
{
    if draws == 0 {
        return Err(config("need at least one draw"));
    }
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<[Moments; 3]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(derive_seed(seed, &[c as u64]));
            let mut acc = [Moments::default(); 3];
            let len = CHUNK.min(draws - c * CHUNK);
            for _ in 0..len {
                let (l, r) = sample(&mut rng);
                acc[0].push(l);
                acc[1].push(r);
                acc[2].push(r - l);
            }
            acc
        })
        .collect();
    let mut tot = [Moments::default(); 3];
    for p in parts {
        for i in 0..3 {
            tot[i] = tot[i].merge(p[i]);
        }
    }
    let (lhs, rhs, margin) = (tot[0].mean, tot[1].mean, tot[2].mean);
    let se = tot[2].std_error();
    let slack = 1e-12 * (lhs.abs() + rhs.abs());
    Ok(InequalityReport {
        name: name.to_string(),
        lhs,
        rhs,
        margin,
        std_error: se,
        draws,
        holds: margin >= -3.0 * se - slack,
    })
}

/// Per-step descent inequality for one SGD step from `θ` with the mixed
/// oracle:
/// `E[L(θ − ηg) − L(θ)] ≤ −(η/2)‖∇L‖² + (η²L/2)·E‖∇L − g‖²`.
pub fn check_descent_step(
    objective: &QuadraticObjective,
    spec: &OracleSpec,
    theta: &[f64],
    eta: f64,
    (lambda, tau): (f64, f64),
    draws: usize,
    seed: u64,
) -> Result<InequalityReport> {
    let l = objective.l_smooth();
    if !(eta > 0.0) || eta > (1.0 / l) * (1.0 + 1e-12) {
        return Err(config(format!("step size {eta} must lie in (0, 1/L]")));
    }
    let grad = objective.grad(theta);
    let gn2 = norm_sq(&grad);
    let base = objective.gap(theta);
    monte_carlo("descent_step", draws, seed, |rng| {
        let g = mixed_gradient_with(spec, &grad, lambda, tau, rng);
        let next: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - eta * gi).collect();
        let lhs = objective.gap(&next) - base;
        let dev: f64 = grad.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum();
        (lhs, -0.5 * eta * gn2 + 0.5 * eta * eta * l * dev)
    })
}

/// `E‖∇L − g_mix‖² ≤ σ² + (1−λ)((τε + (1−τ)ν)/2)‖∇L‖²`.
pub fn check_mixture_variance_bound(
    objective: &QuadraticObjective,
    spec: &OracleSpec,
    theta: &[f64],
    (lambda, tau): (f64, f64),
    draws: usize,
    seed: u64,
) -> Result<InequalityReport> {
    let grad = objective.grad(theta);
    let bound = spec.mixture_variance_bound(lambda, tau, norm_sq(&grad));
    monte_carlo("mixture_variance", draws, seed, |rng| {
        let g = mixed_gradient_with(spec, &grad, lambda, tau, rng);
        let dev: f64 = grad.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum();
        (dev, bound)
    })
}

/// Monte-Carlo mean and variance of `g − ∇L` for a single oracle kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub kind: super::oracle::OracleKind,
    /// Largest `|mean_i| / se_i` over coordinates.
    pub max_mean_z: f64,
    pub variance: f64,
    pub variance_target: f64,
    pub variance_se: f64,
    pub draws: usize,
    pub holds: bool,
}

/// Checks unbiasedness (every coordinate mean within 3 standard errors of 0)
/// and the exact variance `c²‖∇L‖² + σ²` (within 3 standard errors).
pub fn check_oracle_conformance(
    kind: super::oracle::OracleKind,
    objective: &QuadraticObjective,
    spec: &OracleSpec,
    theta: &[f64],
    draws: usize,
    seed: u64,
) -> Result<ConformanceReport> {
    if draws < 2 {
        return Err(config("need at least two draws"));
    }
    let grad = objective.grad(theta);
    let gn = norm_sq(&grad).sqrt();
    let dim = grad.len();
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from(derive_seed(seed, &[c as u64]));
            let mut acc = vec![Moments::default(); dim + 1];
            let mut g = vec![0.0; dim];
            for _ in 0..CHUNK.min(draws - c * CHUNK) {
                g.iter_mut().for_each(|x| *x = 0.0);
                super::oracle::accumulate_draw(kind, spec, &grad, gn, 1.0, &mut rng, &mut g);
                let mut dev = 0.0;
                for i in 0..dim {
                    let e = g[i] - grad[i];
                    acc[i].push(e);
                    dev += e * e;
                }
                acc[dim].push(dev);
            }
            acc
        })
        .collect();
    let mut tot = vec![Moments::default(); dim + 1];
    for p in parts {
        for (t, x) in tot.iter_mut().zip(p) {
            *t = t.merge(x);
        }
    }
    let max_mean_z = tot[..dim]
        .iter()
        .map(|m| {
            let se = m.std_error();
            if se == 0.0 {
                if m.mean.abs() < 1e-12 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                m.mean.abs() / se
            }
        })
        .fold(0.0, f64::max);
    let target = spec.variance(kind, gn * gn);
    let var = tot[dim].mean;
    let var_se = tot[dim].std_error();
    let var_ok = (var - target).abs() <= 3.0 * var_se + 1e-12 * target.max(1.0);
    Ok(ConformanceReport {
        kind,
        max_mean_z,
        variance: var,
        variance_target: target,
        variance_se: var_se,
        draws,
        holds: max_mean_z <= 3.0 && var_ok,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub windows: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` over windows with a nonzero right side.
    pub max_ratio: f64,
    pub holds: bool,
}

/// For every `t` and `m ≤ max_window` checks
/// `‖∇L(θ_{t+m}) − ∇L(θ_t)‖ ≤ η·L·‖Σ_{k<m} g_{t+k}‖`.
pub fn check_drift_bound(
    traj: &Trajectory,
    eta: f64,
    l_smooth: f64,
    max_window: usize,
) -> DriftReport {
    let steps = traj.step_grads.len();
    let dim = traj.full_grads.first().map_or(0, Vec::len);
    let mut windows = 0;
    let mut violations = 0;
    let mut max_ratio: f64 = 0.0;
    for t in 0..=steps {
        let mut sum = vec![0.0; dim];
        for m in 0..=max_window.min(steps - t) {
            if m > 0 {
                sum.iter_mut()
                    .zip(&traj.step_grads[t + m - 1])
                    .for_each(|(s, g)| *s += g);
            }
            let lhs: f64 = traj.full_grads[t + m]
                .iter()
                .zip(&traj.full_grads[t])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let rhs = eta * l_smooth * norm_sq(&sum).sqrt();
            let scale = traj.full_grads[t]
                .iter()
                .map(|x| x.abs())
                .fold(0.0, f64::max)
                + rhs;
            windows += 1;
            if lhs > rhs + 1e-9 * scale.max(1e-300) {
                violations += 1;
            }
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            }
        }
    }
    DriftReport {
        windows,
        violations,
        max_ratio,
        holds: violations == 0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LsmReport {
    pub instances: usize,
    pub selected: usize,
    pub violations: usize,
    pub rho: f64,
    pub holds: bool,
}

/// For each instance with `‖g_x(θ) − ḡ‖ ≤ √ρ` checks
/// `L_x(θ) ≤ (√ρ + ‖ḡ‖)²/(2μ) + min L_x`. Every instance must satisfy the
/// PL condition with constant `mu`.
pub fn check_lsm_bound(
    instances: &[QuadraticObjective],
    theta: &[f64],
    rho: f64,
    g_bar: &[f64],
    mu: f64,
) -> Result<LsmReport> {
    if instances.iter().any(|q| q.mu() < mu * (1.0 - 1e-12)) {
        return Err(domain("an instance has a PL constant below mu"));
    }
    let gb = norm_sq(g_bar).sqrt();
    let slack = (rho.sqrt() + gb).powi(2) / (2.0 * mu);
    let mut selected = 0;
    let mut violations = 0;
    for q in instances {
        let g = q.grad(theta);
        let dist: f64 = g.iter().zip(g_bar).map(|(a, b)| (a - b).powi(2)).sum();
        if dist <= rho {
            selected += 1;
            let lhs = q.value(theta);
            let rhs = slack + q.l_star;
            if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
                violations += 1;
            }
        }
    }
    Ok(LsmReport {
        instances: instances.len(),
        selected,
        violations,
        rho,
        holds: violations == 0,
    })
}

/// One random selection event: `count` per-instance quadratics with PL
/// constants at least `mu` and random minima, a random `θ`, a reference
/// gradient averaged over the first quarter of the instances, and an Otsu
/// threshold over the squared deviations.
pub fn lsm_selection_event(
    dim: usize,
    count: usize,
    mu: f64,
    seed: u64,
) -> Result<(Vec<QuadraticObjective>, Vec<f64>, f64, Vec<f64>)> {
    use rand::Rng;
    if count < 4 {
        return Err(config("need at least four instances"));
    }
    let mut rng = rng_from(seed);
    let instances: Vec<QuadraticObjective> = (0..count)
        .map(|i| {
            let mu_i = mu * rng.random_range(1.0..3.0);
            let mut q = QuadraticObjective::new(
                dim,
                mu_i,
                mu_i * rng.random_range(1.0..10.0),
                derive_seed(seed, &[i as u64]),
            )?;
            q.l_star = rng.random_range(-1.0..1.0);
            if i % 5 == 0 {
                q.theta_star.iter_mut().for_each(|x| *x *= 4.0);
            }
            Ok(q)
        })
        .collect::<Result<_>>()?;
    let theta = crate::rng::gaussian_vec(&mut rng, dim);
    let refs = count / 4;
    let mut g_bar = vec![0.0; dim];
    for q in &instances[..refs] {
        g_bar
            .iter_mut()
            .zip(q.grad(&theta))
            .for_each(|(a, b)| *a += b / refs as f64);
    }
    let scores: Vec<f64> = instances
        .iter()
        .map(|q| {
            q.grad(&theta)
                .iter()
                .zip(&g_bar)
                .map(|(a, b)| (a - b).powi(2))
                .sum()
        })
        .collect();
    let rho = otsu_threshold(&scores)?;
    Ok((instances, theta, rho, g_bar))
}
