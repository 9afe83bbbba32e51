//! Mixed-oracle SGD on the quadratic and the step-size rules of the three
//! data regimes: all data (labeled, friendly and unfriendly), labeled only,
//! and labeled plus friendly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::oracle::{mixed_gradient_with, OracleSpec};
use super::quadratic::QuadraticObjective;
use crate::error::{config, Result};
use crate::rng::{derive_seed, rng_from};

const THETA0_TAG: u64 = 0x7e7a;
const REP_TAG: u64 = 0x4e9;

/// Gap above which a replication is declared divergent.
pub const DIVERGENCE_GAP: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TheoryCase {
    /// Labeled, friendly and unfriendly samples.
    A,
    /// Labeled samples only.
    B,
    /// Labeled and friendly samples.
    C,
}

impl TheoryCase {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoryCase::A => "a",
            TheoryCase::B => "b",
            TheoryCase::C => "c",
        }
    }
}

/// `2/(Nμ) · log(Nμ²Δ₀/(σ²L))` for a budget of `N` low-noise samples.
pub fn eta_low_noise(total: f64, mu: f64, l: f64, sigma2: f64, delta0: f64) -> f64 {
    2.0 / (total * mu) * (total * mu * mu * delta0 / (sigma2 * l)).ln()
}

/// `1/((1−λ)(τε + (1−τ)ν)L)`.
pub fn eta_all_data(lambda: f64, tau: f64, spec: &OracleSpec, l: f64) -> f64 {
    1.0 / ((1.0 - lambda) * (tau * spec.epsilon + (1.0 - tau) * spec.nu) * l)
}

/// The budget `2(1−λ)(τε + (1−τ)ν)L/μ` at which the all-data step size
/// coincides with `2/(Nμ)`.
pub fn special_case_total(lambda: f64, tau: f64, spec: &OracleSpec, l: f64, mu: f64) -> f64 {
    2.0 * (1.0 - lambda) * (tau * spec.epsilon + (1.0 - tau) * spec.nu) * l / mu
}

/// `(Lσ²/(Nμ²))·(1 + 2 log(Nμ²Δ₀/(σ²L)))`.
pub fn low_noise_bound(total: f64, mu: f64, l: f64, sigma2: f64, delta0: f64) -> f64 {
    l * sigma2 / (total * mu * mu) * (1.0 + 2.0 * (total * mu * mu * delta0 / (sigma2 * l)).ln())
}

#[derive(Clone, Debug)]
pub struct TheoryScenario {
    pub case: TheoryCase,
    pub objective: QuadraticObjective,
    pub oracle: OracleSpec,
    pub lambda: f64,
    pub tau: f64,
    pub n: usize,
    pub m: usize,
    pub m_prime: usize,
    pub eta: f64,
    /// Number of SGD steps, one per sample.
    pub steps: usize,
    pub theta0: Vec<f64>,
    pub delta0: f64,
    pub seed: u64,
    pub replications: usize,
}

impl TheoryScenario {
    /// A scenario with explicit weights, counts and step size.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        case: TheoryCase,
        objective: &QuadraticObjective,
        oracle: OracleSpec,
        (lambda, tau): (f64, f64),
        (n, m, m_prime): (usize, usize, usize),
        eta: f64,
        delta0: f64,
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let scn = Self {
            case,
            objective: objective.clone(),
            oracle,
            lambda,
            tau,
            n,
            m,
            m_prime,
            eta,
            steps: n + m + m_prime,
            theta0: objective.start_with_gap(delta0, derive_seed(seed, &[THETA0_TAG])),
            delta0,
            seed,
            replications,
        };
        scn.validate()?;
        Ok(scn)
    }

    /// Only labeled samples, `T = n`.
    pub fn labeled_only(
        objective: &QuadraticObjective,
        oracle: OracleSpec,
        n: usize,
        delta0: f64,
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let eta = eta_low_noise(
            n as f64,
            objective.mu(),
            objective.l_smooth(),
            oracle.sigma2,
            delta0,
        );
        Self::custom(
            TheoryCase::B,
            objective,
            oracle,
            (1.0, 1.0),
            (n, 0, 0),
            eta,
            delta0,
            seed,
            replications,
        )
    }

    /// Labeled plus friendly samples, `T = n + m`, `λ = n/(n+m)`, `τ = 1`.
    pub fn labeled_friendly(
        objective: &QuadraticObjective,
        oracle: OracleSpec,
        n: usize,
        m: usize,
        delta0: f64,
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let total = (n + m) as f64;
        let eta = eta_low_noise(
            total,
            objective.mu(),
            objective.l_smooth(),
            oracle.sigma2,
            delta0,
        );
        let lambda = n as f64 / total;
        Self::custom(
            TheoryCase::C,
            objective,
            oracle,
            (lambda, 1.0),
            (n, m, 0),
            eta,
            delta0,
            seed,
            replications,
        )
    }

    /// All samples with mixture weights `(λ, τ)` over a budget of `total`
    /// steps. Counts are `n = round(λN)`, `m = round((1−λ)τN)` and the rest
    /// unfriendly.
    pub fn all_data(
        objective: &QuadraticObjective,
        oracle: OracleSpec,
        lambda: f64,
        tau: f64,
        total: usize,
        delta0: f64,
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let eta = eta_all_data(lambda, tau, &oracle, objective.l_smooth());
        let (n, m, mp) = split_counts(lambda, tau, total);
        Self::custom(
            TheoryCase::A,
            objective,
            oracle,
            (lambda, tau),
            (n, m, mp),
            eta,
            delta0,
            seed,
            replications,
        )
    }

    /// All-data scenario at the special budget where the step size equals
    /// `2/(Nμ)`.
    pub fn special_case(
        objective: &QuadraticObjective,
        oracle: OracleSpec,
        lambda: f64,
        tau: f64,
        delta0: f64,
        seed: u64,
        replications: usize,
    ) -> Result<Self> {
        let total = special_case_total(lambda, tau, &oracle, objective.l_smooth(), objective.mu());
        let eta = 2.0 / (total * objective.mu());
        let (n, m, mp) = split_counts(lambda, tau, total.round() as usize);
        Self::custom(
            TheoryCase::A,
            objective,
            oracle,
            (lambda, tau),
            (n, m, mp),
            eta,
            delta0,
            seed,
            replications,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) || !(0.0..=1.0).contains(&self.tau) {
            return Err(config("lambda and tau must lie in [0, 1]"));
        }
        if !(self.delta0 > 0.0) {
            return Err(config("initial gap must be positive"));
        }
        if self.replications == 0 {
            return Err(config("need at least one replication"));
        }
        let bound = 1.0 / self.objective.l_smooth();
        if !(self.eta > 0.0) || self.eta > bound * (1.0 + 1e-12) {
            return Err(config(format!(
                "step size {} must lie in (0, 1/L = {bound}]",
                self.eta
            )));
        }
        Ok(())
    }
}

fn split_counts(lambda: f64, tau: f64, total: usize) -> (usize, usize, usize) {
    let n = ((lambda * total as f64).round() as usize).min(total);
    let m = (((1.0 - lambda) * tau * total as f64).round() as usize).min(total - n);
    (n, m, total - n - m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SgdOutcome {
    /// Gap before each step and after the last, averaged over replications.
    pub mean_gap: Vec<f64>,
    pub final_gaps: Vec<f64>,
    pub divergent: Vec<bool>,
}

impl SgdOutcome {
    pub fn final_mean_gap(&self) -> f64 {
        *self
            .mean_gap
            .last()
            .expect("trajectory includes the start point")
    }

    pub fn any_divergent(&self) -> bool {
        self.divergent.iter().any(|&d| d)
    }
}

/// Iterates and step gradients of one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `∇L(θ_t)` for `t = 0..=T`.
    pub full_grads: Vec<Vec<f64>>,
    /// The stochastic gradient used at step `t`, `t = 0..T`.
    pub step_grads: Vec<Vec<f64>>,
    pub gaps: Vec<f64>,
}

fn run_one(scn: &TheoryScenario, rep: usize, record: bool) -> (Vec<f64>, bool, Option<Trajectory>) {
    let mut rng = rng_from(derive_seed(scn.seed, &[REP_TAG, rep as u64]));
    let obj = &scn.objective;
    let mut theta = scn.theta0.clone();
    let mut gaps = Vec::with_capacity(scn.steps + 1);
    let mut traj = record.then(|| Trajectory {
        full_grads: Vec::with_capacity(scn.steps + 1),
        step_grads: Vec::with_capacity(scn.steps),
        gaps: Vec::new(),
    });
    let mut divergent = false;
    for t in 0..=scn.steps {
        let grad = obj.grad(&theta);
        let gap = obj.gap(&theta);
        gaps.push(gap);
        if !(gap <= DIVERGENCE_GAP) {
            divergent = true;
            gaps.resize(scn.steps + 1, f64::INFINITY);
            break;
        }
        if t == scn.steps {
            if let Some(tr) = traj.as_mut() {
                tr.full_grads.push(grad);
            }
            break;
        }
        let g = mixed_gradient_with(&scn.oracle, &grad, scn.lambda, scn.tau, &mut rng);
        theta
            .iter_mut()
            .zip(&g)
            .for_each(|(th, gi)| *th -= scn.eta * gi);
        if let Some(tr) = traj.as_mut() {
            tr.full_grads.push(grad);
            tr.step_grads.push(g);
        }
    }
    if let Some(tr) = traj.as_mut() {
        tr.gaps = gaps.clone();
    }
    (gaps, divergent, traj)
}

/// Runs every replication (in parallel, results combined in replication
/// order) and averages the gap trajectories.
pub fn run_sgd_mixture(scn: &TheoryScenario) -> Result<SgdOutcome> {
    scn.validate()?;
    let runs: Vec<(Vec<f64>, bool)> = (0..scn.replications)
        .into_par_iter()
        .map(|r| {
            let (g, d, _) = run_one(scn, r, false);
            (g, d)
        })
        .collect();
    let mut mean_gap = vec![0.0; scn.steps + 1];
    for (g, _) in &runs {
        mean_gap.iter_mut().zip(g).for_each(|(m, x)| *m += x);
    }
    let r = scn.replications as f64;
    mean_gap.iter_mut().for_each(|m| *m /= r);
    Ok(SgdOutcome {
        mean_gap,
        final_gaps: runs.iter().map(|(g, _)| *g.last().unwrap()).collect(),
        divergent: runs.iter().map(|(_, d)| *d).collect(),
    })
}

/// Replays replication `rep` and keeps every gradient.
pub fn record_trajectory(scn: &TheoryScenario, rep: usize) -> Result<Trajectory> {
    scn.validate()?;
    Ok(run_one(scn, rep, true).2.expect("recording requested"))
}
