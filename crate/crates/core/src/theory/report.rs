//! The full theory study: rates for the low-noise regimes, the unfriendly
//! stall, oracle conformance and every proof-step check, collected into one
//! serializable report.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::checks::{
    check_descent_step, check_drift_bound, check_lsm_bound, check_mixture_variance_bound,
    check_oracle_conformance, lsm_selection_event, ConformanceReport, DriftReport,
    InequalityReport, LsmReport,
};
use super::oracle::{OracleKind, OracleSpec};
use super::quadratic::QuadraticObjective;
use super::rate::fit_rate;
use super::sgd::{
    low_noise_bound, record_trajectory, run_sgd_mixture, SgdOutcome, TheoryCase, TheoryScenario,
};
use crate::error::{config, Result};
use crate::rng::{derive_seed, rng_from};

const OBJ_TAG: u64 = 1;
const RATE_TAG: u64 = 2;
const STALL_TAG: u64 = 3;
const CHECK_TAG: u64 = 4;
const DRIFT_TAG: u64 = 5;
const LSM_TAG: u64 = 6;
const CONF_TAG: u64 = 7;
const ORDER_TAG: u64 = 8;
const SCENARIO_TAG: u64 = 9;

pub const SLOPE_RANGE: (f64, f64) = (-1.3, -0.7);
pub const BOUND_SLACK: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryConfig {
    pub dim: usize,
    pub mu: f64,
    pub l_smooth: f64,
    pub oracle: OracleSpec,
    pub delta0: f64,
    pub grid: Vec<usize>,
    pub replications: usize,
    /// Labeled share of the budget in the labeled-plus-friendly regime.
    pub friendly_lambda: f64,
    pub stall_lambda: f64,
    pub stall_tau: f64,
    pub stall_budget: usize,
    pub stall_replications: usize,
    pub ordering_n: usize,
    pub check_points: usize,
    pub check_draws: usize,
    pub drift_steps: usize,
    pub drift_window: usize,
    pub lsm_events: usize,
    pub lsm_instances: usize,
    pub conformance_specs: Vec<OracleSpec>,
    pub conformance_draws: usize,
    /// Run the rate, stall and inequality studies.
    pub run_studies: bool,
    /// Extra single scenarios reported on their own.
    pub scenarios: Vec<ScenarioSpec>,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dim: 20,
            mu: 0.5,
            l_smooth: 5.0,
            oracle: OracleSpec::default(),
            delta0: 1.0,
            grid: vec![100, 1_000, 10_000, 100_000],
            replications: 20,
            friendly_lambda: 0.5,
            stall_lambda: 1.0 / 3.0,
            stall_tau: 0.5,
            stall_budget: 1_000,
            stall_replications: 50,
            ordering_n: 1_000,
            check_points: 20,
            check_draws: 100_000,
            drift_steps: 1_000,
            drift_window: 10,
            lsm_events: 20,
            lsm_instances: 40,
            conformance_specs: vec![
                OracleSpec::default(),
                OracleSpec {
                    sigma2: 0.25,
                    epsilon: 0.2,
                    nu: 1e2,
                },
            ],
            conformance_draws: 100_000,
            run_studies: true,
            scenarios: Vec::new(),
            seed: 0,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        for s in &self.conformance_specs {
            s.validate()?;
        }
        if self.run_studies && self.grid.len() < 4 {
            return Err(config("rate grid needs at least four sizes"));
        }
        if self.replications == 0 || self.stall_replications == 0 {
            return Err(config("replication counts must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.friendly_lambda) || self.friendly_lambda == 0.0 {
            return Err(config("friendly_lambda must lie in (0, 1)"));
        }
        QuadraticObjective::new(self.dim, self.mu, self.l_smooth, 0)?;
        for s in &self.scenarios {
            s.validate()?;
        }
        Ok(())
    }

    pub fn objective(&self) -> Result<QuadraticObjective> {
        QuadraticObjective::new(
            self.dim,
            self.mu,
            self.l_smooth,
            derive_seed(self.seed, &[OBJ_TAG]),
        )
    }
}

/// One CSV row: the final gap of one replication.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub case: &'static str,
    pub n: usize,
    pub m: usize,
    pub m_prime: usize,
    pub lambda: f64,
    pub tau: f64,
    pub eta: f64,
    pub replication: usize,
    pub final_gap: f64,
}

fn rows_of(scn: &TheoryScenario, out: &SgdOutcome) -> Vec<GapRow> {
    out.final_gaps
        .iter()
        .enumerate()
        .map(|(r, &g)| GapRow {
            case: scn.case.as_str(),
            n: scn.n,
            m: scn.m,
            m_prime: scn.m_prime,
            lambda: scn.lambda,
            tau: scn.tau,
            eta: scn.eta,
            replication: r,
            final_gap: g,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub total: usize,
    pub mean_final_gap: f64,
    pub bound: f64,
    pub within_bound: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateStudy {
    pub case: &'static str,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub slope_ok: bool,
    pub bounds_ok: bool,
    #[serde(skip)]
    pub rows: Vec<GapRow>,
}

/// Final gap against the sample budget for regime (b) or (c).
pub fn rate_study(cfg: &TheoryConfig, case: TheoryCase) -> Result<RateStudy> {
    let obj = cfg.objective()?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for (i, &total) in cfg.grid.iter().enumerate() {
        let seed = derive_seed(cfg.seed, &[RATE_TAG, case as u64, i as u64]);
        let scn = match case {
            TheoryCase::B => TheoryScenario::labeled_only(
                &obj,
                cfg.oracle,
                total,
                cfg.delta0,
                seed,
                cfg.replications,
            )?,
            TheoryCase::C => {
                let n = (cfg.friendly_lambda * total as f64).round() as usize;
                TheoryScenario::labeled_friendly(
                    &obj,
                    cfg.oracle,
                    n,
                    total - n,
                    cfg.delta0,
                    seed,
                    cfg.replications,
                )?
            }
            TheoryCase::A => return Err(config("rate study covers the low-noise regimes only")),
        };
        let out = run_sgd_mixture(&scn)?;
        let gap = out.final_mean_gap();
        let bound = low_noise_bound(
            total as f64,
            cfg.mu,
            cfg.l_smooth,
            cfg.oracle.sigma2,
            cfg.delta0,
        );
        points.push(RatePoint {
            total,
            mean_final_gap: gap,
            bound,
            within_bound: gap <= BOUND_SLACK * bound,
        });
        rows.extend(rows_of(&scn, &out));
    }
    let ns: Vec<f64> = points.iter().map(|p| p.total as f64).collect();
    let gaps: Vec<f64> = points.iter().map(|p| p.mean_final_gap).collect();
    let slope = fit_rate(&ns, &gaps)?;
    Ok(RateStudy {
        case: case.as_str(),
        slope_ok: (SLOPE_RANGE.0..=SLOPE_RANGE.1).contains(&slope),
        bounds_ok: points.iter().all(|p| p.within_bound),
        points,
        slope,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StallStudy {
    pub budget: usize,
    pub all_data_gap: f64,
    pub friendly_gap: f64,
    pub all_data_divergent: bool,
    pub holds: bool,
    #[serde(skip)]
    pub rows: Vec<GapRow>,
}

/// Regime (a) against regime (c) on the same step budget.
pub fn stall_study(cfg: &TheoryConfig) -> Result<StallStudy> {
    let obj = cfg.objective()?;
    let seed = derive_seed(cfg.seed, &[STALL_TAG]);
    let a = TheoryScenario::all_data(
        &obj,
        cfg.oracle,
        cfg.stall_lambda,
        cfg.stall_tau,
        cfg.stall_budget,
        cfg.delta0,
        seed,
        cfg.stall_replications,
    )?;
    let n_c = (cfg.friendly_lambda * cfg.stall_budget as f64).round() as usize;
    let c = TheoryScenario::labeled_friendly(
        &obj,
        cfg.oracle,
        n_c,
        cfg.stall_budget - n_c,
        cfg.delta0,
        derive_seed(seed, &[1]),
        cfg.stall_replications,
    )?;
    let oa = run_sgd_mixture(&a)?;
    let oc = run_sgd_mixture(&c)?;
    let (ga, gc) = (oa.final_mean_gap(), oc.final_mean_gap());
    let mut rows = rows_of(&a, &oa);
    rows.extend(rows_of(&c, &oc));
    Ok(StallStudy {
        budget: cfg.stall_budget,
        all_data_gap: ga,
        friendly_gap: gc,
        all_data_divergent: oa.any_divergent(),
        holds: ga >= 0.2 * cfg.delta0 && gc <= 0.01 * cfg.delta0,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingStudy {
    pub n: usize,
    pub wins: usize,
    pub replications: usize,
    pub holds: bool,
}

/// Adding `n` friendly samples to `n` labeled ones: per replication, the
/// final gap with friendly data should not exceed the labeled-only gap.
pub fn ordering_study(cfg: &TheoryConfig) -> Result<OrderingStudy> {
    let obj = cfg.objective()?;
    let n = cfg.ordering_n;
    let seed = derive_seed(cfg.seed, &[ORDER_TAG]);
    let b = run_sgd_mixture(&TheoryScenario::labeled_only(
        &obj,
        cfg.oracle,
        n,
        cfg.delta0,
        seed,
        cfg.replications,
    )?)?;
    let c = run_sgd_mixture(&TheoryScenario::labeled_friendly(
        &obj,
        cfg.oracle,
        n,
        n,
        cfg.delta0,
        derive_seed(seed, &[1]),
        cfg.replications,
    )?)?;
    let wins = b
        .final_gaps
        .iter()
        .zip(&c.final_gaps)
        .filter(|(b, c)| c <= b)
        .count();
    Ok(OrderingStudy {
        n,
        wins,
        replications: cfg.replications,
        holds: wins * 10 >= cfg.replications * 9,
    })
}

/// Unbiasedness and variance of each oracle kind for every configured spec.
pub fn conformance_study(cfg: &TheoryConfig) -> Result<Vec<ConformanceReport>> {
    let obj = cfg.objective()?;
    let theta = obj.start_with_gap(cfg.delta0, derive_seed(cfg.seed, &[CONF_TAG]));
    let mut out = Vec::new();
    for (i, spec) in cfg.conformance_specs.iter().enumerate() {
        for (j, kind) in [OracleKind::Id, OracleKind::Friendly, OracleKind::Unfriendly]
            .into_iter()
            .enumerate()
        {
            let seed = derive_seed(cfg.seed, &[CONF_TAG, i as u64, j as u64]);
            out.push(check_oracle_conformance(
                kind,
                &obj,
                spec,
                &theta,
                cfg.conformance_draws,
                seed,
            )?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProofStepStudy {
    pub descent: Vec<InequalityReport>,
    pub variance: Vec<InequalityReport>,
    pub holds: bool,
}

/// Descent and mixture-variance inequalities at random points with random
/// mixture weights and `η ≤ 1/L`. The last point uses `η = 1/L` exactly.
pub fn proof_step_study(cfg: &TheoryConfig) -> Result<ProofStepStudy> {
    let obj = cfg.objective()?;
    let mut rng = rng_from(derive_seed(cfg.seed, &[CHECK_TAG]));
    let mut descent = Vec::new();
    let mut variance = Vec::new();
    for p in 0..cfg.check_points {
        let gap = 10f64.powf(rng.random_range(-1.0..1.0));
        let theta = obj.start_with_gap(gap, rng.random());
        let eta = if p + 1 == cfg.check_points {
            1.0 / cfg.l_smooth
        } else {
            rng.random_range(0.01..=1.0) / cfg.l_smooth
        };
        let weights = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let s1 = derive_seed(cfg.seed, &[CHECK_TAG, p as u64, 0]);
        let s2 = derive_seed(cfg.seed, &[CHECK_TAG, p as u64, 1]);
        descent.push(check_descent_step(
            &obj,
            &cfg.oracle,
            &theta,
            eta,
            weights,
            cfg.check_draws,
            s1,
        )?);
        variance.push(check_mixture_variance_bound(
            &obj,
            &cfg.oracle,
            &theta,
            weights,
            cfg.check_draws,
            s2,
        )?);
    }
    let holds = descent.iter().chain(&variance).all(|r| r.holds);
    Ok(ProofStepStudy {
        descent,
        variance,
        holds,
    })
}

/// Drift bound along a recorded labeled-plus-friendly run.
pub fn drift_study(cfg: &TheoryConfig) -> Result<DriftReport> {
    let obj = cfg.objective()?;
    let n = (cfg.friendly_lambda * cfg.drift_steps as f64).round() as usize;
    let scn = TheoryScenario::labeled_friendly(
        &obj,
        cfg.oracle,
        n,
        cfg.drift_steps - n,
        cfg.delta0,
        derive_seed(cfg.seed, &[DRIFT_TAG]),
        1,
    )?;
    let traj = record_trajectory(&scn, 0)?;
    Ok(check_drift_bound(
        &traj,
        scn.eta,
        obj.l_smooth(),
        cfg.drift_window,
    ))
}

/// Loss bound for instances kept by the gradient-deviation rule across
/// random selection events.
pub fn lsm_study(cfg: &TheoryConfig) -> Result<Vec<LsmReport>> {
    (0..cfg.lsm_events)
        .map(|e| {
            let (inst, theta, rho, g_bar) = lsm_selection_event(
                cfg.dim,
                cfg.lsm_instances,
                cfg.mu,
                derive_seed(cfg.seed, &[LSM_TAG, e as u64]),
            )?;
            check_lsm_bound(&inst, &theta, rho, &g_bar, cfg.mu)
        })
        .collect()
}

/// A single scenario in a theory config. Case (a) derives `λ = n/N` and
/// `τ = m/(m + m′)` from the counts; case (c) uses `τ = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub case: TheoryCase,
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub m_prime: usize,
    /// Overrides the step-size rule of the case.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Use `H = L·I` with the optimum at the origin.
    #[serde(default)]
    pub isotropic: bool,
    #[serde(default)]
    pub oracle: Option<OracleSpec>,
    #[serde(default = "one")]
    pub replications: usize,
}

fn one() -> usize {
    1
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let total = self.n + self.m + self.m_prime;
        if total == 0 {
            return Err(config(format!("scenario {:?} has no samples", self.name)));
        }
        match self.case {
            TheoryCase::B if self.m + self.m_prime > 0 => {
                return Err(config(format!(
                    "scenario {:?}: case b uses labeled samples only",
                    self.name
                )))
            }
            TheoryCase::C if self.m_prime > 0 => {
                return Err(config(format!(
                    "scenario {:?}: case c has no unfriendly samples",
                    self.name
                )))
            }
            TheoryCase::A if self.m + self.m_prime == 0 => {
                return Err(config(format!(
                    "scenario {:?}: case a needs unlabeled samples",
                    self.name
                )))
            }
            _ => {}
        }
        if self.replications == 0 {
            return Err(config(format!(
                "scenario {:?} needs at least one replication",
                self.name
            )));
        }
        Ok(())
    }

    pub fn build(&self, cfg: &TheoryConfig, seed: u64) -> Result<TheoryScenario> {
        let obj = if self.isotropic {
            QuadraticObjective::isotropic(cfg.dim, cfg.l_smooth)
        } else {
            cfg.objective()?
        };
        let oracle = self.oracle.unwrap_or(cfg.oracle);
        let total = (self.n + self.m + self.m_prime) as f64;
        let (lambda, tau) = match self.case {
            TheoryCase::B => (1.0, 1.0),
            TheoryCase::C => (self.n as f64 / total, 1.0),
            TheoryCase::A => (
                self.n as f64 / total,
                self.m as f64 / (self.m + self.m_prime) as f64,
            ),
        };
        let eta = match (self.eta, self.case) {
            (Some(e), _) => e,
            (None, TheoryCase::A) => super::sgd::eta_all_data(lambda, tau, &oracle, obj.l_smooth()),
            (None, _) => super::sgd::eta_low_noise(
                total,
                obj.mu(),
                obj.l_smooth(),
                oracle.sigma2,
                cfg.delta0,
            ),
        };
        TheoryScenario::custom(
            self.case,
            &obj,
            oracle,
            (lambda, tau),
            (self.n, self.m, self.m_prime),
            eta,
            cfg.delta0,
            seed,
            self.replications,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub case: &'static str,
    pub eta: f64,
    pub initial_gap: f64,
    pub gap_after_first_step: f64,
    pub mean_final_gap: f64,
    pub divergent_replications: usize,
    #[serde(skip)]
    pub rows: Vec<GapRow>,
}

pub fn run_scenario(
    cfg: &TheoryConfig,
    spec: &ScenarioSpec,
    index: usize,
) -> Result<ScenarioReport> {
    let scn = spec.build(cfg, derive_seed(cfg.seed, &[SCENARIO_TAG, index as u64]))?;
    let out = run_sgd_mixture(&scn)?;
    Ok(ScenarioReport {
        name: spec.name.clone(),
        case: scn.case.as_str(),
        eta: scn.eta,
        initial_gap: out.mean_gap[0],
        gap_after_first_step: out.mean_gap.get(1).copied().unwrap_or(out.mean_gap[0]),
        mean_final_gap: out.final_mean_gap(),
        divergent_replications: out.divergent.iter().filter(|&&d| d).count(),
        rows: rows_of(&scn, &out),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyReport {
    pub labeled_only: RateStudy,
    pub labeled_friendly: RateStudy,
    pub stall: StallStudy,
    pub ordering: OrderingStudy,
    pub conformance: Vec<ConformanceReport>,
    pub proof_steps: ProofStepStudy,
    pub drift: DriftReport,
    pub lsm: Vec<LsmReport>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryReport {
    pub studies: Option<StudyReport>,
    pub scenarios: Vec<ScenarioReport>,
    /// All studies pass and no scenario diverged.
    pub passed: bool,
}

impl TheoryReport {
    pub fn rows(&self) -> impl Iterator<Item = &GapRow> {
        let studies = self.studies.iter().flat_map(|s| {
            s.labeled_only
                .rows
                .iter()
                .chain(&s.labeled_friendly.rows)
                .chain(&s.stall.rows)
        });
        studies.chain(self.scenarios.iter().flat_map(|s| &s.rows))
    }

    /// `case,n,m,m_prime,lambda,tau,eta,replication,final_gap`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn run_theory(cfg: &TheoryConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let studies = if cfg.run_studies {
        Some(run_studies(cfg)?)
    } else {
        None
    };
    let scenarios = cfg
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, s)| run_scenario(cfg, s, i))
        .collect::<Result<Vec<_>>>()?;
    let passed = studies.as_ref().is_none_or(|s| s.passed)
        && scenarios.iter().all(|s| s.divergent_replications == 0);
    Ok(TheoryReport {
        studies,
        scenarios,
        passed,
    })
}

pub fn run_studies(cfg: &TheoryConfig) -> Result<StudyReport> {
    let labeled_only = rate_study(cfg, TheoryCase::B)?;
    let labeled_friendly = rate_study(cfg, TheoryCase::C)?;
    let stall = stall_study(cfg)?;
    let ordering = ordering_study(cfg)?;
    let conformance = conformance_study(cfg)?;
    let proof_steps = proof_step_study(cfg)?;
    let drift = drift_study(cfg)?;
    let lsm = lsm_study(cfg)?;
    let passed = labeled_only.slope_ok
        && labeled_only.bounds_ok
        && labeled_friendly.slope_ok
        && stall.holds
        && ordering.holds
        && conformance.iter().all(|c| c.holds)
        && proof_steps.holds
        && drift.holds
        && lsm.iter().all(|l| l.holds);
    Ok(StudyReport {
        labeled_only,
        labeled_friendly,
        stall,
        ordering,
        conformance,
        proof_steps,
        drift,
        lsm,
        passed,
    })
}
