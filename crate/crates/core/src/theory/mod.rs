//! Numerical harness for the convergence analysis of SGD with mixed
//! labeled, friendly and unfriendly gradient oracles on PL quadratics.

pub mod checks;
pub mod oracle;
pub mod quadratic;
pub mod rate;
pub mod report;
pub mod sgd;

pub use checks::{
    check_descent_step, check_drift_bound, check_lsm_bound, check_mixture_variance_bound,
    check_oracle_conformance, lsm_selection_event, ConformanceReport, DriftReport,
    InequalityReport, LsmReport,
};
pub use oracle::{mixed_gradient, sample_oracle, OracleKind, OracleSpec};
pub use quadratic::QuadraticObjective;
pub use rate::fit_rate;
pub use report::{
    run_scenario, run_studies, run_theory, ScenarioReport, ScenarioSpec, StudyReport, TheoryConfig,
    TheoryReport,
};
pub use sgd::{
    eta_all_data, eta_low_noise, low_noise_bound, record_trajectory, run_sgd_mixture,
    special_case_total, SgdOutcome, TheoryCase, TheoryScenario, Trajectory,
};
