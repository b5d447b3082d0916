//! Scenario sampling, end-to-end trials, Monte Carlo aggregation and result files.

mod cdf;
mod export;
mod montecarlo;
mod scenario;
mod trial;

pub use cdf::{default_error_grid, error_cdf, error_cdf_on, CdfTable, EmpiricalCdf};
pub use export::{
    allocation_rows, export_results, read_rows, write_allocation, write_cdf, write_json,
    write_rows, write_sweep, write_trials, AllocationRow, ArmSummary, Calibration, ExportedFiles,
    Summary, TrialRow, ALLOCATION_CSV, ALLOCATION_HEADERS, CDF_CSV, SUMMARY_JSON, SWEEP_CSV,
    SWEEP_HEADERS, TRIALS_CSV, TRIAL_HEADERS,
};
pub use montecarlo::{
    aggregate, jspa_dominates, position_errors, run_arm, run_montecarlo, AggregateMetrics,
    ArmResult, MethodPowers, MonteCarloRun, ERROR_THRESHOLD_M,
};
pub use scenario::{
    paths_for, sample_scenario, Scenario, ScenarioConfig, DEFAULT_ECHO_GAIN,
    DEFAULT_INTERFERENCE_COUPLING, DEFAULT_RADAR_BEAM_GAIN,
};
pub use trial::{
    allocate_profile, run_seeded_trial, run_trial, sinr_profile, EstimateSummary, Setup, Stage,
    TrialFailure, TrialOptions, TrialResult,
};
