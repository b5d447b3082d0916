use serde::{Deserialize, Serialize};

use super::cdf::{error_cdf, CdfTable, EmpiricalCdf};
use super::trial::{run_seeded_trial, Setup, Stage, TrialOptions, TrialResult};
use crate::allocator::Baseline;
use crate::config::SimConfig;
use crate::error::Result;
use crate::exec::Execution;
use crate::rng::trial_seed;

/// Position-error threshold reported as a headline fraction.
pub const ERROR_THRESHOLD_M: f64 = 0.2;

/// Slack when comparing JSPA power against a baseline.
const DOMINANCE_SLACK_W: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodPowers {
    pub jspa: f64,
    pub raca1: f64,
    pub raca2: f64,
    pub raca3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub trials: usize,
    pub scenario_failures: usize,
    pub estimation_failures: usize,
    /// Trials where no η on the grid met both floors.
    pub allocation_infeasible: usize,
    pub error_mean_m: Option<f64>,
    pub error_median_m: Option<f64>,
    pub error_p90_m: Option<f64>,
    pub fraction_within_threshold: Option<f64>,
    pub aoa_mean_deg: Option<f64>,
    pub aoa_std_deg: Option<f64>,
    pub aoa_err_mean_deg: Option<f64>,
    /// Mean total power over trials where JSPA is feasible.
    pub mean_power_w: Option<MethodPowers>,
    /// Share of JSPA-feasible trials where JSPA uses no more power than every baseline.
    pub jspa_dominance: Option<f64>,
    pub median_best_eta: Option<f64>,
    #[serde(skip)]
    pub cdf: Option<CdfTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub n_tx: usize,
    pub n_rx: usize,
    pub trials: Vec<TrialResult>,
    pub metrics: AggregateMetrics,
}

impl ArmResult {
    pub fn label(&self) -> String {
        format!("nt{}_nr{}", self.n_tx, self.n_rx)
    }

    pub fn errors(&self) -> Vec<f64> {
        position_errors(&self.trials)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloRun {
    pub config: SimConfig,
    pub primary: ArmResult,
    pub comparisons: Vec<ArmResult>,
}

pub fn position_errors(trials: &[TrialResult]) -> Vec<f64> {
    trials.iter().filter_map(|t| t.pos_err_m).collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn std_dev(xs: &[f64]) -> Option<f64> {
    let m = mean(xs)?;
    if xs.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    Some((ss / (xs.len() - 1) as f64).sqrt())
}

fn baseline_power(t: &TrialResult, which: Baseline) -> Option<f64> {
    t.baselines
        .as_ref()?
        .iter()
        .find(|b| b.baseline == which)
        .map(|b| b.result.allocation.total_w)
}

pub fn jspa_dominates(t: &TrialResult) -> Option<bool> {
    let jspa = t.jspa_power()?;
    let base = t.baselines.as_ref()?;
    Some(
        base.iter()
            .all(|b| !b.feasible || jspa <= b.result.allocation.total_w + DOMINANCE_SLACK_W),
    )
}

pub fn aggregate(trials: &[TrialResult]) -> Result<AggregateMetrics> {
    let count = |stage| {
        trials
            .iter()
            .filter(|t| t.failure.as_ref().is_some_and(|f| f.stage == stage))
            .count()
    };
    let errors = position_errors(trials);
    let cdf = if errors.is_empty() {
        None
    } else {
        Some(error_cdf(&errors)?)
    };
    let emp = if errors.is_empty() {
        None
    } else {
        Some(EmpiricalCdf::new(&errors)?)
    };

    let aoa: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.estimate.as_ref().map(|e| e.aoa_rad.to_degrees()))
        .collect();
    let aoa_err: Vec<f64> = trials
        .iter()
        .filter_map(|t| t.aoa_err_rad.map(f64::to_degrees))
        .collect();

    let feasible: Vec<&TrialResult> = trials.iter().filter(|t| t.jspa_feasible()).collect();
    let mean_power = if feasible.is_empty() {
        None
    } else {
        let avg = |f: &dyn Fn(&TrialResult) -> Option<f64>| {
            let v: Vec<f64> = feasible.iter().filter_map(|t| f(t)).collect();
            mean(&v).unwrap_or(f64::NAN)
        };
        Some(MethodPowers {
            jspa: avg(&|t| t.jspa_power()),
            raca1: avg(&|t| baseline_power(t, Baseline::Raca1)),
            raca2: avg(&|t| baseline_power(t, Baseline::Raca2)),
            raca3: avg(&|t| baseline_power(t, Baseline::Raca3)),
        })
    };
    let dominance = if feasible.is_empty() {
        None
    } else {
        let wins = feasible
            .iter()
            .filter(|t| jspa_dominates(t) == Some(true))
            .count();
        Some(wins as f64 / feasible.len() as f64)
    };
    let etas: Vec<f64> = feasible
        .iter()
        .filter_map(|t| t.sweep.as_ref().map(|s| s.best_eta))
        .collect();
    let median_eta = if etas.is_empty() {
        None
    } else {
        Some(EmpiricalCdf::new(&etas)?.quantile(0.5))
    };

    Ok(AggregateMetrics {
        trials: trials.len(),
        scenario_failures: count(Stage::Scenario),
        estimation_failures: count(Stage::Estimation),
        allocation_infeasible: trials
            .iter()
            .filter(|t| t.estimate.is_some() && !t.jspa_feasible())
            .count(),
        error_mean_m: mean(&errors),
        error_median_m: emp.as_ref().map(|c| c.quantile(0.5)),
        error_p90_m: emp.as_ref().map(|c| c.quantile(0.9)),
        fraction_within_threshold: emp.as_ref().map(|c| c.eval(ERROR_THRESHOLD_M)),
        aoa_mean_deg: mean(&aoa),
        aoa_std_deg: std_dev(&aoa),
        aoa_err_mean_deg: mean(&aoa_err),
        mean_power_w: mean_power,
        jspa_dominance: dominance,
        median_best_eta: median_eta,
        cdf,
    })
}

/// Runs `cfg.montecarlo.trials` seeded trials for one antenna configuration.
pub fn run_arm(cfg: &SimConfig, exec: Execution) -> Result<ArmResult> {
    cfg.validate()?;
    let setup = Setup::new(&cfg.scenario)?;
    let master = cfg.scenario.seed;
    let ids: Vec<u64> = (0..cfg.montecarlo.trials as u64).collect();
    let opts = TrialOptions::default();
    let trials = exec.map(&ids, |&t| {
        let r = run_seeded_trial(t, trial_seed(master, t), cfg, &setup, &opts);
        log::debug!("trial {t} done, error {:?}", r.pos_err_m);
        r
    });
    let metrics = aggregate(&trials)?;
    log::info!(
        "{}x{}: {} trials, {} estimation failures, median error {:?} m",
        cfg.scenario.n_tx,
        cfg.scenario.n_rx,
        metrics.trials,
        metrics.estimation_failures,
        metrics.error_median_m
    );
    Ok(ArmResult {
        n_tx: cfg.scenario.n_tx,
        n_rx: cfg.scenario.n_rx,
        trials,
        metrics,
    })
}

/// The configured arm plus one arm per `compare_antennas` entry, all on the
/// same trial seeds.
pub fn run_montecarlo(cfg: &SimConfig, exec: Execution) -> Result<MonteCarloRun> {
    let primary = run_arm(cfg, exec)?;
    let mut comparisons = Vec::new();
    for &[n_tx, n_rx] in &cfg.montecarlo.compare_antennas {
        if n_tx == cfg.scenario.n_tx && n_rx == cfg.scenario.n_rx {
            continue;
        }
        let mut alt = cfg.clone();
        alt.scenario.n_tx = n_tx;
        alt.scenario.n_rx = n_rx;
        comparisons.push(run_arm(&alt, exec)?);
    }
    Ok(MonteCarloRun {
        config: cfg.clone(),
        primary,
        comparisons,
    })
}
