use serde::{Deserialize, Serialize};

use super::scenario::{sample_scenario, Scenario, ScenarioConfig};
use crate::allocator::{
    raca_baselines, sweep_eta, BaselineResult, QosConstraints, SinrProfile, SweepResult,
};
use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::estimator::{
    run_sensing, run_sensing_from, EstimatorConfig, InitSpec, IterationRecord, StopReason, UEState,
};
use crate::geometry::{sinr_com, sinr_rad, ArrayConfig, BeamGains, SubcarrierGrid};
use crate::rng::{stream, stream_rng};
use crate::waveform::{synthesize_echo, TxWaveform};

/// Array, numerology and waveform derived once from a scenario config.
#[derive(Debug, Clone)]
pub struct Setup {
    pub array: ArrayConfig,
    pub grid: SubcarrierGrid,
    pub waveform: TxWaveform,
}

impl Setup {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let array = cfg.array()?;
        let grid = cfg.grid()?;
        let waveform = cfg.waveform()?;
        Ok(Setup {
            array,
            grid,
            waveform,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Scenario,
    Estimation,
    Allocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub state: UEState,
    pub aoa_rad: f64,
    pub iterations: usize,
    pub residual: f64,
    pub stop: StopReason,
    pub init: UEState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: u64,
    pub seed: u64,
    pub scenario: Option<Scenario>,
    pub estimate: Option<EstimateSummary>,
    /// Initial point and every iteration, kept only when requested.
    pub trace: Option<Vec<IterationRecord>>,
    pub pos_err_m: Option<f64>,
    pub aoa_err_rad: Option<f64>,
    pub profile: Option<SinrProfile>,
    pub sweep: Option<SweepResult>,
    pub baselines: Option<[BaselineResult; 3]>,
    pub failure: Option<TrialFailure>,
}

impl TrialResult {
    fn empty(trial: u64, seed: u64) -> Self {
        TrialResult {
            trial,
            seed,
            scenario: None,
            estimate: None,
            trace: None,
            pos_err_m: None,
            aoa_err_rad: None,
            profile: None,
            sweep: None,
            baselines: None,
            failure: None,
        }
    }

    pub fn jspa_power(&self) -> Option<f64> {
        self.sweep.as_ref().map(|s| s.best.allocation.total_w)
    }

    pub fn jspa_feasible(&self) -> bool {
        self.sweep.is_some()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrialOptions {
    /// Start Gauss-Newton here instead of using the configured initialisation.
    pub start: Option<UEState>,
    /// Synthesise the echo without noise.
    pub noiseless: bool,
    pub keep_trace: bool,
}

/// Downlink and sensing SINR per carrier as seen from an assumed UE state.
pub fn sinr_profile(
    cfg: &ScenarioConfig,
    setup: &Setup,
    scenario: &Scenario,
    state: &UEState,
) -> Result<SinrProfile> {
    let paths = scenario.paths_at(cfg, &setup.array, state)?;
    let comm = scenario.comm_at(cfg, &setup.array, state)?;
    let mut leak = paths.clone();
    // Leakage scales the unnormalised reflection amplitudes, so the sensing
    // calibration does not leak into the downlink budget.
    let coupling = cfg.interference_coupling.sqrt() / cfg.echo_gain;
    for p in leak.paths.iter_mut() {
        p.fading *= coupling;
    }
    let gains = BeamGains {
        radar: cfg.beam_gain_rad,
        comm: cfg.beam_gain_com,
    };
    let mut com = Vec::with_capacity(cfg.n_total);
    let mut rad = Vec::with_capacity(cfg.n_total);
    for n in 1..=cfg.n_total {
        rad.push(sinr_rad(
            &setup.array,
            &setup.grid,
            &paths,
            n,
            gains.radar,
            cfg.noise_var_rad,
        ));
        com.push(sinr_com(
            &setup.array,
            &setup.grid,
            comm.large_scale_fading,
            &leak,
            n,
            gains,
            cfg.noise_var_com,
        ));
    }
    SinrProfile::new(com, rad)
}

fn estimator_for(cfg: &SimConfig) -> EstimatorConfig {
    let mut est = cfg.estimator.clone();
    if let InitSpec::Grid(g) = &mut est.init {
        g.radius = cfg.scenario.radius_m;
        g.min_distance = g.min_distance.max(cfg.scenario.min_distance_m);
    }
    est
}

/// Sense, then allocate, for one scenario. Failures are recorded, not raised.
pub fn run_trial(
    trial: u64,
    seed: u64,
    scenario: Scenario,
    cfg: &SimConfig,
    setup: &Setup,
    opts: &TrialOptions,
) -> TrialResult {
    let mut out = TrialResult::empty(trial, seed);
    let sc = &cfg.scenario;
    let noise = if opts.noiseless {
        0.0
    } else {
        sc.noise_var_rad
    };
    let mut noise_rng = stream_rng(seed, stream::NOISE);
    let echo = match synthesize_echo(
        &scenario.ue.position,
        scenario.ue.velocity,
        &scenario.paths,
        &setup.grid,
        &setup.array,
        &setup.waveform,
        noise,
        &mut noise_rng,
    ) {
        Ok(e) => e,
        Err(e) => return fail(out, Stage::Scenario, e),
    };

    let est_cfg = estimator_for(cfg);
    let trace = match &opts.start {
        Some(start) => run_sensing_from(
            &echo,
            start.clone(),
            &est_cfg,
            &setup.grid,
            &setup.array,
            &setup.waveform,
        ),
        None => run_sensing(&echo, &est_cfg, &setup.grid, &setup.array, &setup.waveform),
    };
    let trace = match trace {
        Ok(t) => t,
        Err(e) => {
            out.scenario = Some(scenario);
            return fail(out, Stage::Estimation, e);
        }
    };
    let est = trace.state.clone();
    out.pos_err_m = Some((est.position - scenario.ue.position).norm());
    out.aoa_err_rad = Some((trace.aoa - scenario.paths.departure_angle).abs());
    out.estimate = Some(EstimateSummary {
        state: est.clone(),
        aoa_rad: trace.aoa,
        iterations: trace.iterations.len(),
        residual: trace.residual_norm(),
        stop: trace.stop,
        init: trace.initial.state.clone(),
    });
    if opts.keep_trace {
        out.trace = Some(
            std::iter::once(trace.initial)
                .chain(trace.iterations)
                .collect(),
        );
    }

    let profile = match sinr_profile(sc, setup, &scenario, &est) {
        Ok(p) => p,
        Err(e) => {
            out.scenario = Some(scenario);
            return fail(out, Stage::Allocation, e);
        }
    };
    let sweep = sweep_eta(&profile, &cfg.allocator);
    let eta = sweep.as_ref().map(|s| s.best_eta).unwrap_or(1.0);
    let mut base_rng = stream_rng(seed, stream::BASELINE);
    out.baselines = Some(raca_baselines(&profile, eta, &cfg.allocator, &mut base_rng));
    out.profile = Some(profile);
    out.scenario = Some(scenario);
    match sweep {
        Ok(s) => out.sweep = Some(s),
        Err(e) => return fail(out, Stage::Allocation, e),
    }
    out
}

fn fail(mut out: TrialResult, stage: Stage, e: Error) -> TrialResult {
    log::debug!("trial {} failed at {stage:?}: {e}", out.trial);
    out.failure = Some(TrialFailure {
        stage,
        message: e.to_string(),
    });
    out
}

/// Samples the scenario for `trial` from its own seed and runs it.
pub fn run_seeded_trial(
    trial: u64,
    seed: u64,
    cfg: &SimConfig,
    setup: &Setup,
    opts: &TrialOptions,
) -> TrialResult {
    let mut rng = stream_rng(seed, stream::SCENARIO);
    match sample_scenario(&cfg.scenario, &mut rng) {
        Ok(s) => run_trial(trial, seed, s, cfg, setup, opts),
        Err(e) => fail(TrialResult::empty(trial, seed), Stage::Scenario, e),
    }
}

/// Allocation-only convenience: floors and weight grid applied to a profile.
pub fn allocate_profile(profile: &SinrProfile, qos: &QosConstraints) -> Result<SweepResult> {
    sweep_eta(profile, qos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::trial_seed;

    #[test]
    fn noiseless_trial_from_truth() {
        let cfg = SimConfig::default();
        let setup = Setup::new(&cfg.scenario).unwrap();
        for t in 0..3 {
            let seed = trial_seed(7, t);
            let mut rng = stream_rng(seed, stream::SCENARIO);
            let sc = sample_scenario(&cfg.scenario, &mut rng).unwrap();
            let opts = TrialOptions {
                start: Some(sc.ue.clone()),
                noiseless: true,
                keep_trace: false,
            };
            let r = run_trial(t, seed, sc, &cfg, &setup, &opts);
            assert!(r.pos_err_m.unwrap() <= 1e-3, "{:?}", r.pos_err_m);
        }
    }

    #[test]
    fn trial_is_deterministic() {
        let cfg = SimConfig::default();
        let setup = Setup::new(&cfg.scenario).unwrap();
        let a = run_seeded_trial(0, 99, &cfg, &setup, &TrialOptions::default());
        let b = run_seeded_trial(0, 99, &cfg, &setup, &TrialOptions::default());
        assert_eq!(a, b);
    }
}
