use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use isac_core::allocator::{raca_baselines, sweep_eta, EtaRange, SinrProfile};
use isac_core::config::SimConfig;
use isac_core::estimator::UEState;
use isac_core::exec::Execution;
use isac_core::geometry::Point;
use isac_core::harness::{
    export_results, read_rows, run_montecarlo, run_trial, sample_scenario, sinr_profile,
    write_allocation, write_json, write_rows, write_sweep, write_trials, Setup, Stage,
    TrialOptions,
};
use isac_core::rng::{stream, stream_rng, trial_seed};
use isac_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "isac",
    version,
    about = "OFDM sensing, localisation and power allocation simulator"
)]
struct Cli {
    /// Repeat for more progress output on stderr.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sense one scenario and write the estimator trace.
    Sense(Common),
    /// Sweep the allocation weight and compare against the random baselines.
    Allocate {
        #[command(flatten)]
        common: Common,
        /// CSV with columns sinr_com,sinr_rad; sampled from the scenario when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Run the seeded Monte Carlo experiment and export every result file.
    Montecarlo(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML file overriding the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for result files, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads for trial fan-out.
    #[arg(long)]
    jobs: Option<usize>,
    /// Place the UE at X,Y metres.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    ue: Option<Point>,
    /// Radial velocity in m/s, used with or without --ue.
    #[arg(long, allow_hyphen_values = true)]
    velocity: Option<f64>,
    /// Allocation weight grid as MIN:MAX:STEP.
    #[arg(long, value_parser = parse_eta_range)]
    eta_range: Option<EtaRange>,
    /// Synthesise the echo without noise.
    #[arg(long)]
    noiseless: bool,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok(Point::new(p(x)?, p(y)?))
}

fn parse_eta_range(s: &str) -> Result<EtaRange, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [min, max, step] = parts.as_slice() else {
        return Err("expected MIN:MAX:STEP".into());
    };
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    let range = EtaRange {
        min: p(min)?,
        max: p(max)?,
        step: p(step)?,
    };
    range.validate().map_err(|e| e.to_string())?;
    Ok(range)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence { .. } | Error::Singular { .. } => 2,
        Error::Infeasible { .. } | Error::NoFeasibleEta { .. } => 3,
        _ => 1,
    }
}

/// Failure with a stage label and exit status.
struct Failure {
    stage: &'static str,
    code: u8,
    message: String,
}

impl Failure {
    fn from_error(stage: &'static str, e: Error) -> Self {
        Failure {
            stage,
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

fn load_config(c: &Common) -> Result<SimConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => SimConfig::from_path(p).map_err(|e| Failure::from_error("config", e))?,
        None => SimConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.scenario.seed = s;
    }
    if let Some(t) = c.trials {
        cfg.montecarlo.trials = t;
    }
    if let Some(r) = c.eta_range {
        cfg.allocator.eta = r;
    }
    cfg.validate()
        .map_err(|e| Failure::from_error("config", e))?;
    Ok(cfg)
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure>
where
    T: Send,
{
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Failure {
            stage: "config",
            code: 1,
            message: "--jobs must be at least 1".into(),
        }),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure {
                    stage: "config",
                    code: 1,
                    message: e.to_string(),
                })?;
            Ok(pool.install(f))
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => {
            log::warn!("built without the parallel feature; --jobs ignored");
            Ok(f())
        }
    }
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Failure::from_error(
            "output",
            Error::Io {
                path: dir.to_path_buf(),
                source,
            },
        )
    })
}

/// Scenario for trial 0 of the master seed, moved to `--ue`/`--velocity` when given.
fn scenario_for(
    cfg: &SimConfig,
    setup: &Setup,
    c: &Common,
) -> Result<(u64, isac_core::harness::Scenario), Failure> {
    let seed = trial_seed(cfg.scenario.seed, 0);
    let sc = sample_scenario(&cfg.scenario, &mut stream_rng(seed, stream::SCENARIO))
        .map_err(|e| Failure::from_error("scenario", e))?;
    if c.ue.is_none() && c.velocity.is_none() {
        return Ok((seed, sc));
    }
    let state = UEState::new(
        c.ue.map(|p| setup.array.bs_position + p)
            .unwrap_or(sc.ue.position),
        c.velocity.unwrap_or(sc.ue.velocity),
    );
    let moved = sc
        .relocated(&cfg.scenario, &setup.array, state)
        .map_err(|e| Failure::from_error("config", e))?;
    Ok((seed, moved))
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    x: f64,
    y: f64,
    v: f64,
    residual_norm: f64,
    step_norm: f64,
    step_scale: f64,
}

#[derive(Serialize)]
struct SenseReport<'a> {
    seed: u64,
    truth: &'a UEState,
    estimate: &'a UEState,
    pos_err_m: f64,
    aoa_deg: f64,
    aoa_err_deg: f64,
    iterations: usize,
    residual: f64,
    stop: isac_core::estimator::StopReason,
    noiseless: bool,
    config: &'a SimConfig,
}

fn cmd_sense(c: &Common) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    let setup = Setup::new(&cfg.scenario).map_err(|e| Failure::from_error("config", e))?;
    let (seed, sc) = scenario_for(&cfg, &setup, c)?;
    prepare_out(&c.out)?;
    let opts = TrialOptions {
        start: None,
        noiseless: c.noiseless,
        keep_trace: true,
    };
    let truth = sc.ue.clone();
    let result = with_jobs(c.jobs, || run_trial(0, seed, sc, &cfg, &setup, &opts))?;
    let io = |e| Failure::from_error("output", e);
    write_trials(&c.out.join("trials.csv"), std::slice::from_ref(&result)).map_err(io)?;
    if let Some(f) = result
        .failure
        .as_ref()
        .filter(|f| f.stage != Stage::Allocation)
    {
        return Err(Failure {
            stage: if f.stage == Stage::Estimation {
                "estimation"
            } else {
                "scenario"
            },
            code: if f.stage == Stage::Estimation { 2 } else { 1 },
            message: f.message.clone(),
        });
    }
    let est = result
        .estimate
        .as_ref()
        .expect("estimate present after successful sensing");
    let rows: Vec<TraceRow> = result
        .trace
        .iter()
        .flatten()
        .map(|r| TraceRow {
            iteration: r.iteration,
            x: r.state.position.x,
            y: r.state.position.y,
            v: r.state.velocity,
            residual_norm: r.residual_norm,
            step_norm: r.step_norm,
            step_scale: r.step_scale,
        })
        .collect();
    let headers = [
        "iteration",
        "x",
        "y",
        "v",
        "residual_norm",
        "step_norm",
        "step_scale",
    ];
    write_rows(&c.out.join("trace.csv"), &headers, &rows).map_err(io)?;
    let report = SenseReport {
        seed,
        truth: &truth,
        estimate: &est.state,
        pos_err_m: result.pos_err_m.unwrap_or(f64::NAN),
        aoa_deg: est.aoa_rad.to_degrees(),
        aoa_err_deg: result.aoa_err_rad.unwrap_or(f64::NAN).to_degrees(),
        iterations: est.iterations,
        residual: est.residual,
        stop: est.stop,
        noiseless: c.noiseless,
        config: &cfg,
    };
    write_json(&c.out.join("estimate.json"), &report).map_err(io)?;
    println!(
        "estimate x={} y={} v={} pos_err_m={:.6e} iterations={}",
        est.state.position.x,
        est.state.position.y,
        est.state.velocity,
        report.pos_err_m,
        est.iterations
    );
    Ok(())
}

#[derive(Deserialize)]
struct ProfileRow {
    sinr_com: f64,
    sinr_rad: f64,
}

fn cmd_allocate(c: &Common, profile_path: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    if c.noiseless {
        log::warn!("--noiseless has no effect on allocation");
    }
    let (seed, profile) = match profile_path {
        Some(p) => {
            let rows: Vec<ProfileRow> =
                read_rows(p).map_err(|e| Failure::from_error("config", e))?;
            let (com, rad) = rows.iter().map(|r| (r.sinr_com, r.sinr_rad)).unzip();
            let prof = SinrProfile::new(com, rad).map_err(|e| Failure::from_error("config", e))?;
            (trial_seed(cfg.scenario.seed, 0), prof)
        }
        None => {
            let setup = Setup::new(&cfg.scenario).map_err(|e| Failure::from_error("config", e))?;
            let (seed, sc) = scenario_for(&cfg, &setup, c)?;
            let prof = sinr_profile(&cfg.scenario, &setup, &sc, &sc.ue)
                .map_err(|e| Failure::from_error("scenario", e))?;
            (seed, prof)
        }
    };
    prepare_out(&c.out)?;
    let sweep = with_jobs(c.jobs, || sweep_eta(&profile, &cfg.allocator))?
        .map_err(|e| Failure::from_error("allocation", e))?;
    let io = |e| Failure::from_error("output", e);
    write_sweep(&c.out.join("sweep.csv"), &sweep.curve).map_err(io)?;
    write_allocation(&c.out.join("allocation.csv"), Some(&sweep.best)).map_err(io)?;
    let base = raca_baselines(
        &profile,
        sweep.best_eta,
        &cfg.allocator,
        &mut stream_rng(seed, stream::BASELINE),
    );
    println!(
        "best_eta={} total_w={} raca1_w={} raca2_w={} raca3_w={}",
        sweep.best_eta,
        sweep.best.allocation.total_w,
        base[0].result.allocation.total_w,
        base[1].result.allocation.total_w,
        base[2].result.allocation.total_w
    );
    Ok(())
}

fn cmd_montecarlo(c: &Common) -> Result<(), Failure> {
    let cfg = load_config(c)?;
    if c.ue.is_some() || c.velocity.is_some() || c.noiseless {
        log::warn!("--ue, --velocity and --noiseless apply to sense only; ignored");
    }
    let run = with_jobs(c.jobs, || run_montecarlo(&cfg, Execution::Parallel))?
        .map_err(|e| Failure::from_error("montecarlo", e))?;
    let files = export_results(&run, &c.out).map_err(|e| Failure::from_error("output", e))?;
    let m = &run.primary.metrics;
    println!(
        "trials={} estimation_failures={} allocation_infeasible={} median_error_m={} summary={}",
        m.trials,
        m.estimation_failures,
        m.allocation_infeasible,
        m.error_median_m.map_or("nan".into(), |v| v.to_string()),
        files.summary.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match &cli.command {
        Command::Sense(c) => cmd_sense(c),
        Command::Allocate { common, profile } => cmd_allocate(common, profile.as_deref()),
        Command::Montecarlo(c) => cmd_montecarlo(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error [{}]: {}", f.stage, f.message);
            ExitCode::from(f.code)
        }
    }
}
