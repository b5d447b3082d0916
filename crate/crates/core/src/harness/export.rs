use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cdf::default_error_grid;
use super::montecarlo::{AggregateMetrics, ArmResult, MonteCarloRun};
use super::trial::TrialResult;
use crate::allocator::{AllocationResult, Baseline, SweepPoint};
use crate::config::SimConfig;
use crate::error::{Error, Result, Service};

pub const TRIALS_CSV: &str = "trials.csv";
pub const CDF_CSV: &str = "cdf.csv";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const ALLOCATION_CSV: &str = "allocation.csv";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: u64,
    pub seed: u64,
    pub true_x: Option<f64>,
    pub true_y: Option<f64>,
    pub true_v: Option<f64>,
    pub est_x: Option<f64>,
    pub est_y: Option<f64>,
    pub est_v: Option<f64>,
    pub pos_err_m: Option<f64>,
    pub aoa_err_deg: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub total_power_jspa: Option<f64>,
    pub total_power_raca1: Option<f64>,
    pub total_power_raca2: Option<f64>,
    pub total_power_raca3: Option<f64>,
    pub feasible_jspa: bool,
    pub feasible_raca1: bool,
    pub feasible_raca2: bool,
    pub feasible_raca3: bool,
    pub failure: Option<String>,
}

impl TrialRow {
    pub fn from_trial(t: &TrialResult) -> Self {
        let base = |which: Baseline| {
            t.baselines
                .as_ref()
                .and_then(|bs| bs.iter().find(|b| b.baseline == which))
                .map(|b| (b.result.allocation.total_w, b.feasible))
        };
        let [r1, r2, r3] = [Baseline::Raca1, Baseline::Raca2, Baseline::Raca3].map(base);
        let truth = t.scenario.as_ref().map(|s| &s.ue);
        let est = t.estimate.as_ref();
        TrialRow {
            trial: t.trial,
            seed: t.seed,
            true_x: truth.map(|u| u.position.x),
            true_y: truth.map(|u| u.position.y),
            true_v: truth.map(|u| u.velocity),
            est_x: est.map(|e| e.state.position.x),
            est_y: est.map(|e| e.state.position.y),
            est_v: est.map(|e| e.state.velocity),
            pos_err_m: t.pos_err_m,
            aoa_err_deg: t.aoa_err_rad.map(f64::to_degrees),
            iterations: est.map(|e| e.iterations),
            residual: est.map(|e| e.residual),
            total_power_jspa: t.jspa_power(),
            total_power_raca1: r1.map(|r| r.0),
            total_power_raca2: r2.map(|r| r.0),
            total_power_raca3: r3.map(|r| r.0),
            feasible_jspa: t.jspa_feasible(),
            feasible_raca1: r1.is_some_and(|r| r.1),
            feasible_raca2: r2.is_some_and(|r| r.1),
            feasible_raca3: r3.is_some_and(|r| r.1),
            failure: t
                .failure
                .as_ref()
                .map(|f| format!("{:?}: {}", f.stage, f.message).to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub subcarrier_index: usize,
    pub assigned_service: Service,
    pub power_w: f64,
}

pub fn allocation_rows(a: &AllocationResult) -> Vec<AllocationRow> {
    a.partition
        .gamma
        .iter()
        .zip(&a.allocation.p)
        .enumerate()
        .map(|(i, (&com, &p))| AllocationRow {
            subcarrier_index: i + 1,
            assigned_service: if com {
                Service::Communication
            } else {
                Service::Sensing
            },
            power_w: p,
        })
        .collect()
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes serialisable rows with a header, which is emitted even when `rows` is empty.
pub fn write_rows<T: Serialize>(path: &Path, headers: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(headers).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

pub const TRIAL_HEADERS: [&str; 21] = [
    "trial",
    "seed",
    "true_x",
    "true_y",
    "true_v",
    "est_x",
    "est_y",
    "est_v",
    "pos_err_m",
    "aoa_err_deg",
    "iterations",
    "residual",
    "total_power_jspa",
    "total_power_raca1",
    "total_power_raca2",
    "total_power_raca3",
    "feasible_jspa",
    "feasible_raca1",
    "feasible_raca2",
    "feasible_raca3",
    "failure",
];

pub const SWEEP_HEADERS: [&str; 7] = [
    "eta",
    "n_com",
    "n_rad",
    "power_com_w",
    "power_rad_w",
    "power_total_w",
    "infeasible",
];

pub const ALLOCATION_HEADERS: [&str; 3] = ["subcarrier_index", "assigned_service", "power_w"];

pub fn write_trials(path: &Path, trials: &[TrialResult]) -> Result<()> {
    let rows: Vec<TrialRow> = trials.iter().map(TrialRow::from_trial).collect();
    write_rows(path, &TRIAL_HEADERS, &rows)
}

pub fn write_sweep(path: &Path, curve: &[SweepPoint]) -> Result<()> {
    write_rows(path, &SWEEP_HEADERS, curve)
}

pub fn write_allocation(path: &Path, best: Option<&AllocationResult>) -> Result<()> {
    let rows = best.map(allocation_rows).unwrap_or_default();
    write_rows(path, &ALLOCATION_HEADERS, &rows)
}

/// One error-grid column per antenna arm.
pub fn write_cdf(path: &Path, arms: &[&ArmResult]) -> Result<()> {
    let grid = default_error_grid();
    let mut headers = vec!["error_m".to_string()];
    headers.extend(arms.iter().map(|a| format!("cdf_{}", a.label())));
    let mut w = csv::WriterBuilder::new()
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(&headers).map_err(csv_err(path))?;
    for (i, g) in grid.iter().enumerate() {
        let mut rec = vec![g.to_string()];
        for a in arms {
            rec.push(
                a.metrics
                    .cdf
                    .as_ref()
                    .map(|c| c.values[i].to_string())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub echo_gain: f64,
    pub interference_coupling: f64,
    pub beam_gain_rad: f64,
    pub beam_gain_com: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub n_tx: usize,
    pub n_rx: usize,
    pub metrics: AggregateMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub trials: usize,
    pub calibration: Calibration,
    pub metrics: AggregateMetrics,
    pub comparisons: Vec<ArmSummary>,
    /// Trial whose η sweep and allocation are written out.
    pub sweep_trial: Option<u64>,
    pub best_eta: Option<f64>,
    pub config: SimConfig,
}

/// Paths of everything written by [`export_results`].
#[derive(Debug, Clone)]
pub struct ExportedFiles {
    pub trials: PathBuf,
    pub cdf: PathBuf,
    pub sweep: PathBuf,
    pub allocation: PathBuf,
    pub summary: PathBuf,
}

pub fn export_results(run: &MonteCarloRun, dir: &Path) -> Result<ExportedFiles> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = ExportedFiles {
        trials: dir.join(TRIALS_CSV),
        cdf: dir.join(CDF_CSV),
        sweep: dir.join(SWEEP_CSV),
        allocation: dir.join(ALLOCATION_CSV),
        summary: dir.join(SUMMARY_JSON),
    };
    write_trials(&files.trials, &run.primary.trials)?;
    let arms: Vec<&ArmResult> = std::iter::once(&run.primary)
        .chain(&run.comparisons)
        .collect();
    write_cdf(&files.cdf, &arms)?;

    let shown = run.primary.trials.iter().find(|t| t.sweep.is_some());
    let sweep = shown.and_then(|t| t.sweep.as_ref());
    write_sweep(
        &files.sweep,
        sweep.map(|s| s.curve.as_slice()).unwrap_or(&[]),
    )?;
    write_allocation(&files.allocation, sweep.map(|s| &s.best))?;

    let summary = Summary {
        seed: run.config.scenario.seed,
        trials: run.primary.trials.len(),
        calibration: Calibration {
            echo_gain: run.config.scenario.echo_gain,
            interference_coupling: run.config.scenario.interference_coupling,
            beam_gain_rad: run.config.scenario.beam_gain_rad,
            beam_gain_com: run.config.scenario.beam_gain_com,
        },
        metrics: run.primary.metrics.clone(),
        comparisons: run
            .comparisons
            .iter()
            .map(|a| ArmSummary {
                n_tx: a.n_tx,
                n_rx: a.n_rx,
                metrics: a.metrics.clone(),
            })
            .collect(),
        sweep_trial: shown.map(|t| t.trial),
        best_eta: sweep.map(|s| s.best_eta),
        config: run.config.clone(),
    };
    write_json(&files.summary, &summary)?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Execution;
    use crate::harness::run_montecarlo;

    #[test]
    fn empty_trials_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trials(&p, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("trial,seed,true_x"));
        assert!(read_rows::<TrialRow>(&p).unwrap().is_empty());
    }

    #[test]
    fn trial_csv_round_trips() {
        let mut cfg = SimConfig::default();
        cfg.montecarlo.trials = 3;
        let run = run_montecarlo(&cfg, Execution::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = export_results(&run, dir.path()).unwrap();
        let back: Vec<TrialRow> = read_rows(&files.trials).unwrap();
        let want: Vec<TrialRow> = run
            .primary
            .trials
            .iter()
            .map(TrialRow::from_trial)
            .collect();
        assert_eq!(back, want);

        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&files.summary).unwrap()).unwrap();
        assert_eq!(summary["seed"], cfg.scenario.seed);
        assert_eq!(
            summary["config"]["scenario"]["n_total"],
            cfg.scenario.n_total
        );
        assert_eq!(summary["config"]["allocator"]["p_max"], cfg.allocator.p_max);
    }

    #[test]
    fn unwritable_path_names_it() {
        let err = write_trials(Path::new("/nonexistent-dir/x/trials.csv"), &[]).unwrap_err();
        assert!(
            err.to_string().contains("/nonexistent-dir/x/trials.csv"),
            "{err}"
        );
    }
}
