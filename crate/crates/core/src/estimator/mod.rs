//! UE position and velocity estimation from the stacked radar echo.
//!
//! The unknowns split into the nonlinear state U = (x, y, v) and a linear
//! equivalent channel: one direct-reflection coefficient plus one coefficient
//! per (subcarrier, receive antenna) that absorbs all indirect reflections.
//! [`run_sensing`] alternates a least-squares channel fit with damped
//! Gauss-Newton updates of U.

mod gauss_newton;
mod ls;
mod model;

use nalgebra::{DVector, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direct_path_along, ArrayConfig, Point, SubcarrierGrid};
use crate::waveform::{EchoTensor, TxWaveform};

pub use gauss_newton::{
    gauss_newton_direction, gauss_newton_step, surrogate_cost, GaussNewtonStep,
};
pub use ls::{estimate_channel_ls, LsSolution, CONDITION_LIMIT, TIKHONOV_SCALE};
pub use model::{build_f_pos, build_g, coefficient_matrix, jacobian, model_echo};

use ls::{solve_structured, Profile};
use model::ModelPoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UEState {
    pub position: Point,
    pub velocity: f64,
}

impl UEState {
    pub fn new(position: Point, velocity: f64) -> Self {
        UEState { position, velocity }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.position.x, self.position.y, self.velocity)
    }

    pub fn offset(&self, step: &Vector3<f64>, scale: f64) -> Self {
        UEState {
            position: self.position + Point::new(step.x, step.y) * scale,
            velocity: self.velocity + step.z * scale,
        }
    }
}

/// H_EQ = [H_DR; H_IDR], the IDR part indexed `sub * n_rx + rx`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalentChannel {
    pub dr: Complex64,
    pub idr: DVector<Complex64>,
}

impl EquivalentChannel {
    pub fn stacked(&self) -> DVector<Complex64> {
        let mut v = DVector::zeros(self.idr.len() + 1);
        v[0] = self.dr;
        v.rows_mut(1, self.idr.len()).copy_from(&self.idr);
        v
    }

    pub fn from_stacked(v: &DVector<Complex64>) -> Self {
        EquivalentChannel {
            dr: v[0],
            idr: v.rows(1, v.len() - 1).into_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Gauss-Newton on the surrogate with the channel frozen.
    Surrogate,
    /// Gauss-Newton with the Jacobian projected off the channel columns.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub radius: f64,
    /// Cells across the disc diameter.
    pub cells: usize,
    pub velocities: Vec<f64>,
    /// Restrict to the half-plane on the broadside side of the array.
    pub half_plane: bool,
    pub min_distance: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            radius: 50.0,
            cells: 40,
            velocities: vec![2.5, 7.5, 12.5, 17.5],
            half_plane: true,
            min_distance: 1.0,
        }
    }
}

impl GridSpec {
    pub fn candidates(&self, array: &ArrayConfig) -> Vec<UEState> {
        if self.cells == 0 || !(self.radius > 0.0) {
            return Vec::new();
        }
        let h = 2.0 * self.radius / self.cells as f64;
        let across: Vec<f64> = (0..self.cells)
            .map(|i| -self.radius + h * (i as f64 + 0.5))
            .collect();
        let normal: Vec<f64> = if self.half_plane {
            (0..self.cells.div_ceil(2))
                .map(|j| h * (j as f64 + 0.5))
                .collect()
        } else {
            across.clone()
        };
        let axis = array.array_axis;
        let side = array.broadside();
        let mut out = Vec::new();
        for &b in &normal {
            for &a in &across {
                let rel = axis * a + side * b;
                let r = rel.norm();
                if r > self.radius + 1e-9 || r < self.min_distance {
                    continue;
                }
                for &v in &self.velocities {
                    out.push(UEState::new(array.bs_position + rel, v));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Grid(GridSpec),
    Explicit { x: f64, y: f64, velocity: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub max_halvings: usize,
    pub step_rule: StepRule,
    pub init: InitSpec,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            max_iterations: 50,
            step_tolerance: 1e-4,
            max_halvings: 10,
            step_rule: StepRule::Projected,
            init: InitSpec::Grid(GridSpec::default()),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("estimator.max_iterations must be at least 1"));
        }
        if !(self.step_tolerance > 0.0) {
            return Err(Error::config("estimator.step_tolerance must be positive"));
        }
        if let InitSpec::Grid(g) = &self.init {
            if g.cells == 0 || g.velocities.is_empty() {
                return Err(Error::config("estimator.init grid is empty"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub state: UEState,
    pub residual_norm: f64,
    pub step_norm: f64,
    pub step_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    StepTolerance,
    MaxIterations,
    NoDescent,
    SingularStep,
}

#[derive(Debug, Clone)]
pub struct EstimateTrace {
    pub initial: IterationRecord,
    pub iterations: Vec<IterationRecord>,
    pub state: UEState,
    pub channel: EquivalentChannel,
    pub aoa: f64,
    pub stop: StopReason,
    pub regularized: bool,
}

impl EstimateTrace {
    pub fn residual_norm(&self) -> f64 {
        self.iterations
            .last()
            .unwrap_or(&self.initial)
            .residual_norm
    }

    /// Residual norms from the initial point through every completed iteration.
    pub fn residuals(&self) -> Vec<f64> {
        std::iter::once(&self.initial)
            .chain(&self.iterations)
            .map(|r| r.residual_norm)
            .collect()
    }
}

/// Arccos angle of `q` seen from `bs` along the x axis.
pub fn extract_aoa(q: &Point, bs: &Point) -> Result<f64> {
    Ok(direct_path_along(bs, q, &Point::new(1.0, 0.0))?.aoa)
}

struct Evaluation {
    point: ModelPoint,
    profile: Profile,
}

fn evaluate(
    state: &UEState,
    y: &DVector<Complex64>,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<Evaluation> {
    let point = ModelPoint::new(state, grid, array, waveform)?;
    let profile = solve_structured(&point, y)?;
    Ok(Evaluation { point, profile })
}

/// Profiled residual ‖y − F(U)Ĥ_LS(U)‖.
pub fn profiled_residual(
    state: &UEState,
    y: &EchoTensor,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<f64> {
    Ok(evaluate(state, &y.data, grid, array, waveform)?
        .profile
        .residual_norm)
}

/// Best candidate by profiled residual; ties keep the earliest.
pub fn init_from_candidates(
    y: &EchoTensor,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
    candidates: &[UEState],
) -> Result<UEState> {
    let mut best: Option<(f64, &UEState)> = None;
    for c in candidates {
        let Ok(r) = profiled_residual(c, y, grid, array, waveform) else {
            continue;
        };
        if r.is_finite() && best.is_none_or(|(b, _)| r < b) {
            best = Some((r, c));
        }
    }
    best.map(|(_, c)| c.clone())
        .ok_or_else(|| Error::config("initialisation grid has no valid candidate"))
}

pub fn init_state(
    y: &EchoTensor,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
    spec: &GridSpec,
) -> Result<UEState> {
    let candidates = spec.candidates(array);
    if candidates.is_empty() {
        return Err(Error::config("initialisation grid is empty"));
    }
    init_from_candidates(y, grid, array, waveform, &candidates)
}

pub fn run_sensing(
    y: &EchoTensor,
    cfg: &EstimatorConfig,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<EstimateTrace> {
    if !(cfg.step_tolerance > 0.0) {
        return Err(Error::config("estimator.step_tolerance must be positive"));
    }
    let start = match &cfg.init {
        InitSpec::Explicit { x, y: yy, velocity } => UEState::new(Point::new(*x, *yy), *velocity),
        InitSpec::Grid(spec) => init_state(y, grid, array, waveform, spec)?,
    };
    run_sensing_from(y, start, cfg, grid, array, waveform)
}

/// Algorithm body starting from a given state; `cfg.init` is ignored.
pub fn run_sensing_from(
    y: &EchoTensor,
    start: UEState,
    cfg: &EstimatorConfig,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<EstimateTrace> {
    let obs = &y.data;
    let mut state = start;
    let mut cur = evaluate(&state, obs, grid, array, waveform)?;
    check_finite(cur.profile.residual_norm, 0)?;
    let mut regularized = cur.profile.regularized;
    let initial = IterationRecord {
        iteration: 0,
        state: state.clone(),
        residual_norm: cur.profile.residual_norm,
        step_norm: 0.0,
        step_scale: 0.0,
    };
    let mut iterations = Vec::new();
    let mut stop = StopReason::MaxIterations;

    for it in 1..=cfg.max_iterations {
        let step = match cfg.step_rule {
            StepRule::Projected => gauss_newton::projected_step(
                &state,
                &cur.point,
                &cur.profile,
                grid,
                array,
                waveform,
            ),
            StepRule::Surrogate => {
                let jac = jacobian(&state, &cur.profile.channel, grid, array, waveform)?;
                gauss_newton_direction(&jac, &cur.profile.residual)
                    .map(|k| Vector3::new(k[0], k[1], k[2]))
            }
        };
        let step = match step {
            Ok(s) => s,
            Err(Error::Singular { .. }) => {
                stop = StopReason::SingularStep;
                break;
            }
            Err(e) => return Err(e),
        };
        let step_norm = step.norm();
        if !step_norm.is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                reason: "non-finite Gauss-Newton step".into(),
            });
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let cand = state.offset(&step, scale);
            if let Ok(ev) = evaluate(&cand, obs, grid, array, waveform) {
                check_finite(ev.profile.residual_norm, it)?;
                if ev.profile.residual_norm <= cur.profile.residual_norm {
                    accepted = Some((cand, ev));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((next, ev)) = accepted else {
            iterations.push(IterationRecord {
                iteration: it,
                state: state.clone(),
                residual_norm: cur.profile.residual_norm,
                step_norm,
                step_scale: 0.0,
            });
            stop = StopReason::NoDescent;
            break;
        };
        state = next;
        cur = ev;
        regularized |= cur.profile.regularized;
        iterations.push(IterationRecord {
            iteration: it,
            state: state.clone(),
            residual_norm: cur.profile.residual_norm,
            step_norm,
            step_scale: scale,
        });
        log::trace!(
            "iteration {it}: residual {:.6e}, step {step_norm:.3e}",
            cur.profile.residual_norm
        );
        if step_norm < cfg.step_tolerance {
            stop = StopReason::StepTolerance;
            break;
        }
    }

    let aoa = array.direct_path(&state.position)?.aoa;
    Ok(EstimateTrace {
        initial,
        iterations,
        state,
        channel: cur.profile.channel,
        aoa,
        stop,
        regularized,
    })
}

fn check_finite(r: f64, iteration: usize) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration,
            reason: "non-finite residual".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{doppler_shift, Path, PathSet};
    use crate::waveform::synthesize_echo;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    struct Fixture {
        grid: SubcarrierGrid,
        array: ArrayConfig,
        waveform: TxWaveform,
        truth: UEState,
        echo: EchoTensor,
    }

    fn fixture(seed: u64, noise_var: f64) -> Fixture {
        let grid = SubcarrierGrid::new(128, 10, 10, 1e-8).unwrap();
        let array = ArrayConfig::half_wavelength(8, 8, 60e9).unwrap();
        let waveform = TxWaveform::equivalent(&grid, &array);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rng.random_range(8.0..45.0);
        let ang = rng.random_range(0.15..PI - 0.15);
        let truth = UEState::new(
            Point::new(r * ang.cos(), r * ang.sin()),
            rng.random_range(0.0..20.0),
        );
        let dp = array.direct_path(&truth.position).unwrap();
        let fd = doppler_shift(truth.velocity, 60e9);
        let paths = vec![
            Path {
                fading: Complex64::from_polar(1.0, rng.random_range(-PI..PI)),
                delay: dp.delay,
                aoa: dp.aoa,
            },
            Path {
                fading: Complex64::from_polar(0.4, rng.random_range(-PI..PI)),
                delay: dp.delay * 1.6,
                aoa: 0.5,
            },
            Path {
                fading: Complex64::from_polar(0.3, rng.random_range(-PI..PI)),
                delay: dp.delay * 2.1,
                aoa: 2.4,
            },
        ];
        let ps = PathSet::new(dp.aoa, fd, paths).unwrap();
        let echo = synthesize_echo(
            &truth.position,
            truth.velocity,
            &ps,
            &grid,
            &array,
            &waveform,
            noise_var,
            &mut rng,
        )
        .unwrap();
        Fixture {
            grid,
            array,
            waveform,
            truth,
            echo,
        }
    }

    #[test]
    fn noiseless_convergence_from_nearby_start() {
        for seed in 0..5 {
            let f = fixture(seed, 0.0);
            let start = UEState::new(
                f.truth.position + Point::new(1.2, -1.0),
                f.truth.velocity + 1.0,
            );
            let cfg = EstimatorConfig::default();
            let tr =
                run_sensing_from(&f.echo, start, &cfg, &f.grid, &f.array, &f.waveform).unwrap();
            let err = (tr.state.position - f.truth.position).norm();
            assert!(err <= 1e-3, "seed {seed}: error {err}, stop {:?}", tr.stop);
            let res = tr.residuals();
            assert!(res.windows(2).all(|w| w[1] <= w[0]));
            let aoa_true = f.array.direct_path(&f.truth.position).unwrap().aoa;
            assert!((tr.aoa - aoa_true).abs().to_degrees() <= 0.5);
        }
    }

    #[test]
    fn zero_iterations_returns_start() {
        let f = fixture(1, 0.0);
        let start = UEState::new(f.truth.position + Point::new(0.5, 0.5), 3.0);
        let cfg = EstimatorConfig {
            max_iterations: 0,
            ..EstimatorConfig::default()
        };
        assert!(cfg.validate().is_err());
        let tr =
            run_sensing_from(&f.echo, start.clone(), &cfg, &f.grid, &f.array, &f.waveform).unwrap();
        assert_eq!(tr.state, start);
        assert!(tr.iterations.is_empty());
        let r = profiled_residual(&start, &f.echo, &f.grid, &f.array, &f.waveform).unwrap();
        assert_eq!(tr.initial.residual_norm, r);
    }

    #[test]
    fn grid_init_lands_near_truth() {
        let f = fixture(2, 0.0);
        let spec = GridSpec::default();
        let init = init_state(&f.echo, &f.grid, &f.array, &f.waveform, &spec).unwrap();
        let cell = 2.0 * spec.radius / spec.cells as f64;
        assert!((init.position - f.truth.position).norm() <= cell * 2f64.sqrt());

        let exact = vec![f.truth.clone()];
        let got = init_from_candidates(&f.echo, &f.grid, &f.array, &f.waveform, &exact).unwrap();
        assert_eq!(got, f.truth);

        let empty = GridSpec {
            cells: 0,
            ..GridSpec::default()
        };
        assert!(matches!(
            init_state(&f.echo, &f.grid, &f.array, &f.waveform, &empty),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn surrogate_rule_descends() {
        let f = fixture(3, 0.0);
        let start = UEState::new(f.truth.position + Point::new(0.4, 0.3), f.truth.velocity);
        let cfg = EstimatorConfig {
            step_rule: StepRule::Surrogate,
            ..EstimatorConfig::default()
        };
        let tr = run_sensing_from(&f.echo, start, &cfg, &f.grid, &f.array, &f.waveform).unwrap();
        let res = tr.residuals();
        assert!(res.windows(2).all(|w| w[1] <= w[0]));
        assert!(res.last().unwrap() < &res[0]);
    }

    #[test]
    fn aoa_examples() {
        assert_eq!(
            extract_aoa(&Point::new(1.0, 0.0), &Point::zeros()).unwrap(),
            0.0
        );
        assert!(
            (extract_aoa(&Point::new(0.0, 1.0), &Point::zeros()).unwrap() - PI / 2.0).abs() < 1e-15
        );
        assert!(extract_aoa(&Point::zeros(), &Point::zeros()).is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = EstimatorConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: EstimatorConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let explicit: EstimatorConfig =
            toml::from_str("[init]\nkind = \"explicit\"\nx = 1.0\ny = 2.0\nvelocity = 3.0\n")
                .unwrap();
        assert_eq!(
            explicit.init,
            InitSpec::Explicit {
                x: 1.0,
                y: 2.0,
                velocity: 3.0
            }
        );
        assert!(toml::from_str::<EstimatorConfig>("max_iterationz = 3").is_err());
    }
}
