use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::UEState;
use crate::geometry::{
    direct_path_along, doppler_shift, ArrayConfig, CommChannelParams, Path, PathSet, Point,
    SubcarrierGrid, SPEED_OF_LIGHT,
};
use crate::waveform::TxWaveform;

/// Deployment and link-budget parameters. Angles are in degrees here and
/// radians everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_total: usize,
    pub n_coherent: usize,
    pub n_symbols: usize,
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    pub n_reflectors: usize,
    pub radius_m: f64,
    pub min_distance_m: f64,
    pub velocity_min: f64,
    pub velocity_max: f64,
    /// Fixed departure angle; `None` samples the UE over the broadside half-disc.
    pub launch_angle_deg: Option<f64>,
    pub ref_distance_m: f64,
    pub loss_exponent: f64,
    pub shadowing_var_db: f64,
    pub noise_var_rad: f64,
    pub noise_var_com: f64,
    /// Scales every reflection coefficient 1/(τc)².
    pub echo_gain: f64,
    /// Power scaling of radar leakage into the downlink SINR, applied to the
    /// reflection coefficients before `echo_gain`.
    pub interference_coupling: f64,
    pub beam_gain_rad: f64,
    pub beam_gain_com: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_total: 128,
            n_coherent: 10,
            n_symbols: 10,
            carrier_freq_hz: 60e9,
            bandwidth_hz: 100e6,
            n_tx: 8,
            n_rx: 8,
            n_reflectors: 2,
            radius_m: 50.0,
            min_distance_m: 1.0,
            velocity_min: 0.0,
            velocity_max: 20.0,
            launch_angle_deg: None,
            ref_distance_m: 1.0,
            loss_exponent: 2.9,
            shadowing_var_db: 5.7,
            noise_var_rad: 1e-14,
            noise_var_com: 1e-14,
            echo_gain: DEFAULT_ECHO_GAIN,
            interference_coupling: DEFAULT_INTERFERENCE_COUPLING,
            beam_gain_rad: DEFAULT_RADAR_BEAM_GAIN,
            beam_gain_com: 1.0,
            seed: 42,
        }
    }
}

/// Puts typical 8×8 localisation errors at a few centimetres.
pub const DEFAULT_ECHO_GAIN: f64 = 0.1;
/// Keeps radar leakage near the downlink noise floor.
pub const DEFAULT_INTERFERENCE_COUPLING: f64 = 1e-7;
/// Centres the downlink/sensing SINR ratio inside the default η grid.
pub const DEFAULT_RADAR_BEAM_GAIN: f64 = 4.0;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("radius_m", self.radius_m),
            ("ref_distance_m", self.ref_distance_m),
            ("noise_var_rad", self.noise_var_rad),
            ("noise_var_com", self.noise_var_com),
            ("echo_gain", self.echo_gain),
            ("beam_gain_rad", self.beam_gain_rad),
            ("beam_gain_com", self.beam_gain_com),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "scenario.{name} must be positive, got {v}"
                )));
            }
        }
        let nonneg = [
            ("min_distance_m", self.min_distance_m),
            ("loss_exponent", self.loss_exponent),
            ("shadowing_var_db", self.shadowing_var_db),
            ("interference_coupling", self.interference_coupling),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::config(format!(
                    "scenario.{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.n_tx == 0 || self.n_rx == 0 || self.n_symbols == 0 || self.n_coherent == 0 {
            return Err(Error::config(
                "scenario antenna, symbol and subcarrier counts must be at least 1",
            ));
        }
        if self.n_coherent > self.n_total {
            return Err(Error::config(
                "scenario.n_coherent must not exceed scenario.n_total",
            ));
        }
        if !(self.velocity_max >= self.velocity_min) {
            return Err(Error::config(
                "scenario.velocity_max must be at least velocity_min",
            ));
        }
        if self.min_distance_m.max(self.ref_distance_m) >= self.radius_m {
            return Err(Error::config(
                "scenario.radius_m leaves no room outside the minimum distance",
            ));
        }
        if let Some(a) = self.launch_angle_deg {
            if !(0.0..=180.0).contains(&a) {
                return Err(Error::config(
                    "scenario.launch_angle_deg must lie in [0, 180]",
                ));
            }
        }
        Ok(())
    }

    pub fn sample_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn array(&self) -> Result<ArrayConfig> {
        ArrayConfig::half_wavelength(self.n_tx, self.n_rx, self.carrier_freq_hz)
    }

    pub fn grid(&self) -> Result<SubcarrierGrid> {
        SubcarrierGrid::new(
            self.n_total,
            self.n_coherent,
            self.n_symbols,
            self.sample_period(),
        )
    }

    pub fn waveform(&self) -> Result<TxWaveform> {
        Ok(TxWaveform::equivalent(&self.grid()?, &self.array()?))
    }

    /// Smallest UE range used for sampling.
    fn inner_radius(&self) -> f64 {
        self.min_distance_m.max(self.ref_distance_m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub ue: UEState,
    pub reflectors: Vec<Point>,
    /// Fading phases ω_k, direct reflection first.
    pub phases: Vec<f64>,
    pub shadowing_db: f64,
    pub paths: PathSet,
    pub comm: CommChannelParams,
}

const MAX_DRAWS: usize = 100_000;

fn uniform_in_disc<R: Rng + ?Sized>(
    rng: &mut R,
    radius: f64,
    inner: f64,
    half: bool,
) -> Result<Point> {
    for _ in 0..MAX_DRAWS {
        let x = rng.random_range(-radius..=radius);
        let y = if half {
            rng.random_range(0.0..=radius)
        } else {
            rng.random_range(-radius..=radius)
        };
        let p = Point::new(x, y);
        let r = p.norm();
        if r <= radius && r >= inner && r > 0.0 {
            return Ok(p);
        }
    }
    Err(Error::config(
        "could not sample a point inside the deployment disc",
    ))
}

/// Round-trip length BS → UE → reflector → BS.
fn bounce_length(bs: &Point, ue: &Point, q: &Point) -> f64 {
    (ue - bs).norm() + (q - ue).norm() + (bs - q).norm()
}

/// Reflection paths for a UE at `state`, reusing the scenario's reflectors
/// and fading phases.
pub fn paths_for(
    cfg: &ScenarioConfig,
    array: &ArrayConfig,
    state: &UEState,
    reflectors: &[Point],
    phases: &[f64],
) -> Result<PathSet> {
    let bs = array.bs_position;
    let dp = array.direct_path(&state.position)?;
    let amp = |len: f64| cfg.echo_gain / (len * len);
    let mut paths = Vec::with_capacity(reflectors.len() + 1);
    paths.push(Path {
        fading: Complex64::from_polar(amp(dp.delay * SPEED_OF_LIGHT), phases[0]),
        delay: dp.delay,
        aoa: dp.aoa,
    });
    for (q, &w) in reflectors.iter().zip(&phases[1..]) {
        let len = bounce_length(&bs, &state.position, q);
        let aoa = direct_path_along(&bs, q, &array.array_axis)?.aoa;
        paths.push(Path {
            fading: Complex64::from_polar(amp(len), w),
            delay: (len / SPEED_OF_LIGHT).max(dp.delay),
            aoa,
        });
    }
    PathSet::new(
        dp.aoa,
        doppler_shift(state.velocity, array.carrier_freq),
        paths,
    )
}

impl Scenario {
    /// The same environment seen from a different UE state, used to evaluate
    /// link quality at an estimated position.
    pub fn paths_at(
        &self,
        cfg: &ScenarioConfig,
        array: &ArrayConfig,
        state: &UEState,
    ) -> Result<PathSet> {
        paths_for(cfg, array, state, &self.reflectors, &self.phases)
    }

    /// Moves the UE, keeping reflectors, phases and shadowing.
    pub fn relocated(
        &self,
        cfg: &ScenarioConfig,
        array: &ArrayConfig,
        state: UEState,
    ) -> Result<Scenario> {
        Ok(Scenario {
            paths: self.paths_at(cfg, array, &state)?,
            comm: self.comm_at(cfg, array, &state)?,
            ue: state,
            reflectors: self.reflectors.clone(),
            phases: self.phases.clone(),
            shadowing_db: self.shadowing_db,
        })
    }

    pub fn comm_at(
        &self,
        cfg: &ScenarioConfig,
        array: &ArrayConfig,
        state: &UEState,
    ) -> Result<CommChannelParams> {
        let dist = (state.position - array.bs_position)
            .norm()
            .max(cfg.ref_distance_m);
        CommChannelParams::new(
            dist,
            cfg.ref_distance_m,
            cfg.loss_exponent,
            cfg.carrier_freq_hz,
            self.shadowing_db,
        )
    }
}

pub fn sample_scenario<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Result<Scenario> {
    cfg.validate()?;
    let array = cfg.array()?;
    let bs = array.bs_position;
    let inner = cfg.inner_radius();

    let rel = match cfg.launch_angle_deg {
        Some(deg) => {
            // Radial density ∝ r keeps the range distribution of a uniform disc.
            let lo = (inner / cfg.radius_m).powi(2);
            let r = cfg.radius_m * rng.random_range(lo..=1.0f64).sqrt();
            let phi = deg.to_radians();
            array.array_axis * (r * phi.cos()) + array.broadside() * (r * phi.sin())
        }
        None => {
            let p = uniform_in_disc(rng, cfg.radius_m, inner, true)?;
            array.array_axis * p.x + array.broadside() * p.y
        }
    };
    let velocity = if cfg.velocity_max > cfg.velocity_min {
        rng.random_range(cfg.velocity_min..cfg.velocity_max)
    } else {
        cfg.velocity_min
    };
    let ue = UEState::new(bs + rel, velocity);
    let direct_len = 2.0 * rel.norm();
    let min_gap = cfg.sample_period() * SPEED_OF_LIGHT;

    let mut reflectors = Vec::with_capacity(cfg.n_reflectors);
    while reflectors.len() < cfg.n_reflectors {
        let mut placed = false;
        for _ in 0..MAX_DRAWS {
            let q = bs + uniform_in_disc(rng, cfg.radius_m, cfg.min_distance_m.max(1e-3), false)?;
            if bounce_length(&bs, &ue.position, &q) - direct_len >= min_gap {
                reflectors.push(q);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::config(
                "could not place a reflector with a resolvable delay",
            ));
        }
    }
    let phases: Vec<f64> = (0..=cfg.n_reflectors)
        .map(|_| rng.random_range(-PI..PI))
        .collect();
    let shadow =
        Normal::new(0.0, cfg.shadowing_var_db.sqrt()).map_err(|e| Error::config(e.to_string()))?;
    let shadowing_db = shadow.sample(rng);

    let paths = paths_for(cfg, &array, &ue, &reflectors, &phases)?;
    let dist = rel.norm();
    let comm = CommChannelParams::new(
        dist,
        cfg.ref_distance_m,
        cfg.loss_exponent,
        cfg.carrier_freq_hz,
        shadowing_db,
    )?;
    Ok(Scenario {
        ue,
        reflectors,
        phases,
        shadowing_db,
        paths,
        comm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mean_range_matches_uniform_disc() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = sample_scenario(&cfg, &mut rng).unwrap();
            sum += s.ue.position.norm();
        }
        let mean = sum / n as f64;
        let want = 2.0 * cfg.radius_m / 3.0;
        assert!((mean / want - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn scenario_invariants() {
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = sample_scenario(&cfg, &mut rng).unwrap();
            assert!(s.ue.position.norm() <= cfg.radius_m && s.ue.position.norm() >= 1.0);
            assert!(s.ue.position.y >= 0.0);
            assert!((0.0..20.0).contains(&s.ue.velocity));
            assert_eq!(s.paths.paths.len(), 3);
            for q in &s.reflectors {
                assert!(q.norm() <= cfg.radius_m);
            }
            for p in &s.paths.paths {
                assert!(p.fading.norm() > 0.0);
            }
            let t0 = s.paths.direct().delay;
            for p in s.paths.indirect() {
                assert!(p.delay - t0 >= cfg.sample_period() * (1.0 - 1e-9));
            }
            let want = cfg.echo_gain / (t0 * SPEED_OF_LIGHT).powi(2);
            assert!((s.paths.direct().fading.norm() - want).abs() <= 1e-12 * want);
        }
    }

    #[test]
    fn fixed_launch_angle() {
        let cfg = ScenarioConfig {
            launch_angle_deg: Some(20.0),
            ..ScenarioConfig::default()
        };
        let s = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((s.paths.departure_angle.to_degrees() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn seeded_and_degenerate() {
        let cfg = ScenarioConfig::default();
        let a = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_scenario(&cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        let zero = ScenarioConfig {
            radius_m: 0.0,
            ..ScenarioConfig::default()
        };
        assert!(matches!(
            sample_scenario(&zero, &mut ChaCha8Rng::seed_from_u64(5)),
            Err(Error::Config(_))
        ));
    }
}
