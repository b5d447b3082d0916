//! Deterministic physics: geometry, steering vectors, channel matrices,
//! path loss and per-unit-power SINR.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 3.0e8;

pub type Point = Vector2<f64>;

/// Uniform linear array shared by the transmit and receive chains.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    pub carrier_freq: f64,
    pub element_spacing: f64,
    pub bs_position: Point,
    pub array_axis: Point,
}

impl ArrayConfig {
    /// Half-wavelength array at the origin, aligned with the x axis.
    pub fn half_wavelength(n_tx: usize, n_rx: usize, carrier_freq: f64) -> Result<Self> {
        let cfg = ArrayConfig {
            n_tx,
            n_rx,
            carrier_freq,
            element_spacing: SPEED_OF_LIGHT / (2.0 * carrier_freq),
            bs_position: Point::zeros(),
            array_axis: Point::new(1.0, 0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_bs_position(mut self, bs: Point) -> Self {
        self.bs_position = bs;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::config("antenna counts must be at least 1"));
        }
        if !(self.carrier_freq > 0.0 && self.carrier_freq.is_finite()) {
            return Err(Error::config("carrier frequency must be positive"));
        }
        if !(self.element_spacing > 0.0) {
            return Err(Error::config("element spacing must be positive"));
        }
        if ((self.array_axis.norm() - 1.0).abs()) > 1e-12 {
            return Err(Error::config("array axis must be a unit vector"));
        }
        Ok(())
    }

    /// Unit normal to the array axis; positions with a non-negative component
    /// along it form the half-plane where arccos angles are unambiguous.
    pub fn broadside(&self) -> Point {
        Point::new(-self.array_axis.y, self.array_axis.x)
    }

    pub fn direct_path(&self, ue: &Point) -> Result<DirectPath> {
        direct_path_along(&self.bs_position, ue, &self.array_axis)
    }
}

/// Round-trip delay and angle of the BS-UE-BS reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPath {
    pub delay: f64,
    pub aoa: f64,
    pub distance: f64,
}

pub fn doppler_shift(velocity: f64, carrier_freq: f64) -> f64 {
    2.0 * velocity * carrier_freq / SPEED_OF_LIGHT
}

/// Direct reflection geometry with the array along the x axis.
pub fn direct_path_geometry(bs: &Point, ue: &Point) -> Result<DirectPath> {
    direct_path_along(bs, ue, &Point::new(1.0, 0.0))
}

pub fn direct_path_along(bs: &Point, ue: &Point, axis: &Point) -> Result<DirectPath> {
    let d = ue - bs;
    let distance = d.norm();
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(Error::domain("UE coincides with the base station"));
    }
    Ok(DirectPath {
        delay: 2.0 * distance / SPEED_OF_LIGHT,
        aoa: (d.dot(axis) / distance).clamp(-1.0, 1.0).acos(),
        distance,
    })
}

/// OFDM numerology. Subcarrier numbers are 1-based as in the physical model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierGrid {
    pub n_total: usize,
    pub n_coherent: usize,
    pub n_symbols: usize,
    pub sample_period: f64,
    pub baseband_freqs: Vec<f64>,
}

impl SubcarrierGrid {
    pub fn new(
        n_total: usize,
        n_coherent: usize,
        n_symbols: usize,
        sample_period: f64,
    ) -> Result<Self> {
        if n_coherent == 0 || n_coherent > n_total {
            return Err(Error::config(format!(
                "coherent subcarriers must lie in 1..={n_total}, got {n_coherent}"
            )));
        }
        if n_symbols == 0 {
            return Err(Error::config("symbol count must be at least 1"));
        }
        if !(sample_period > 0.0 && sample_period.is_finite()) {
            return Err(Error::config("sample period must be positive"));
        }
        let spacing = 1.0 / (n_total as f64 * sample_period);
        let baseband_freqs = (1..=n_coherent).map(|n| n as f64 * spacing).collect();
        Ok(SubcarrierGrid {
            n_total,
            n_coherent,
            n_symbols,
            sample_period,
            baseband_freqs,
        })
    }

    /// Baseband frequency of subcarrier `n`, valid over the whole band `1..=n_total`.
    pub fn freq(&self, n: usize) -> f64 {
        assert!(
            (1..=self.n_total).contains(&n),
            "subcarrier {n} outside 1..={}",
            self.n_total
        );
        n as f64 / (self.n_total as f64 * self.sample_period)
    }

    /// OFDM symbol duration, the slow-time sampling interval.
    pub fn symbol_period(&self) -> f64 {
        self.n_total as f64 * self.sample_period
    }
}

/// Spatial frequency (f_n + f_c) d_A / c, in cycles per element per unit cosine.
pub(crate) fn spatial_freq(grid: &SubcarrierGrid, array: &ArrayConfig, n: usize) -> f64 {
    (grid.freq(n) + array.carrier_freq) * array.element_spacing / SPEED_OF_LIGHT
}

pub(crate) fn steering(len: usize, kappa: f64, cos_angle: f64) -> DVector<Complex64> {
    DVector::from_fn(len, |t, _| {
        Complex64::from_polar(1.0, -2.0 * PI * t as f64 * kappa * cos_angle)
    })
}

pub fn steering_tx(
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    n: usize,
    angle: f64,
) -> DVector<Complex64> {
    steering(array.n_tx, spatial_freq(grid, array, n), angle.cos())
}

pub fn steering_rx(
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    n: usize,
    angle: f64,
) -> DVector<Complex64> {
    steering(array.n_rx, spatial_freq(grid, array, n), angle.cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub fading: Complex64,
    pub delay: f64,
    pub aoa: f64,
}

/// Direct reflection at index 0 followed by the indirect reflections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub departure_angle: f64,
    pub doppler: f64,
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(departure_angle: f64, doppler: f64, paths: Vec<Path>) -> Result<Self> {
        let Some(direct) = paths.first() else {
            return Err(Error::domain("path set needs a direct reflection"));
        };
        if (direct.aoa - departure_angle).abs() > 1e-12 {
            return Err(Error::domain(
                "direct path AoA must equal the departure angle",
            ));
        }
        if paths.iter().any(|p| !(p.delay > 0.0)) {
            return Err(Error::domain("path delays must be positive"));
        }
        if paths[1..].iter().any(|p| p.delay < direct.delay) {
            return Err(Error::domain("direct path must have the shortest delay"));
        }
        Ok(PathSet {
            departure_angle,
            doppler,
            paths,
        })
    }

    pub fn direct(&self) -> &Path {
        &self.paths[0]
    }

    pub fn indirect(&self) -> &[Path] {
        &self.paths[1..]
    }
}

/// Doppler-shifted delay phase exp(-j2π(f_n - f_d)τ).
pub(crate) fn delay_phase(freq: f64, doppler: f64, delay: f64) -> Complex64 {
    Complex64::from_polar(1.0, -2.0 * PI * (freq - doppler) * delay)
}

pub fn radar_channel(
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    path: &Path,
    departure_angle: f64,
    doppler: f64,
    n: usize,
) -> DMatrix<Complex64> {
    let b = steering_rx(grid, array, n, path.aoa);
    let a = steering_tx(grid, array, n, departure_angle);
    let scale = path.fading * delay_phase(grid.freq(n), doppler, path.delay);
    (b * a.adjoint()) * scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommChannelParams {
    pub large_scale_fading: f64,
    pub path_loss_db: f64,
    pub shadowing_db: f64,
    pub loss_exponent: f64,
    pub ref_distance: f64,
}

impl CommChannelParams {
    pub fn new(
        dist: f64,
        ref_distance: f64,
        loss_exponent: f64,
        carrier_freq: f64,
        shadowing_db: f64,
    ) -> Result<Self> {
        let pl = path_loss_db(
            dist,
            ref_distance,
            loss_exponent,
            carrier_freq,
            shadowing_db,
        )?;
        Ok(CommChannelParams {
            large_scale_fading: 10f64.powf(-pl / 10.0),
            path_loss_db: pl,
            shadowing_db,
            loss_exponent,
            ref_distance,
        })
    }
}

/// Close-in log-distance path loss with shadowing.
pub fn path_loss_db(
    dist: f64,
    ref_distance: f64,
    loss_exponent: f64,
    carrier_freq: f64,
    shadowing_db: f64,
) -> Result<f64> {
    if !(ref_distance > 0.0) {
        return Err(Error::domain("reference distance must be positive"));
    }
    if !(dist >= ref_distance) {
        return Err(Error::domain(format!(
            "distance {dist} m is below the reference distance {ref_distance} m"
        )));
    }
    let free_space = 20.0 * (4.0 * PI * carrier_freq * ref_distance / SPEED_OF_LIGHT).log10();
    Ok(free_space + 10.0 * loss_exponent * (dist / ref_distance).log10() + shadowing_db)
}

/// Squared beamformer norms |w_R|² and |w_C|².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamGains {
    pub radar: f64,
    pub comm: f64,
}

impl Default for BeamGains {
    fn default() -> Self {
        BeamGains {
            radar: 1.0,
            comm: 1.0,
        }
    }
}

/// Response of one path after matched transmit and receive beams toward the
/// departure angle, without its fading coefficient. For the direct path this
/// has magnitude √(N_R N_T).
pub fn path_response(
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    departure_angle: f64,
    doppler: f64,
    path: &Path,
    n: usize,
) -> Complex64 {
    let look = steering_rx(grid, array, n, departure_angle);
    let arrival = steering_rx(grid, array, n, path.aoa);
    let combine = look.dotc(&arrival) / (array.n_rx as f64).sqrt();
    delay_phase(grid.freq(n), doppler, path.delay) * combine * (array.n_tx as f64).sqrt()
}

/// Per-unit-power sensing SINR of subcarrier `n`. Indirect echoes combine
/// coherently, which makes the interference frequency selective.
pub fn sinr_rad(
    array: &ArrayConfig,
    grid: &SubcarrierGrid,
    paths: &PathSet,
    n: usize,
    beam_gain: f64,
    noise_var: f64,
) -> f64 {
    let resp = |p: &Path| {
        p.fading * path_response(grid, array, paths.departure_angle, paths.doppler, p, n)
    };
    let signal = resp(paths.direct()).norm_sqr() * beam_gain;
    let interference: Complex64 = paths.indirect().iter().map(resp).sum();
    signal / (interference.norm_sqr() * beam_gain + noise_var)
}

/// Per-unit-power downlink SINR of subcarrier `n` at the single-antenna UE.
pub fn sinr_com(
    array: &ArrayConfig,
    grid: &SubcarrierGrid,
    large_scale_fading: f64,
    paths: &PathSet,
    n: usize,
    gains: BeamGains,
    noise_var: f64,
) -> f64 {
    let f = grid.freq(n);
    let array_gain = array.n_tx as f64;
    let leak: Complex64 = paths
        .paths
        .iter()
        .map(|p| p.fading * delay_phase(f, paths.doppler, p.delay))
        .sum();
    let signal = large_scale_fading * array_gain * gains.comm;
    signal / (noise_var + leak.norm_sqr() * array_gain * gains.radar)
}
