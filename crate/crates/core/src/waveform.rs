//! Transmit vectors, echo synthesis and the stacked observation layout.
//!
//! Echo entries are stacked subcarrier-major, then symbol, then receive
//! antenna. Internally all three indices are 0-based; subcarrier `sub`
//! corresponds to the physical subcarrier number `sub + 1`.
//!
//! The direct reflection carries the slow-time Doppler rotation
//! `exp(j2π f_d m T_sym)` across symbols; indirect reflections are treated as
//! symbol-invariant so that a per-(subcarrier, antenna) coefficient captures
//! them exactly.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::{
    delay_phase, doppler_shift, spatial_freq, steering, ArrayConfig, Path, PathSet, Point,
    SubcarrierGrid,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EchoLayout {
    pub n_sub: usize,
    pub n_sym: usize,
    pub n_rx: usize,
}

impl EchoLayout {
    pub fn new(grid: &SubcarrierGrid, array: &ArrayConfig) -> Self {
        EchoLayout {
            n_sub: grid.n_coherent,
            n_sym: grid.n_symbols,
            n_rx: array.n_rx,
        }
    }

    pub fn len(&self) -> usize {
        self.n_sub * self.n_sym * self.n_rx
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, sub: usize, sym: usize, rx: usize) -> usize {
        (sub * self.n_sym + sym) * self.n_rx + rx
    }

    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let rx = idx % self.n_rx;
        let rest = idx / self.n_rx;
        (rest / self.n_sym, rest % self.n_sym, rx)
    }

    /// Number of equivalent indirect-channel coefficients, one per (subcarrier, antenna).
    pub fn idr_len(&self) -> usize {
        self.n_sub * self.n_rx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EchoTensor {
    pub layout: EchoLayout,
    pub data: DVector<Complex64>,
}

impl EchoTensor {
    pub fn new(layout: EchoLayout, data: DVector<Complex64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(Error::domain(format!(
                "echo length {} does not match layout length {}",
                data.len(),
                layout.len()
            )));
        }
        Ok(EchoTensor { layout, data })
    }

    pub fn get(&self, sub: usize, sym: usize, rx: usize) -> Complex64 {
        self.data[self.layout.index(sub, sym, rx)]
    }
}

/// Default transmit vector: (1/√M) exp(-jπ(t-1)) on every subcarrier and symbol.
pub fn tx_vector(n_tx: usize, n_symbols: usize) -> DVector<Complex64> {
    let scale = 1.0 / (n_symbols as f64).sqrt();
    DVector::from_fn(n_tx, |t, _| Complex64::from_polar(scale, -PI * t as f64))
}

/// Effective transmit vectors W·s, one per (subcarrier, symbol).
#[derive(Debug, Clone, PartialEq)]
pub struct TxWaveform {
    n_tx: usize,
    n_sym: usize,
    vectors: Vec<DVector<Complex64>>,
}

impl TxWaveform {
    pub fn equivalent(grid: &SubcarrierGrid, array: &ArrayConfig) -> Self {
        let x = tx_vector(array.n_tx, grid.n_symbols);
        TxWaveform {
            n_tx: array.n_tx,
            n_sym: grid.n_symbols,
            vectors: vec![x; grid.n_coherent * grid.n_symbols],
        }
    }

    pub fn from_fn<F>(grid: &SubcarrierGrid, array: &ArrayConfig, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> DVector<Complex64>,
    {
        let mut vectors = Vec::with_capacity(grid.n_coherent * grid.n_symbols);
        for sub in 0..grid.n_coherent {
            for sym in 0..grid.n_symbols {
                let v = f(sub, sym);
                if v.len() != array.n_tx {
                    return Err(Error::domain(format!(
                        "transmit vector has {} entries, array has {} elements",
                        v.len(),
                        array.n_tx
                    )));
                }
                vectors.push(v);
            }
        }
        Ok(TxWaveform {
            n_tx: array.n_tx,
            n_sym: grid.n_symbols,
            vectors,
        })
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn vector(&self, sub: usize, sym: usize) -> &DVector<Complex64> {
        &self.vectors[sub * self.n_sym + sym]
    }

    fn check(&self, grid: &SubcarrierGrid, array: &ArrayConfig) -> Result<()> {
        if self.n_tx != array.n_tx
            || self.n_sym != grid.n_symbols
            || self.vectors.len() != grid.n_coherent * grid.n_symbols
        {
            return Err(Error::domain(
                "waveform shape does not match grid and array",
            ));
        }
        Ok(())
    }
}

/// Beamformed transmit scalar a_n^H(φ)·x_{n,m} for every (subcarrier, symbol),
/// indexed `sub * n_sym + sym`, with `u = cos φ`.
pub(crate) fn transmit_scalars(
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
    u: f64,
) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(grid.n_coherent * grid.n_symbols);
    for sub in 0..grid.n_coherent {
        let a = steering(array.n_tx, spatial_freq(grid, array, sub + 1), u);
        for sym in 0..grid.n_symbols {
            out.push(a.dotc(waveform.vector(sub, sym)));
        }
    }
    out
}

/// Slow-time Doppler rotation of symbol `sym` (0-based).
pub(crate) fn slow_time_phase(doppler: f64, sym: usize, symbol_period: f64) -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * PI * doppler * sym as f64 * symbol_period)
}

/// Noiseless direct-reflection echo of a UE at `position` moving at `velocity`.
pub fn synthesize_dr(
    position: &Point,
    velocity: f64,
    alpha0: Complex64,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DVector<Complex64>> {
    waveform.check(grid, array)?;
    let dp = array.direct_path(position)?;
    let fd = doppler_shift(velocity, array.carrier_freq);
    let u = dp.aoa.cos();
    let s = transmit_scalars(grid, array, waveform, u);
    let layout = EchoLayout::new(grid, array);
    let t_sym = grid.symbol_period();
    let mut out = DVector::zeros(layout.len());
    for sub in 0..layout.n_sub {
        let n = sub + 1;
        let b = steering(array.n_rx, spatial_freq(grid, array, n), u);
        let fast = delay_phase(grid.freq(n), fd, dp.delay);
        for sym in 0..layout.n_sym {
            let common = fast * slow_time_phase(fd, sym, t_sym) * s[sub * layout.n_sym + sym];
            for rx in 0..layout.n_rx {
                out[layout.index(sub, sym, rx)] = alpha0 * (common * b[rx]);
            }
        }
    }
    Ok(out)
}

/// Noiseless indirect-reflection echo summed over `paths`.
pub fn synthesize_idr(
    paths: &[Path],
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    departure_angle: f64,
    doppler: f64,
    waveform: &TxWaveform,
) -> Result<DVector<Complex64>> {
    waveform.check(grid, array)?;
    let layout = EchoLayout::new(grid, array);
    let s = transmit_scalars(grid, array, waveform, departure_angle.cos());
    let mut out = DVector::zeros(layout.len());
    for path in paths {
        for sub in 0..layout.n_sub {
            let n = sub + 1;
            let b = steering(array.n_rx, spatial_freq(grid, array, n), path.aoa.cos());
            let gain = path.fading * delay_phase(grid.freq(n), doppler, path.delay);
            for sym in 0..layout.n_sym {
                let g = gain * s[sub * layout.n_sym + sym];
                for rx in 0..layout.n_rx {
                    out[layout.index(sub, sym, rx)] += g * b[rx];
                }
            }
        }
    }
    Ok(out)
}

/// Equivalent indirect channel: the per-(subcarrier, antenna) sum of all
/// indirect paths, indexed `sub * n_rx + rx`.
pub fn idr_equivalent(
    paths: &[Path],
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    doppler: f64,
) -> DVector<Complex64> {
    let mut out = DVector::zeros(grid.n_coherent * array.n_rx);
    for path in paths {
        for sub in 0..grid.n_coherent {
            let n = sub + 1;
            let b = steering(array.n_rx, spatial_freq(grid, array, n), path.aoa.cos());
            let gain = path.fading * delay_phase(grid.freq(n), doppler, path.delay);
            for rx in 0..array.n_rx {
                out[sub * array.n_rx + rx] += gain * b[rx];
            }
        }
    }
    out
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let sd = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sd * re, sd * im)
}

/// Full echo: direct reflection from `(position, velocity)` using the fading
/// of `paths.direct()`, indirect reflections from `paths.indirect()`, plus
/// noise. Angle and Doppler always follow the UE state.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_echo<R: Rng + ?Sized>(
    position: &Point,
    velocity: f64,
    paths: &PathSet,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
    noise_var: f64,
    rng: &mut R,
) -> Result<EchoTensor> {
    if !(noise_var >= 0.0) {
        return Err(Error::domain("noise variance must be non-negative"));
    }
    let dp = array.direct_path(position)?;
    let fd = doppler_shift(velocity, array.carrier_freq);
    let mut data = synthesize_dr(
        position,
        velocity,
        paths.direct().fading,
        grid,
        array,
        waveform,
    )?;
    data += synthesize_idr(paths.indirect(), grid, array, dp.aoa, fd, waveform)?;
    if noise_var > 0.0 {
        for z in data.iter_mut() {
            *z += complex_gaussian(rng, noise_var);
        }
    }
    EchoTensor::new(EchoLayout::new(grid, array), data)
}

/// One downlink sample at the single-antenna UE on subcarrier `sub`, symbol `sym`.
#[allow(clippy::too_many_arguments)]
pub fn received_comm_sample<R: Rng + ?Sized>(
    large_scale_fading: f64,
    paths: &PathSet,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
    noise_var: f64,
    rng: &mut R,
    sub: usize,
    sym: usize,
) -> Complex64 {
    let n = sub + 1;
    let a = steering(
        array.n_tx,
        spatial_freq(grid, array, n),
        paths.departure_angle.cos(),
    );
    let s = a.dotc(waveform.vector(sub, sym));
    let interference: Complex64 = paths
        .indirect()
        .iter()
        .map(|p| p.fading * delay_phase(grid.freq(n), paths.doppler, p.delay))
        .sum();
    let mut y = large_scale_fading.sqrt() * s + interference * s;
    if noise_var > 0.0 {
        y += complex_gaussian(rng, noise_var);
    }
    y
}
