//! Coefficient matrix F(U) = [G(U), F_pos(Q)] and the analytic Jacobian of F(U)·H.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{EquivalentChannel, UEState};
use crate::error::{Error, Result};
use crate::geometry::{
    delay_phase, doppler_shift, spatial_freq, steering, ArrayConfig, SubcarrierGrid, SPEED_OF_LIGHT,
};
use crate::waveform::{slow_time_phase, synthesize_dr, transmit_scalars, EchoLayout, TxWaveform};

/// Direct-reflection column G(U) of the coefficient matrix.
pub fn build_g(
    state: &UEState,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DVector<Complex64>> {
    synthesize_dr(
        &state.position,
        state.velocity,
        Complex64::new(1.0, 0.0),
        grid,
        array,
        waveform,
    )
}

/// Indirect block F_pos(Q): row (sub, sym, rx) holds a_n^H(φ)·x_{n,m} in column `sub * n_rx + rx`.
pub fn build_f_pos(
    position: &crate::geometry::Point,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DMatrix<Complex64>> {
    let dp = array.direct_path(position)?;
    let layout = EchoLayout::new(grid, array);
    let s = transmit_scalars(grid, array, waveform, dp.aoa.cos());
    let mut f = DMatrix::zeros(layout.len(), layout.idr_len());
    for sub in 0..layout.n_sub {
        for sym in 0..layout.n_sym {
            for rx in 0..layout.n_rx {
                f[(layout.index(sub, sym, rx), sub * layout.n_rx + rx)] =
                    s[sub * layout.n_sym + sym];
            }
        }
    }
    Ok(f)
}

/// Dense coefficient matrix with G(U) in column 0.
pub fn coefficient_matrix(
    state: &UEState,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DMatrix<Complex64>> {
    let g = build_g(state, grid, array, waveform)?;
    let fp = build_f_pos(&state.position, grid, array, waveform)?;
    let mut f = DMatrix::zeros(g.len(), fp.ncols() + 1);
    f.set_column(0, &g);
    f.columns_mut(1, fp.ncols()).copy_from(&fp);
    Ok(f)
}

/// Per-state quantities shared by the structured solver: G(U) and the transmit scalars.
#[derive(Debug, Clone)]
pub(crate) struct ModelPoint {
    pub layout: EchoLayout,
    pub g: DVector<Complex64>,
    pub s: Vec<Complex64>,
}

impl ModelPoint {
    pub fn new(
        state: &UEState,
        grid: &SubcarrierGrid,
        array: &ArrayConfig,
        waveform: &TxWaveform,
    ) -> Result<Self> {
        let dp = array.direct_path(&state.position)?;
        Ok(ModelPoint {
            layout: EchoLayout::new(grid, array),
            g: build_g(state, grid, array, waveform)?,
            s: transmit_scalars(grid, array, waveform, dp.aoa.cos()),
        })
    }

    /// F(U)·H without materialising F.
    pub fn apply(&self, h: &EquivalentChannel) -> DVector<Complex64> {
        let l = &self.layout;
        let mut out = &self.g * h.dr;
        for sub in 0..l.n_sub {
            for sym in 0..l.n_sym {
                let s = self.s[sub * l.n_sym + sym];
                for rx in 0..l.n_rx {
                    out[l.index(sub, sym, rx)] += s * h.idr[sub * l.n_rx + rx];
                }
            }
        }
        out
    }
}

/// F(U)·H evaluated from scratch.
pub fn model_echo(
    state: &UEState,
    h: &EquivalentChannel,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DVector<Complex64>> {
    Ok(ModelPoint::new(state, grid, array, waveform)?.apply(h))
}

/// Jacobian of U ↦ F(U)·H, rows ordered (x, y, v).
pub fn jacobian(
    state: &UEState,
    h: &EquivalentChannel,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<DMatrix<Complex64>> {
    let layout = EchoLayout::new(grid, array);
    if h.idr.len() != layout.idr_len() {
        return Err(Error::domain(
            "equivalent channel length does not match the layout",
        ));
    }
    let d = state.position - array.bs_position;
    let rho = d.norm();
    if !(rho > 0.0) {
        return Err(Error::domain("UE coincides with the base station"));
    }
    let e = array.array_axis;
    let u = d.dot(&e) / rho;
    let grad_u = e / rho - d * (d.dot(&e) / rho.powi(3));
    let tau0 = 2.0 * rho / SPEED_OF_LIGHT;
    let grad_tau = d * (2.0 / (SPEED_OF_LIGHT * rho));
    let fd = doppler_shift(state.velocity, array.carrier_freq);
    let dfd_dv = 2.0 * array.carrier_freq / SPEED_OF_LIGHT;
    let t_sym = grid.symbol_period();
    let j2pi = Complex64::new(0.0, 2.0 * PI);

    let mut jac = DMatrix::zeros(3, layout.len());
    for sub in 0..layout.n_sub {
        let n = sub + 1;
        let fnq = grid.freq(n);
        let kappa = spatial_freq(grid, array, n);
        let a = steering(array.n_tx, kappa, u);
        let b = steering(array.n_rx, kappa, u);
        let fast = delay_phase(fnq, fd, tau0);
        for sym in 0..layout.n_sym {
            let x = waveform.vector(sub, sym);
            let mut s = Complex64::new(0.0, 0.0);
            let mut ds = Complex64::new(0.0, 0.0);
            for t in 0..array.n_tx {
                let term = a[t].conj() * x[t];
                s += term;
                ds += term * (j2pi * (t as f64 * kappa));
            }
            let p = fast * slow_time_phase(fd, sym, t_sym);
            let dtau_factor = -j2pi * (fnq - fd);
            let dv_factor = j2pi * (dfd_dv * (tau0 + sym as f64 * t_sym));
            for rx in 0..layout.n_rx {
                let db = b[rx] * (-j2pi * (rx as f64 * kappa));
                let gval = p * b[rx] * s;
                let dg_du = p * (db * s + b[rx] * ds);
                let hidr = h.idr[sub * layout.n_rx + rx];
                let d_du = h.dr * dg_du + ds * hidr;
                let d_dtau = h.dr * gval * dtau_factor;
                let col = layout.index(sub, sym, rx);
                jac[(0, col)] = d_dtau * grad_tau.x + d_du * grad_u.x;
                jac[(1, col)] = d_dtau * grad_tau.y + d_du * grad_u.y;
                jac[(2, col)] = h.dr * gval * dv_factor;
            }
        }
    }
    Ok(jac)
}
