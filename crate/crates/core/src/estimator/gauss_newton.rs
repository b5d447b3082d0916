//! Real-parameter Gauss-Newton steps for complex residuals.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;

use super::ls::{IdrProjector, Profile};
use super::model::{jacobian, model_echo, ModelPoint};
use super::{EquivalentChannel, UEState};
use crate::error::{Error, Result};
use crate::geometry::{ArrayConfig, SubcarrierGrid};
use crate::waveform::TxWaveform;

/// Solves Re(J Jᴴ) κ = Re(J conj(r)) for a p × L Jacobian `jac`
/// (row i holds ∂f/∂θ_i) and residual `r`.
pub fn gauss_newton_direction(
    jac: &DMatrix<Complex64>,
    residual: &DVector<Complex64>,
) -> Result<DVector<f64>> {
    if jac.ncols() != residual.len() {
        return Err(Error::domain("Jacobian and residual lengths differ"));
    }
    let p = jac.nrows();
    let mut normal = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for i in 0..p {
        let ri = jac.row(i);
        for k in i..p {
            let v = ri
                .iter()
                .zip(jac.row(k).iter())
                .map(|(a, b)| (a * b.conj()).re)
                .sum::<f64>();
            normal[(i, k)] = v;
            normal[(k, i)] = v;
        }
        rhs[i] = ri
            .iter()
            .zip(residual.iter())
            .map(|(a, r)| (a * r.conj()).re)
            .sum();
    }
    let chol = normal.cholesky().ok_or(Error::Singular {
        context: "Gauss-Newton normal equations",
    })?;
    Ok(chol.solve(&rhs))
}

#[derive(Debug, Clone)]
pub struct GaussNewtonStep {
    pub step: Vector3<f64>,
    pub residual: DVector<Complex64>,
}

/// One surrogate-minimising step at `state` with the channel held fixed.
pub fn gauss_newton_step(
    state: &UEState,
    h: &EquivalentChannel,
    y: &DVector<Complex64>,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<GaussNewtonStep> {
    let residual = y - model_echo(state, h, grid, array, waveform)?;
    let jac = jacobian(state, h, grid, array, waveform)?;
    let k = gauss_newton_direction(&jac, &residual)?;
    Ok(GaussNewtonStep {
        step: Vector3::new(k[0], k[1], k[2]),
        residual,
    })
}

/// Linearised cost ‖r − Jᵀ(U − Û)‖² around `base`, with r and J taken at `base`.
pub fn surrogate_cost(
    candidate: &UEState,
    base: &UEState,
    h: &EquivalentChannel,
    y: &DVector<Complex64>,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<f64> {
    let residual = y - model_echo(base, h, grid, array, waveform)?;
    let jac = jacobian(base, h, grid, array, waveform)?;
    let delta = candidate.to_vector() - base.to_vector();
    let mut lin = residual;
    for i in 0..3 {
        if delta[i] != 0.0 {
            lin -= jac.row(i).transpose() * Complex64::new(delta[i], 0.0);
        }
    }
    Ok(lin.norm_squared())
}

/// Step with the Jacobian projected off the column space of F(U) (variable
/// projection). Accounts for the channel re-fit that follows every move.
pub(crate) fn projected_step(
    state: &UEState,
    point: &ModelPoint,
    profile: &Profile,
    grid: &SubcarrierGrid,
    array: &ArrayConfig,
    waveform: &TxWaveform,
) -> Result<Vector3<f64>> {
    let jac = jacobian(state, &profile.channel, grid, array, waveform)?;
    let proj = IdrProjector::new(point.layout, &point.s);
    let gp = &profile.g_perp;
    let gp_energy = gp.norm_squared();
    let mut jp = DMatrix::zeros(3, jac.ncols());
    for i in 0..3 {
        let mut row = proj.reject(&jac.row(i).transpose());
        if gp_energy > 0.0 {
            let c = gp.dotc(&row) / gp_energy;
            row -= gp * c;
        }
        jp.set_row(i, &row.transpose());
    }
    let k = gauss_newton_direction(&jp, &profile.residual)?;
    Ok(Vector3::new(k[0], k[1], k[2]))
}
