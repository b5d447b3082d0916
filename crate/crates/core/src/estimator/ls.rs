//! Least-squares estimation of the equivalent channel.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::model::ModelPoint;
use super::EquivalentChannel;
use crate::error::{Error, Result};
use crate::waveform::EchoLayout;

/// Condition number above which the normal equations are regularised.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Tikhonov weight relative to the mean diagonal of the normal matrix.
pub const TIKHONOV_SCALE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub channel: EquivalentChannel,
    pub regularized: bool,
    pub condition: f64,
}

/// Dense solve of the normal equations (FᴴF)Ĥ = Fᴴy via Cholesky.
pub fn estimate_channel_ls(f: &DMatrix<Complex64>, y: &DVector<Complex64>) -> Result<LsSolution> {
    if f.nrows() != y.len() {
        return Err(Error::domain(format!(
            "coefficient matrix has {} rows, observation has {}",
            f.nrows(),
            y.len()
        )));
    }
    if f.ncols() == 0 || f.nrows() < f.ncols() {
        return Err(Error::Singular {
            context: "channel least squares (underdetermined)",
        });
    }
    let mut normal = f.ad_mul(f);
    let rhs = f.ad_mul(y);
    let eig = normal.clone().symmetric_eigenvalues();
    let hi = eig.max();
    let lo = eig.min();
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let trace: f64 = normal.diagonal().iter().map(|z| z.re).sum();
    if !(trace > 0.0) || !trace.is_finite() {
        return Err(Error::Singular {
            context: "channel least squares (zero coefficient matrix)",
        });
    }
    let regularized = condition > CONDITION_LIMIT;
    if regularized {
        let ridge = TIKHONOV_SCALE * trace / f.ncols() as f64;
        log::warn!("channel LS condition {condition:.3e} exceeds limit; adding ridge {ridge:.3e}");
        for i in 0..normal.ncols() {
            normal[(i, i)] += ridge;
        }
    }
    let chol = normal.cholesky().ok_or(Error::Singular {
        context: "channel least squares",
    })?;
    let h = chol.solve(&rhs);
    Ok(LsSolution {
        channel: EquivalentChannel::from_stacked(&h),
        regularized,
        condition,
    })
}

/// Projection onto the indirect block of F, which has orthogonal columns:
/// column (sub, rx) is the transmit scalar sequence over symbols.
pub(crate) struct IdrProjector<'a> {
    layout: EchoLayout,
    s: &'a [Complex64],
    inv_energy: Vec<f64>,
}

impl<'a> IdrProjector<'a> {
    pub fn new(layout: EchoLayout, s: &'a [Complex64]) -> Self {
        let energy: Vec<f64> = (0..layout.n_sub)
            .map(|sub| {
                s[sub * layout.n_sym..(sub + 1) * layout.n_sym]
                    .iter()
                    .map(|z| z.norm_sqr())
                    .sum()
            })
            .collect();
        let peak = energy.iter().cloned().fold(0.0, f64::max);
        let inv_energy = energy
            .iter()
            .map(|&e| {
                if e > 1e-14 * peak && e > 0.0 {
                    1.0 / e
                } else {
                    0.0
                }
            })
            .collect();
        IdrProjector {
            layout,
            s,
            inv_energy,
        }
    }

    pub fn active_columns(&self) -> usize {
        self.inv_energy.iter().filter(|&&w| w > 0.0).count() * self.layout.n_rx
    }

    /// Least-squares coefficients of `v` on the indirect columns.
    pub fn coefficients(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let l = &self.layout;
        let mut out = DVector::zeros(l.idr_len());
        for sub in 0..l.n_sub {
            let w = self.inv_energy[sub];
            if w == 0.0 {
                continue;
            }
            for sym in 0..l.n_sym {
                let sc = self.s[sub * l.n_sym + sym].conj();
                for rx in 0..l.n_rx {
                    out[sub * l.n_rx + rx] += sc * v[l.index(sub, sym, rx)];
                }
            }
            for rx in 0..l.n_rx {
                out[sub * l.n_rx + rx] *= w;
            }
        }
        out
    }

    /// `v` minus its projection onto the indirect columns.
    pub fn reject(&self, v: &DVector<Complex64>) -> DVector<Complex64> {
        let c = self.coefficients(v);
        let l = &self.layout;
        let mut out = v.clone();
        for sub in 0..l.n_sub {
            for sym in 0..l.n_sym {
                let s = self.s[sub * l.n_sym + sym];
                for rx in 0..l.n_rx {
                    out[l.index(sub, sym, rx)] -= s * c[sub * l.n_rx + rx];
                }
            }
        }
        out
    }
}

/// Structured least squares at one model point, exploiting the orthogonal
/// indirect block. Equivalent to [`estimate_channel_ls`] on the dense matrix.
#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub channel: EquivalentChannel,
    pub residual: DVector<Complex64>,
    pub residual_norm: f64,
    /// Direct column with the indirect span removed.
    pub g_perp: DVector<Complex64>,
    pub regularized: bool,
}

pub(crate) fn solve_structured(point: &ModelPoint, y: &DVector<Complex64>) -> Result<Profile> {
    if y.len() != point.layout.len() {
        return Err(Error::domain(
            "observation length does not match the layout",
        ));
    }
    let proj = IdrProjector::new(point.layout, &point.s);
    let g_perp = proj.reject(&point.g);
    let y_perp = proj.reject(y);
    let gg = point.g.norm_squared();
    let gp = g_perp.norm_squared();
    if !(gg > 0.0) && proj.active_columns() == 0 {
        return Err(Error::Singular {
            context: "channel least squares (zero coefficient matrix)",
        });
    }
    let mut regularized = false;
    let mut denom = gp;
    if !(gp > gg / CONDITION_LIMIT) {
        let cols = (point.layout.idr_len() + 1) as f64;
        let trace = gg + point.layout.n_rx as f64 * total_energy(&point.s);
        denom = gp + TIKHONOV_SCALE * trace / cols;
        regularized = true;
        log::warn!("direct column nearly inside the indirect span; regularising");
    }
    let dr = if denom > 0.0 {
        g_perp.dotc(&y_perp) / denom
    } else {
        Complex64::new(0.0, 0.0)
    };
    let idr = proj.coefficients(&(y - &point.g * dr));
    let residual = &y_perp - &g_perp * dr;
    let residual_norm = residual.norm();
    Ok(Profile {
        channel: EquivalentChannel { dr, idr },
        residual,
        residual_norm,
        g_perp,
        regularized,
    })
}

fn total_energy(s: &[Complex64]) -> f64 {
    s.iter().map(|z| z.norm_sqr()).sum::<f64>()
}
