//! Lag autocovariance surfaces and the kernel-weighted long-run covariance.
//!
//! ```text
//! γ̂_ℓ(u,v) = (1/n) Σ_t [X_t(u) − X̄(u)][X_{t+ℓ}(v) − X̄(v)]
//! Ĉ(u,v)   = Σ_ℓ W(ℓ/η) γ̂_ℓ(u,v)
//! ```
//!
//! The bandwidth `η` is either fixed or chosen by a two-stage pilot plug-in
//! rule. The final surface is symmetrized and its negative eigenvalues are
//! clipped to zero.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::{center, AgeGrid, FunctionalTimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovKind {
    LagCov,
    LongRun,
}

/// A covariance-type kernel `C(u_i, u_j)` on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CovSurface {
    pub values: DMatrix<f64>,
    pub grid: AgeGrid,
    pub kind: CovKind,
    /// Bandwidth used for a long-run surface.
    pub bandwidth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Bartlett,
    Parzen,
    /// Trapezoidal flat-top: 1 on `|x| ≤ 1`, decaying linearly to 0 at `|x| = 2`.
    FlatTop,
}

impl Kernel {
    pub fn order(self) -> u32 {
        match self {
            Kernel::Bartlett => 1,
            Kernel::Parzen | Kernel::FlatTop => 2,
        }
    }

    pub fn weight(self, x: f64) -> f64 {
        let a = x.abs();
        match self {
            Kernel::Bartlett => (1.0 - a).max(0.0),
            Kernel::Parzen => {
                if a <= 0.5 {
                    1.0 - 6.0 * a * a + 6.0 * a * a * a
                } else if a <= 1.0 {
                    2.0 * (1.0 - a).powi(3)
                } else {
                    0.0
                }
            }
            Kernel::FlatTop => {
                if a <= 1.0 {
                    1.0
                } else if a <= 2.0 {
                    2.0 - a
                } else {
                    0.0
                }
            }
        }
    }

    /// Largest lag with a (possibly) nonzero weight.
    pub fn max_lag(self, eta: f64, n: usize) -> usize {
        let cap = n.saturating_sub(1);
        match self {
            Kernel::Bartlett | Kernel::Parzen => (eta.floor() as usize).min(cap),
            Kernel::FlatTop => ((2.0 * eta).ceil() as usize).min(cap),
        }
    }

    /// Constant of the plug-in rule: `(q k_q² / ∫W²)^{1/(2q+1)}`.
    fn plugin_constant(self) -> f64 {
        match self {
            Kernel::Bartlett => 1.5f64.powf(1.0 / 3.0),
            Kernel::Parzen => (2.0 * 36.0 / 0.539285f64).powf(0.2),
            // no finite-order bias term; the rate alone sets the bandwidth
            Kernel::FlatTop => 1.0,
        }
    }
}

impl std::str::FromStr for Kernel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bartlett" => Ok(Kernel::Bartlett),
            "parzen" => Ok(Kernel::Parzen),
            "flat_top" | "flat-top" => Ok(Kernel::FlatTop),
            other => Err(Error::Parameter(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: Kernel,
    pub bandwidth: Bandwidth,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            kind: Kernel::Bartlett,
            bandwidth: Bandwidth::Auto,
        }
    }
}

/// Centered data matrix reused across lags.
fn centered(fts: &FunctionalTimeSeries) -> DMatrix<f64> {
    center(fts).0.values().clone()
}

fn autocov_centered(xc: &DMatrix<f64>, lag: isize) -> DMatrix<f64> {
    let n = xc.nrows();
    let l = lag.unsigned_abs();
    let m = n - l;
    let (a, b) = if lag >= 0 {
        (xc.rows(0, m), xc.rows(l, m))
    } else {
        (xc.rows(l, m), xc.rows(0, m))
    };
    (a.transpose() * b) / n as f64
}

/// Sample lag-`ℓ` autocovariance surface (divisor `n` for every lag).
pub fn autocov(fts: &FunctionalTimeSeries, lag: isize) -> Result<CovSurface> {
    if lag.unsigned_abs() >= fts.n() {
        return Err(Error::Range(format!(
            "lag {lag} needs more than {} curves",
            fts.n()
        )));
    }
    Ok(CovSurface {
        values: autocov_centered(&centered(fts), lag),
        grid: fts.grid().clone(),
        kind: CovKind::LagCov,
        bandwidth: None,
    })
}

/// `Σ_{|ℓ| ≤ max_lag} weight(ℓ) γ̂_ℓ`, accumulated in the fixed order
/// `0, −1, 1, −2, 2, …`. No symmetrization or clipping.
pub fn lag_window_sum(
    fts: &FunctionalTimeSeries,
    max_lag: usize,
    weight: impl Fn(isize) -> f64,
) -> DMatrix<f64> {
    let xc = centered(fts);
    lag_window_sum_centered(&xc, max_lag.min(fts.n() - 1), weight)
}

fn lag_window_sum_centered(
    xc: &DMatrix<f64>,
    max_lag: usize,
    weight: impl Fn(isize) -> f64,
) -> DMatrix<f64> {
    let mut acc = autocov_centered(xc, 0) * weight(0);
    for l in 1..=max_lag as isize {
        let g = autocov_centered(xc, l);
        let (wn, wp) = (weight(-l), weight(l));
        if wn != 0.0 {
            acc += g.transpose() * wn;
        }
        if wp != 0.0 {
            acc += g * wp;
        }
    }
    acc
}

/// Symmetrizes and clips negative eigenvalues to zero.
pub fn symmetrize_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return sym;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Kernel sandwich estimate of the long-run covariance surface.
pub fn long_run_cov(fts: &FunctionalTimeSeries, kernel: &KernelSpec) -> Result<CovSurface> {
    if fts.n() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: fts.n(),
        });
    }
    let eta = match kernel.bandwidth {
        Bandwidth::Fixed(eta) => {
            if !(eta > 0.0) || !eta.is_finite() {
                return Err(Error::Parameter(format!("bandwidth must be positive, got {eta}")));
            }
            eta
        }
        Bandwidth::Auto => plugin_bandwidth(fts, kernel.kind)?,
    };
    let xc = centered(fts);
    let k = kernel.kind;
    let raw = lag_window_sum_centered(&xc, k.max_lag(eta, fts.n()), |l| k.weight(l as f64 / eta));
    Ok(CovSurface {
        values: symmetrize_psd(&raw),
        grid: fts.grid().clone(),
        kind: CovKind::LongRun,
        bandwidth: Some(eta),
    })
}

/// Hilbert–Schmidt norm of a surface under the grid quadrature.
pub fn hs_norm(m: &DMatrix<f64>, grid: &AgeGrid) -> f64 {
    let w = grid.quadrature_weights();
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += w[i] * w[j] * m[(i, j)] * m[(i, j)];
        }
    }
    s.sqrt()
}

/// Two-stage pilot plug-in bandwidth, floored at 1.
///
/// With pilot `η₀ = n^{1/5}`, `F₀ = ‖Σ_{|ℓ|≤η₀} γ̂_ℓ‖` and
/// `F_q = ‖Σ_{|ℓ|≤η₀} |ℓ|^q γ̂_ℓ‖`, returns
/// `c_W (F_q²/F₀²)^{1/(2q+1)} n^{1/(2q+1)}`.
pub fn plugin_bandwidth(fts: &FunctionalTimeSeries, kernel: Kernel) -> Result<f64> {
    let n = fts.n();
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    let q = kernel.order() as i32;
    let pilot = (n as f64).powf(0.2);
    let max_lag = (pilot.floor() as usize).min(n - 1);
    let xc = centered(fts);
    let f0 = hs_norm(&lag_window_sum_centered(&xc, max_lag, |_| 1.0), fts.grid());
    let fq = hs_norm(
        &lag_window_sum_centered(&xc, max_lag, |l| (l.unsigned_abs() as f64).powi(q)),
        fts.grid(),
    );
    if !(f0 > 1e-300) {
        log::warn!("long-run covariance pilot is zero; using the bandwidth floor");
        return Ok(1.0);
    }
    let rate = 1.0 / (2 * q + 1) as f64;
    let eta = kernel.plugin_constant() * ((fq * fq) / (f0 * f0)).powf(rate) * (n as f64).powf(rate);
    Ok(if eta.is_finite() { eta.max(1.0) } else { 1.0 })
}
