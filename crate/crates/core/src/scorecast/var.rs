//! Vector autoregression on a block of score series, with the lag order
//! chosen by the Hurvich–Tsai corrected criterion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarModel {
    pub p: usize,
    /// `A_1..A_p`, each `K × K`.
    pub coefs: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
    /// Residual covariance `E'E / T`.
    pub sigma: DMatrix<f64>,
    pub aicc: f64,
    /// Observed `n × K` block.
    pub data: DMatrix<f64>,
}

struct Ols {
    coefs: Vec<DMatrix<f64>>,
    intercept: DVector<f64>,
    sigma: DMatrix<f64>,
    rank_deficient: bool,
}

/// Least squares on rows `start..n`, regressing on a constant and `p` lags.
fn ols(data: &DMatrix<f64>, p: usize, start: usize) -> Result<Ols> {
    let (n, k) = data.shape();
    let t = n - start;
    let cols = 1 + k * p;
    let x = DMatrix::from_fn(t, cols, |r, c| {
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / k + 1;
            data[(start + r - lag, (c - 1) % k)]
        }
    });
    let y = data.rows(start, t).into_owned();
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * cols.max(t) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd
        .solve(&y, tol)
        .map_err(|e| Error::Numerical(format!("VAR least squares failed: {e}")))?;
    let resid = &y - &x * &beta;
    let sigma = resid.transpose() * &resid / t as f64;
    let intercept = beta.row(0).transpose();
    let coefs = (0..p)
        .map(|l| beta.rows(1 + l * k, k).transpose())
        .collect();
    Ok(Ols {
        coefs,
        intercept,
        sigma,
        rank_deficient: rank < cols,
    })
}

/// `ln det Σ` with eigenvalues floored relative to the data scale.
fn log_det(sigma: &DMatrix<f64>, scale: f64) -> f64 {
    let floor = 1e-24 * scale.max(1e-300);
    sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.max(floor).ln())
        .sum()
}

impl VarModel {
    /// Least-squares VAR(p) on the full sample.
    pub fn fit(data: &DMatrix<f64>, p: usize) -> Result<Self> {
        let (n, k) = data.shape();
        if p == 0 || k == 0 {
            return Err(Error::Parameter("VAR needs p ≥ 1 and at least one series".into()));
        }
        if n <= k * p + 1 {
            return Err(Error::InsufficientData { needed: k * p + 2, got: n });
        }
        let fit = ols(data, p, p)?;
        let t = (n - p) as f64;
        let scale = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
        let npar = (k * k * p + k) as f64;
        let denom = t - (k * p + k + 1) as f64;
        let aicc = if denom > 0.0 {
            t * log_det(&fit.sigma, scale) + 2.0 * t * npar / denom
        } else {
            f64::INFINITY
        };
        Ok(Self {
            p,
            coefs: fit.coefs,
            intercept: fit.intercept,
            sigma: fit.sigma,
            aicc,
            data: data.clone(),
        })
    }

    pub fn k(&self) -> usize {
        self.data.ncols()
    }

    fn step(&self, lags: &[DVector<f64>]) -> DVector<f64> {
        let mut y = self.intercept.clone();
        for (a, x) in self.coefs.iter().zip(lags) {
            y += a * x;
        }
        y
    }

    /// Forecasts rows `origin + 1 ..= origin + h` from the history up to
    /// `origin`; pre-sample lags are replaced by the column means.
    fn forecast_from(&self, origin: usize, h: usize, means: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut lags: Vec<DVector<f64>> = (0..self.p)
            .map(|l| {
                if origin >= l {
                    self.data.row(origin - l).transpose()
                } else {
                    means.clone()
                }
            })
            .collect();
        let mut out = Vec::with_capacity(h);
        for _ in 0..h {
            let next = self.step(&lags);
            lags.rotate_right(1);
            lags[0] = next.clone();
            out.push(next);
        }
        out
    }

    fn column_means(&self) -> DVector<f64> {
        self.data.row_mean().transpose()
    }

    /// `h × K` point forecasts.
    pub fn forecast(&self, h: usize) -> Result<DMatrix<f64>> {
        if h == 0 {
            return Err(Error::Range("forecast horizon must be positive".into()));
        }
        let rows = self.forecast_from(self.data.nrows() - 1, h, &self.column_means());
        Ok(DMatrix::from_fn(h, self.k(), |i, j| rows[i][j]))
    }

    /// In-sample errors indexed `[h − 1][k]`, each of length `n − h`.
    pub fn insample_errors_all(&self, h_max: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let (n, k) = self.data.shape();
        if h_max == 0 || h_max >= n {
            return Err(Error::Range(format!("horizon {h_max} must lie in 1..{n}")));
        }
        let means = self.column_means();
        let mut out = vec![vec![Vec::new(); k]; h_max];
        for origin in 0..n - 1 {
            let reach = h_max.min(n - 1 - origin);
            for (i, f) in self.forecast_from(origin, reach, &means).iter().enumerate() {
                for c in 0..k {
                    out[i][c].push(self.data[(origin + 1 + i, c)] - f[c]);
                }
            }
        }
        Ok(out)
    }
}

/// Chooses `p ∈ 1..=p_max` on the common sample `p_max..n`, then refits the
/// winner on the full sample.
pub fn fit_var_auto(data: &DMatrix<f64>, p_max: usize) -> Result<VarModel> {
    let (n, k) = data.shape();
    if k == 0 {
        return Err(Error::Parameter("VAR needs at least one series".into()));
    }
    if n <= k + 10 {
        return Err(Error::InsufficientData { needed: k + 11, got: n });
    }
    let mut p_max = p_max.max(1);
    while p_max > 1 && n <= k * p_max + 10 {
        p_max -= 1;
    }
    while p_max > 1 && ols(data, p_max, p_max)?.rank_deficient {
        log::warn!("singular VAR regressors at order {p_max}; reducing the maximum order");
        p_max -= 1;
    }
    let t = (n - p_max) as f64;
    let scale = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
    let mut best = (1, f64::INFINITY);
    for p in 1..=p_max {
        let fit = ols(data, p, p_max)?;
        let npar = (k * k * p + k) as f64;
        let denom = t - (k * p + k + 1) as f64;
        if denom <= 0.0 {
            continue;
        }
        let crit = t * log_det(&fit.sigma, scale) + 2.0 * t * npar / denom;
        if crit < best.1 {
            best = (p, crit);
        }
    }
    VarModel::fit(data, best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn var1_recovery() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, -0.1, 0.3]);
        let c = DVector::from_vec(vec![1.0, -0.5]);
        let mut rows = vec![DVector::from_vec(vec![2.0, -1.0])];
        for t in 1..600 {
            let e = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let next = &c + &a * &rows[t - 1] + e;
            rows.push(next);
        }
        let data = DMatrix::from_fn(600, 2, |i, j| rows[i][j]);
        let m = VarModel::fit(&data, 1).unwrap();
        assert!((&m.coefs[0] - &a).amax() < 0.1);
        assert!((&m.intercept - &c).amax() < 0.25);
        assert!((&m.sigma - DMatrix::<f64>::identity(2, 2)).amax() < 0.15);
        assert_eq!(m.insample_errors_all(3).unwrap()[2][1].len(), 597);
    }

    #[test]
    fn one_step_forecast_by_hand() {
        let data = DMatrix::from_row_slice(14, 1, &[1.0, 2.0, 1.5, 3.0, 2.0, 2.5, 4.0, 3.0, 3.5, 5.0, 4.0, 4.5, 6.0, 5.0]);
        let m = VarModel::fit(&data, 2).unwrap();
        let f = m.forecast(2).unwrap();
        let want1 = m.intercept[0] + m.coefs[0][(0, 0)] * 5.0 + m.coefs[1][(0, 0)] * 6.0;
        assert!((f[(0, 0)] - want1).abs() < 1e-12);
        let want2 = m.intercept[0] + m.coefs[0][(0, 0)] * want1 + m.coefs[1][(0, 0)] * 5.0;
        assert!((f[(1, 0)] - want2).abs() < 1e-12);
        assert!(m.forecast(0).is_err());
    }

    #[test]
    fn trend_direction_is_kept() {
        let data = DMatrix::from_fn(40, 2, |t, j| if j == 0 { 0.5 * t as f64 } else { -0.2 * t as f64 });
        let m = fit_var_auto(&data, 5).unwrap();
        let f = m.forecast(3).unwrap();
        assert!(f[(0, 0)] > data[(39, 0)] && f[(2, 0)] > f[(0, 0)]);
        assert!(f[(0, 1)] < data[(39, 1)] && f[(2, 1)] < f[(0, 1)]);
    }

    #[test]
    fn precondition() {
        let data = DMatrix::from_fn(11, 1, |t, _| t as f64);
        assert!(fit_var_auto(&data, 5).is_err());
    }
}
