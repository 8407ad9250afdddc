//! KPSS stationarity statistic and the differencing-order search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 5% critical value of the level-stationarity KPSS test.
pub const KPSS_LEVEL_CRITICAL_5: f64 = 0.463;
/// 5% critical value of the trend-stationarity KPSS test.
pub const KPSS_TREND_CRITICAL_5: f64 = 0.146;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpssVariant {
    #[default]
    Level,
    Trend,
}

impl KpssVariant {
    pub fn critical_value(self) -> f64 {
        match self {
            KpssVariant::Level => KPSS_LEVEL_CRITICAL_5,
            KpssVariant::Trend => KPSS_TREND_CRITICAL_5,
        }
    }
}

impl std::str::FromStr for KpssVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level" => Ok(Self::Level),
            "trend" => Ok(Self::Trend),
            other => Err(Error::Parameter(format!("unknown KPSS variant '{other}' (level or trend)"))),
        }
    }
}

/// Bartlett truncation lag `floor(4 (n/100)^{1/4})`.
pub fn kpss_lag(n: usize) -> usize {
    (4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// `Σ S_t² / (n² σ̂²_LR)` with `S_t` the partial sums of the residuals from a
/// constant (or constant + trend) regression.
pub fn kpss_statistic(series: &[f64], trend: bool) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::InsufficientData { needed: 10, got: n });
    }
    let nf = n as f64;
    let mean = series.iter().sum::<f64>() / nf;
    let resid: Vec<f64> = if trend {
        let tbar = (nf + 1.0) / 2.0;
        let stt: f64 = (1..=n).map(|t| (t as f64 - tbar).powi(2)).sum();
        let sty: f64 = series
            .iter()
            .enumerate()
            .map(|(i, y)| (i as f64 + 1.0 - tbar) * (y - mean))
            .sum();
        let slope = sty / stt;
        series
            .iter()
            .enumerate()
            .map(|(i, y)| y - mean - slope * (i as f64 + 1.0 - tbar))
            .collect()
    } else {
        series.iter().map(|y| y - mean).collect()
    };
    let scale = series.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1.0);
    if resid.iter().all(|e| e.abs() <= 1e-12 * scale) {
        return Ok(0.0);
    }
    let lag = kpss_lag(n);
    let mut s2 = resid.iter().map(|e| e * e).sum::<f64>() / nf;
    for s in 1..=lag.min(n - 1) {
        let w = 1.0 - s as f64 / (lag as f64 + 1.0);
        let cov: f64 = (s..n).map(|t| resid[t] * resid[t - s]).sum::<f64>() / nf;
        s2 += 2.0 * w * cov;
    }
    let mut partial = 0.0;
    let mut eta = 0.0;
    for e in &resid {
        partial += e;
        eta += partial * partial;
    }
    Ok(eta / (nf * nf * s2))
}

pub(crate) fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Smallest `d ≤ max_d` whose `d`-times differenced series passes KPSS at 5%.
pub fn select_d(series: &[f64], max_d: usize, variant: KpssVariant) -> Result<usize> {
    if series.len() < 10 + max_d {
        return Err(Error::InsufficientData {
            needed: 10 + max_d,
            got: series.len(),
        });
    }
    let mut x = series.to_vec();
    for d in 0..=max_d {
        let stat = kpss_statistic(&x, variant == KpssVariant::Trend)?;
        if stat <= variant.critical_value() {
            return Ok(d);
        }
        if d < max_d {
            x = difference(&x);
        }
    }
    log::warn!("series still nonstationary after {max_d} differences");
    Ok(max_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_is_zero() {
        assert_eq!(kpss_statistic(&[4.2; 30], false).unwrap(), 0.0);
        assert_eq!(kpss_statistic(&[4.2; 30], true).unwrap(), 0.0);
        assert!(kpss_statistic(&[1.0; 9], false).is_err());
    }

    #[test]
    fn lag_rule() {
        assert_eq!(kpss_lag(100), 4);
        assert_eq!(kpss_lag(500), 5);
    }

    #[test]
    fn hand_computed_small_case() {
        // n = 10, lag 2; residuals of 0..9 around 4.5
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let e: Vec<f64> = x.iter().map(|v| v - 4.5).collect();
        let mut s2 = e.iter().map(|v| v * v).sum::<f64>() / 10.0;
        for s in 1..=2 {
            let c: f64 = (s..10).map(|t| e[t] * e[t - s]).sum::<f64>() / 10.0;
            s2 += 2.0 * (1.0 - s as f64 / 3.0) * c;
        }
        let mut acc = 0.0;
        let mut eta = 0.0;
        for v in &e {
            acc += v;
            eta += acc * acc;
        }
        let want = eta / (100.0 * s2);
        assert!((kpss_statistic(&x, false).unwrap() - want).abs() < 1e-12);
        // a pure trend has zero residual under the trend variant
        assert_eq!(kpss_statistic(&x, true).unwrap(), 0.0);
    }
}
