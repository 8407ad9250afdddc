//! Forecasting models for principal component score series: univariate
//! ARIMA or exponential smoothing per component, or one VAR per block.

pub mod arima;
pub mod ets;
pub mod kpss;
mod optim;
pub mod var;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arima::{fit_arima_auto, ArimaConfig, ArimaModel};
pub use ets::{fit_ets_auto, EtsForm, EtsModel};
pub use kpss::{kpss_statistic, select_d, KpssVariant, KPSS_LEVEL_CRITICAL_5, KPSS_TREND_CRITICAL_5};
pub use var::{fit_var_auto, VarModel};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreModelKind {
    #[default]
    Arima,
    Ets,
    Var,
}

impl FromStr for ScoreModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "arima" => Ok(Self::Arima),
            "ets" => Ok(Self::Ets),
            "var" => Ok(Self::Var),
            other => Err(Error::Parameter(format!("unknown score model '{other}'"))),
        }
    }
}

impl fmt::Display for ScoreModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Arima => "arima",
            Self::Ets => "ets",
            Self::Var => "var",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModelConfig {
    pub kind: ScoreModelKind,
    pub arima: ArimaConfig,
    pub var_max_order: usize,
}

impl Default for ScoreModelConfig {
    fn default() -> Self {
        Self {
            kind: ScoreModelKind::Arima,
            arima: ArimaConfig::default(),
            var_max_order: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum UnivariateModel {
    Arima(ArimaModel),
    Ets(EtsModel),
}

impl UnivariateModel {
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        match self {
            Self::Arima(m) => m.forecast(h),
            Self::Ets(m) => m.forecast(h),
        }
    }

    pub fn insample_errors_all(&self, h_max: usize) -> Result<Vec<Vec<f64>>> {
        match self {
            Self::Arima(m) => m.insample_errors_all(h_max),
            Self::Ets(m) => m.insample_errors_all(h_max),
        }
    }

    /// Short description such as `ARIMA(1,1,0)+c` or `ETS(AAN)`.
    pub fn label(&self) -> String {
        match self {
            Self::Arima(m) => format!(
                "ARIMA({},{},{}){}",
                m.p,
                m.d,
                m.q,
                if m.include_mean { "+c" } else { "" }
            ),
            Self::Ets(m) => format!("ETS({})", serde_json::to_value(m.form).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()),
        }
    }
}

/// Fitted forecaster for all score series of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "models", rename_all = "lowercase")]
pub enum StageForecaster {
    Univariate(Vec<UnivariateModel>),
    Var(VarModel),
}

/// Point forecasts `h × K` and in-sample error pools indexed `[h − 1][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreForecast {
    pub point: DMatrix<f64>,
    pub errors: Vec<Vec<Vec<f64>>>,
}

impl StageForecaster {
    /// Fits one model per column of `scores` (or one VAR for the block).
    pub fn fit(scores: &DMatrix<f64>, config: &ScoreModelConfig) -> Result<Self> {
        let k = scores.ncols();
        if k == 0 {
            return Ok(Self::Univariate(Vec::new()));
        }
        let column = |j: usize| scores.column(j).iter().copied().collect::<Vec<f64>>();
        match config.kind {
            ScoreModelKind::Arima => {
                let models = (0..k)
                    .into_par_iter()
                    .map(|j| fit_arima_auto(&column(j), &config.arima).map(UnivariateModel::Arima))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Univariate(models))
            }
            ScoreModelKind::Ets => {
                let models = (0..k)
                    .into_par_iter()
                    .map(|j| fit_ets_auto(&column(j)).map(UnivariateModel::Ets))
                    .collect::<Result<Vec<_>>>()?;
                Ok(Self::Univariate(models))
            }
            ScoreModelKind::Var => Ok(Self::Var(fit_var_auto(scores, config.var_max_order)?)),
        }
    }

    /// Number of score series.
    pub fn k(&self) -> usize {
        match self {
            Self::Univariate(v) => v.len(),
            Self::Var(m) => m.k(),
        }
    }

    /// `h × K` point forecasts.
    pub fn forecast(&self, h: usize) -> Result<DMatrix<f64>> {
        if h == 0 {
            return Err(Error::Range("forecast horizon must be positive".into()));
        }
        match self {
            Self::Univariate(models) => {
                let mut out = DMatrix::zeros(h, models.len());
                for (j, m) in models.iter().enumerate() {
                    for (i, v) in m.forecast(h)?.into_iter().enumerate() {
                        out[(i, j)] = v;
                    }
                }
                Ok(out)
            }
            Self::Var(m) => m.forecast(h),
        }
    }

    /// In-sample h-step errors indexed `[h − 1][k]`.
    pub fn insample_errors(&self, h_max: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        match self {
            Self::Univariate(models) => {
                let per_model = models
                    .iter()
                    .map(|m| m.insample_errors_all(h_max))
                    .collect::<Result<Vec<_>>>()?;
                Ok((0..h_max)
                    .map(|h| per_model.iter().map(|e| e[h].clone()).collect())
                    .collect())
            }
            Self::Var(m) => m.insample_errors_all(h_max),
        }
    }

    pub fn forecast_with_errors(&self, h: usize) -> Result<ScoreForecast> {
        Ok(ScoreForecast {
            point: self.forecast(h)?,
            errors: self.insample_errors(h)?,
        })
    }

    /// Human-readable model labels, one per component (a single entry for VAR).
    pub fn labels(&self) -> Vec<String> {
        match self {
            Self::Univariate(models) => models.iter().map(UnivariateModel::label).collect(),
            Self::Var(m) => vec![format!("VAR({})", m.p)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_parse() {
        assert_eq!("VAR".parse::<ScoreModelKind>().unwrap(), ScoreModelKind::Var);
        assert!("garch".parse::<ScoreModelKind>().is_err());
        assert_eq!(ScoreModelKind::Ets.to_string(), "ets");
    }

    #[test]
    fn error_pools_have_expected_shape() {
        let scores = DMatrix::from_fn(40, 2, |t, j| ((t * (j + 3)) as f64 * 0.37).sin() + 0.05 * t as f64);
        for kind in [ScoreModelKind::Arima, ScoreModelKind::Ets, ScoreModelKind::Var] {
            let cfg = ScoreModelConfig { kind, ..Default::default() };
            let f = StageForecaster::fit(&scores, &cfg).unwrap();
            let fc = f.forecast_with_errors(4).unwrap();
            assert_eq!(fc.point.shape(), (4, 2));
            for (h, pools) in fc.errors.iter().enumerate() {
                assert_eq!(pools.len(), 2);
                assert!(pools.iter().all(|p| p.len() == 40 - h - 1));
            }
            let json = serde_json::to_string(&f).unwrap();
            let back: StageForecaster = serde_json::from_str(&json).unwrap();
            assert_eq!(back.forecast(4).unwrap(), fc.point);
        }
    }
}
