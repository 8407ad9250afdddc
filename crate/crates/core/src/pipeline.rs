//! End-to-end fitting and forecasting: data preparation, the two-stage
//! model, score forecasters and bootstrap bands.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::FunctionalTimeSeries;
use crate::ingest::{group_open_age, impute_rates, to_log_fts, MortalityTable};
use crate::nsmodel::{fit_two_stage, point_forecast, FitOptions, TwoStageModel};
use crate::scorecast::{ScoreForecast, ScoreModelConfig, StageForecaster};
use crate::smooth::{exposure_weights, smooth_series, SmoothingSpec, WeightsMode};
use crate::uncertainty::{bootstrap_forecasts, quantile_band, BootstrapEnsemble, BootstrapSpec, PredictionBand};

/// How raw rates become the modelled log curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    /// Ages at or above this are pooled into one open group.
    pub open_age: u32,
    /// `None` models the raw log rates.
    pub smoothing: Option<SmoothingSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            open_age: 95,
            smoothing: Some(SmoothingSpec::default()),
        }
    }
}

/// Pools the open age group, imputes, takes `log10` and smooths each curve.
pub fn prepare_series(table: &MortalityTable, config: &DataConfig) -> Result<FunctionalTimeSeries> {
    let grouped = group_open_age(table, config.open_age)?;
    let fts = to_log_fts(&grouped)?;
    let Some(spec) = &config.smoothing else {
        return Ok(fts);
    };
    let weights = match (spec.weights_mode, &grouped.exposures) {
        (WeightsMode::ExposureBased, Some(exp)) => {
            let rates = impute_rates(&grouped)?;
            let p = rates.ncols();
            let mut w = DMatrix::zeros(rates.nrows(), p);
            for t in 0..rates.nrows() {
                let e: Vec<f64> = exp.row(t).iter().copied().collect();
                let r: Vec<f64> = rates.row(t).iter().copied().collect();
                w.row_mut(t).copy_from_slice(&exposure_weights(&e, &r));
            }
            Some(w)
        }
        (WeightsMode::ExposureBased, None) => {
            log::warn!("exposure-based smoothing weights requested without exposures; using uniform weights");
            None
        }
        (WeightsMode::Uniform, _) => None,
    };
    smooth_series(&fts, weights.as_ref(), spec)
}

/// Model and forecasting settings shared by fitting and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PipelineConfig {
    pub fit: FitOptions,
    pub score_model: ScoreModelConfig,
    pub bootstrap: Option<BootstrapSpec>,
}

/// A fitted two-stage model with one score forecaster per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub model: TwoStageModel,
    pub stage1: StageForecaster,
    pub stage2: Option<StageForecaster>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineForecast {
    /// `h × p` point forecasts.
    pub point: DMatrix<f64>,
    pub band: Option<PredictionBand>,
    pub ensemble: Option<BootstrapEnsemble>,
    /// Calendar years of the forecast rows.
    pub years: Vec<i32>,
}

pub fn fit_pipeline(fts: &FunctionalTimeSeries, config: &PipelineConfig) -> Result<FittedPipeline> {
    let model = fit_two_stage(fts, &config.fit)?;
    let stage1 = StageForecaster::fit(&model.stage1.scores, &config.score_model).map_err(|e| {
        Error::Modeling {
            stage: "stage-1 score forecasting",
            msg: e.to_string(),
        }
    })?;
    let stage2 = match &model.stage2 {
        Some(b) => Some(StageForecaster::fit(&b.scores, &config.score_model).map_err(|e| {
            Error::Modeling {
                stage: "stage-2 score forecasting",
                msg: e.to_string(),
            }
        })?),
        None => None,
    };
    Ok(FittedPipeline { model, stage1, stage2 })
}

impl FittedPipeline {
    pub fn n(&self) -> usize {
        self.model.residuals_y.n()
    }

    fn score_forecasts(&self, h: usize, with_errors: bool) -> Result<(ScoreForecast, Option<ScoreForecast>)> {
        let run = |f: &StageForecaster| -> Result<ScoreForecast> {
            if with_errors {
                f.forecast_with_errors(h)
            } else {
                Ok(ScoreForecast {
                    point: f.forecast(h)?,
                    errors: Vec::new(),
                })
            }
        };
        let s1 = run(&self.stage1)?;
        let s2 = self.stage2.as_ref().map(run).transpose()?;
        Ok((s1, s2))
    }

    /// Point forecasts for horizons `1..=h`, plus bootstrap bands when a
    /// bootstrap specification is given.
    pub fn forecast(&self, h: usize, bootstrap: Option<&BootstrapSpec>) -> Result<PipelineForecast> {
        if h == 0 {
            return Err(Error::Range("forecast horizon must be positive".into()));
        }
        let (s1, s2) = self.score_forecasts(h, bootstrap.is_some())?;
        let point = point_forecast(&self.model, &s1.point, s2.as_ref().map(|s| &s.point))?;
        let (band, ensemble) = match bootstrap {
            Some(spec) => {
                let ens = bootstrap_forecasts(&self.model, &s1, s2.as_ref(), h, spec)?;
                (Some(quantile_band(&ens)?), Some(ens))
            }
            None => (None, None),
        };
        let last = *self.model.residuals_y.time_labels().last().expect("model has data");
        Ok(PipelineForecast {
            point,
            band,
            ensemble,
            years: (1..=h as i32).map(|i| last + i).collect(),
        })
    }
}
