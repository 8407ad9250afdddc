//! Forecast accuracy metrics, expanding-window backtests and validation-set
//! selection of the weighting parameter κ.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::FunctionalTimeSeries;
use crate::ingest::SampleSplit;
use crate::pipeline::{fit_pipeline, PipelineConfig};
use crate::uncertainty::{BootstrapSpec, PredictionBand};

pub const KAPPA_LOWER: f64 = 0.001;
pub const KAPPA_UPPER: f64 = 0.999;
pub const KAPPA_TOLERANCE: f64 = 1e-3;
pub const KAPPA_MAX_EVALUATIONS: usize = 40;

/// Root mean squared prediction error.
pub fn rmspe(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("RMSPE of an empty error set".into()));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// Mean absolute prediction error.
pub fn mape(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::UndefinedMetric("MAPE of an empty error set".into()));
    }
    Ok(errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64)
}

fn check_aligned(lower: &[f64], upper: &[f64], actual: &[f64]) -> Result<()> {
    if lower.len() != upper.len() || lower.len() != actual.len() {
        return Err(Error::Contract(format!(
            "band and actuals misaligned: {} lower, {} upper, {} actual",
            lower.len(),
            upper.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::UndefinedMetric("coverage of an empty set".into()));
    }
    Ok(())
}

/// Empirical coverage and its absolute distance from the nominal `1 − α`.
/// Points on a bound count as covered.
pub fn coverage_cpd(lower: &[f64], upper: &[f64], actual: &[f64], alpha: f64) -> Result<(f64, f64)> {
    check_aligned(lower, upper, actual)?;
    let outside = actual
        .iter()
        .zip(lower.iter().zip(upper))
        .filter(|(a, (l, u))| **a > **u || **a < **l)
        .count();
    let coverage = 1.0 - outside as f64 / actual.len() as f64;
    Ok((coverage, (coverage - (1.0 - alpha)).abs()))
}

/// Interval score of a single `(1 − α)` interval.
pub fn interval_score(lb: f64, ub: f64, actual: f64, alpha: f64) -> Result<f64> {
    if lb > ub {
        return Err(Error::Contract(format!("interval lower bound {lb} exceeds upper bound {ub}")));
    }
    let mut s = ub - lb;
    if actual < lb {
        s += 2.0 / alpha * (lb - actual);
    }
    if actual > ub {
        s += 2.0 / alpha * (actual - ub);
    }
    Ok(s)
}

/// Mean interval score over aligned points.
pub fn mean_interval_score(lower: &[f64], upper: &[f64], actual: &[f64], alpha: f64) -> Result<f64> {
    check_aligned(lower, upper, actual)?;
    let mut total = 0.0;
    for ((l, u), a) in lower.iter().zip(upper).zip(actual) {
        total += interval_score(*l, *u, *a, alpha)?;
    }
    Ok(total / actual.len() as f64)
}

/// One origin's forecast of horizons `1..=h`.
#[derive(Debug, Clone, PartialEq)]
pub struct OriginForecast {
    pub point: DMatrix<f64>,
    pub band: Option<PredictionBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    /// Origins that produced a forecast for this horizon.
    pub count: usize,
    /// Origins that failed.
    pub missing: usize,
    pub rmspe: Option<f64>,
    pub mape: Option<f64>,
    pub coverage: Option<f64>,
    pub cpd: Option<f64>,
    pub interval_score: Option<f64>,
}

impl HorizonMetrics {
    fn metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("rmspe", self.rmspe),
            ("mape", self.mape),
            ("coverage", self.coverage),
            ("cpd", self.cpd),
            ("interval_score", self.interval_score),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// `standard` or `weighted`.
    pub method: String,
    pub score_model: String,
    pub kappa: Option<f64>,
    pub alpha: Option<f64>,
    pub horizons: Vec<HorizonMetrics>,
}

impl EvaluationReport {
    /// Long-format rows `(method, horizon, metric, value)`; metrics that were
    /// not computed are omitted.
    pub fn long_rows(&self) -> Vec<(String, usize, &'static str, f64)> {
        let mut rows = Vec::new();
        for hm in &self.horizons {
            rows.push((self.method.clone(), hm.horizon, "count", hm.count as f64));
            rows.push((self.method.clone(), hm.horizon, "missing", hm.missing as f64));
            for (name, v) in hm.metrics() {
                if let Some(v) = v {
                    rows.push((self.method.clone(), hm.horizon, name, v));
                }
            }
        }
        rows
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,horizon,metric,value\n");
        for (m, h, metric, v) in self.long_rows() {
            let _ = writeln!(out, "{m},{h},{metric},{v}");
        }
        out
    }

    /// Metric-versus-horizon rows for plotting, tagged with the population.
    pub fn to_plot_csv(&self, sex: &str) -> String {
        let mut out = String::from("method,sex,horizon,metric,value\n");
        for (m, h, metric, v) in self.long_rows() {
            if metric != "count" && metric != "missing" {
                let _ = writeln!(out, "{m},{sex},{h},{metric},{v}");
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Side-by-side comparison of several reports: one row per method within each
/// `(horizon, metric)` pair, with the lowest-loss method flagged.
pub fn comparison_table(reports: &[EvaluationReport]) -> String {
    let mut table: BTreeMap<(usize, usize), Vec<(String, f64)>> = BTreeMap::new();
    let order = ["rmspe", "mape", "coverage", "cpd", "interval_score"];
    for r in reports {
        for hm in &r.horizons {
            for (i, (_, v)) in hm.metrics().into_iter().enumerate() {
                if let Some(v) = v {
                    table.entry((hm.horizon, i)).or_default().push((r.method.clone(), v));
                }
            }
        }
    }
    let mut out = String::from("horizon,metric,method,value,best\n");
    for ((h, i), rows) in table {
        let metric = order[i];
        // coverage has no loss direction; the others are losses
        let best = (metric != "coverage").then(|| {
            rows.iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min)
        });
        for (m, v) in rows {
            let flag = best.is_some_and(|b| v == b);
            let _ = writeln!(out, "{h},{metric},{m},{v},{flag}");
        }
    }
    out
}

/// Runs `forecaster` at every origin from the end of the validation block to
/// `n − 1` and aggregates errors per horizon.
pub fn expanding_window_with<F>(
    fts: &FunctionalTimeSeries,
    split: &SampleSplit,
    alpha: Option<f64>,
    forecaster: F,
) -> Result<Vec<HorizonMetrics>>
where
    F: Fn(&FunctionalTimeSeries, usize) -> Result<OriginForecast> + Sync,
{
    let n = fts.n();
    if split.n() != n {
        return Err(Error::Contract(format!(
            "split covers {} curves but the series has {n}",
            split.n()
        )));
    }
    let m = split.validation_end();
    let h_max = split.test_len();
    let results: Vec<Option<OriginForecast>> = (m..n)
        .into_par_iter()
        .map(|o| {
            let h = n - o;
            let out = fts.slice(0, o).and_then(|train| forecaster(&train, h)).and_then(|f| {
                if f.point.shape() != (h, fts.p()) {
                    return Err(Error::Contract(format!(
                        "forecaster returned {:?}, expected ({h}, {})",
                        f.point.shape(),
                        fts.p()
                    )));
                }
                Ok(f)
            });
            match out {
                Ok(f) => Some(f),
                Err(e) => {
                    log::warn!("forecast origin {} failed: {e}", fts.time_labels()[o - 1]);
                    None
                }
            }
        })
        .collect();

    let values = fts.values();
    let mut horizons = Vec::with_capacity(h_max);
    for h in 1..=h_max {
        let mut errors = Vec::new();
        let (mut lo, mut up, mut act) = (Vec::new(), Vec::new(), Vec::new());
        let mut count = 0;
        let mut missing = 0;
        let mut banded = true;
        for (i, res) in results.iter().enumerate() {
            let o = m + i;
            if n - o < h {
                continue;
            }
            let Some(f) = res else {
                missing += 1;
                continue;
            };
            count += 1;
            let target = o + h - 1;
            for j in 0..fts.p() {
                let a = values[(target, j)];
                errors.push(f.point[(h - 1, j)] - a);
                act.push(a);
                match &f.band {
                    Some(b) => {
                        lo.push(b.lower[(h - 1, j)]);
                        up.push(b.upper[(h - 1, j)]);
                    }
                    None => banded = false,
                }
            }
        }
        let mut hm = HorizonMetrics {
            horizon: h,
            count,
            missing,
            rmspe: None,
            mape: None,
            coverage: None,
            cpd: None,
            interval_score: None,
        };
        if count > 0 {
            hm.rmspe = Some(rmspe(&errors)?);
            hm.mape = Some(mape(&errors)?);
            if let (true, Some(alpha)) = (banded, alpha) {
                let (c, d) = coverage_cpd(&lo, &up, &act, alpha)?;
                hm.coverage = Some(c);
                hm.cpd = Some(d);
                hm.interval_score = Some(mean_interval_score(&lo, &up, &act, alpha)?);
            }
        }
        horizons.push(hm);
    }
    Ok(horizons)
}

/// Bootstrap seed for the forecast made from `origin` curves, so that each
/// origin draws an independent, reproducible stream.
fn origin_seed(seed: u64, origin: usize) -> u64 {
    seed ^ (origin as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn pipeline_forecaster(
    config: &PipelineConfig,
) -> impl Fn(&FunctionalTimeSeries, usize) -> Result<OriginForecast> + Sync + '_ {
    move |train, h| {
        let fitted = fit_pipeline(train, config)?;
        let spec = config.bootstrap.map(|b| BootstrapSpec {
            seed: origin_seed(b.seed, train.n()),
            ..b
        });
        let f = fitted.forecast(h, spec.as_ref())?;
        Ok(OriginForecast {
            point: f.point,
            band: f.band,
        })
    }
}

/// Expanding-window backtest of the full pipeline over the test block.
pub fn expanding_window(
    fts: &FunctionalTimeSeries,
    split: &SampleSplit,
    config: &PipelineConfig,
) -> Result<EvaluationReport> {
    let alpha = config.bootstrap.map(|b| b.alpha);
    let horizons = expanding_window_with(fts, split, alpha, pipeline_forecaster(config))?;
    Ok(EvaluationReport {
        method: if config.fit.kappa.is_some() { "weighted" } else { "standard" }.into(),
        score_model: config.score_model.kind.to_string(),
        kappa: config.fit.kappa,
        alpha,
        horizons,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaCriterion {
    #[default]
    Rmspe,
    Mape,
    Cpd,
    IntervalScore,
}

impl KappaCriterion {
    pub fn needs_bands(self) -> bool {
        matches!(self, Self::Cpd | Self::IntervalScore)
    }

    fn pick(self, hm: &HorizonMetrics) -> Option<f64> {
        match self {
            Self::Rmspe => hm.rmspe,
            Self::Mape => hm.mape,
            Self::Cpd => hm.cpd,
            Self::IntervalScore => hm.interval_score,
        }
    }
}

impl FromStr for KappaCriterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "rmspe" => Ok(Self::Rmspe),
            "mape" => Ok(Self::Mape),
            "cpd" => Ok(Self::Cpd),
            "interval_score" => Ok(Self::IntervalScore),
            other => Err(Error::Parameter(format!("unknown kappa criterion '{other}'"))),
        }
    }
}

/// Golden-section minimisation over `[KAPPA_LOWER, KAPPA_UPPER]`. Ties shrink
/// the bracket from both sides, so a flat objective returns the midpoint.
/// Non-finite objective values are treated as `+∞`.
pub fn golden_section_kappa(objective: impl Fn(f64) -> f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut memo: Vec<(f64, f64)> = Vec::new();
    let eval = |k: f64, memo: &mut Vec<(f64, f64)>| -> f64 {
        if let Some(&(_, v)) = memo.iter().find(|(x, _)| *x == k) {
            return v;
        }
        let v = objective(k);
        let v = if v.is_finite() { v } else { f64::INFINITY };
        memo.push((k, v));
        v
    };
    let (mut a, mut b) = (KAPPA_LOWER, KAPPA_UPPER);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = eval(c, &mut memo);
    let mut fd = eval(d, &mut memo);
    while b - a >= KAPPA_TOLERANCE && memo.len() < KAPPA_MAX_EVALUATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c, &mut memo);
        } else if fc > fd {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d, &mut memo);
        } else {
            a = c;
            b = d;
            c = b - g * (b - a);
            d = a + g * (b - a);
            fc = eval(c, &mut memo);
            fd = eval(d, &mut memo);
        }
    }
    if memo.iter().all(|(_, v)| v.is_infinite()) {
        log::warn!("kappa objective is non-finite everywhere; falling back to 0.5");
        return 0.5;
    }
    0.5 * (a + b)
}

/// Mean validation-block criterion of a model fit on the training block with
/// the given κ.
pub fn kappa_objective(
    fts: &FunctionalTimeSeries,
    split: &SampleSplit,
    config: &PipelineConfig,
    criterion: KappaCriterion,
    kappa: f64,
) -> Result<f64> {
    let mut cfg = *config;
    cfg.fit.kappa = Some(kappa);
    if !criterion.needs_bands() {
        cfg.bootstrap = None;
    }
    let train = fts.slice(0, split.train_len())?;
    let validation = fts.slice(split.train_len(), split.validation_end())?;
    let h = split.validation_len();
    let f = pipeline_forecaster(&cfg)(&train, h)?;
    let mut total = 0.0;
    for hz in 0..h {
        let actual: Vec<f64> = validation.values().row(hz).iter().copied().collect();
        let point: Vec<f64> = f.point.row(hz).iter().copied().collect();
        let errors: Vec<f64> = point.iter().zip(&actual).map(|(p, a)| p - a).collect();
        let hm = match (&f.band, cfg.bootstrap) {
            (Some(b), Some(spec)) => {
                let lo: Vec<f64> = b.lower.row(hz).iter().copied().collect();
                let up: Vec<f64> = b.upper.row(hz).iter().copied().collect();
                let (c, d) = coverage_cpd(&lo, &up, &actual, spec.alpha)?;
                HorizonMetrics {
                    horizon: hz + 1,
                    count: 1,
                    missing: 0,
                    rmspe: Some(rmspe(&errors)?),
                    mape: Some(mape(&errors)?),
                    coverage: Some(c),
                    cpd: Some(d),
                    interval_score: Some(mean_interval_score(&lo, &up, &actual, spec.alpha)?),
                }
            }
            _ => HorizonMetrics {
                horizon: hz + 1,
                count: 1,
                missing: 0,
                rmspe: Some(rmspe(&errors)?),
                mape: Some(mape(&errors)?),
                coverage: None,
                cpd: None,
                interval_score: None,
            },
        };
        total += criterion.pick(&hm).ok_or_else(|| {
            Error::Parameter("kappa criterion needs bootstrap bands but bootstrap is disabled".into())
        })?;
    }
    Ok(total / h as f64)
}

/// κ minimising the mean validation criterion.
pub fn optimize_kappa(
    fts: &FunctionalTimeSeries,
    split: &SampleSplit,
    config: &PipelineConfig,
    criterion: KappaCriterion,
) -> Result<f64> {
    if split.validation_len() == 0 {
        return Err(Error::Parameter("kappa selection needs a validation block".into()));
    }
    if criterion.needs_bands() && config.bootstrap.is_none() {
        return Err(Error::Parameter(format!(
            "kappa criterion {criterion:?} needs bootstrap settings"
        )));
    }
    if split.n() != fts.n() {
        return Err(Error::Contract(format!(
            "split covers {} curves but the series has {}",
            split.n(),
            fts.n()
        )));
    }
    Ok(golden_section_kappa(|k| {
        kappa_objective(fts, split, config, criterion, k).unwrap_or_else(|e| {
            log::warn!("kappa objective failed at {k}: {e}");
            f64::INFINITY
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fts::{AgeGrid, ScaleTag};
    use crate::ingest::make_split;

    #[test]
    fn point_metrics() {
        assert_eq!(rmspe(&[-3.0]).unwrap(), 3.0);
        assert_eq!(mape(&[-3.0]).unwrap(), 3.0);
        assert!((rmspe(&[3.0, -4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(mape(&[3.0, -4.0]).unwrap(), 3.5);
        assert_eq!(rmspe(&[0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(rmspe(&[]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(mape(&[]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn coverage_examples() {
        let lo = vec![0.0; 10];
        let up = vec![1.0; 10];
        let inside = vec![0.5; 10];
        let (c, d) = coverage_cpd(&lo, &up, &inside, 0.2).unwrap();
        assert_eq!(c, 1.0);
        assert!((d - 0.2).abs() < 1e-15);
        let (c, d) = coverage_cpd(&lo, &up, &[2.0; 10], 0.2).unwrap();
        assert_eq!((c, d), (0.0, 0.8));
        let mut mixed = vec![0.5; 10];
        mixed[0] = -1.0;
        mixed[1] = 1.5;
        mixed[2] = 1.0;
        let (c, d) = coverage_cpd(&lo, &up, &mixed, 0.2).unwrap();
        assert!((c - 0.8).abs() < 1e-15 && d < 1e-15);
        assert!(matches!(coverage_cpd(&lo, &up[..9], &inside, 0.2), Err(Error::Contract(_))));
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(1.0, 3.0, 2.0, 0.2).unwrap(), 2.0);
        assert!((interval_score(1.0, 3.0, 0.0, 0.2).unwrap() - 12.0).abs() < 1e-12);
        assert!((interval_score(1.0, 3.0, 4.0, 0.2).unwrap() - 12.0).abs() < 1e-12);
        assert!(matches!(interval_score(3.0, 1.0, 2.0, 0.2), Err(Error::Contract(_))));
    }

    fn flat_series(n: usize, p: usize, level: f64) -> FunctionalTimeSeries {
        let grid = AgeGrid::uniform(0.0, 1.0, p).unwrap();
        let rows = vec![vec![level; p]; n];
        FunctionalTimeSeries::from_rows(&rows, grid, 2000, ScaleTag::Log10Rate).unwrap()
    }

    fn mean_forecaster(train: &FunctionalTimeSeries, h: usize) -> Result<OriginForecast> {
        let mean = train.values().row_mean();
        let point = DMatrix::from_fn(h, train.p(), |_, j| mean[j]);
        Ok(OriginForecast {
            band: Some(PredictionBand {
                lower: point.add_scalar(-0.1),
                upper: point.add_scalar(0.1),
                alpha: 0.2,
            }),
            point,
        })
    }

    #[test]
    fn horizon_counts_and_perfect_forecast() {
        let fts = flat_series(10, 4, -2.0);
        let split = make_split(10, 2, 3).unwrap();
        let hs = expanding_window_with(&fts, &split, Some(0.2), mean_forecaster).unwrap();
        assert_eq!(hs.iter().map(|h| h.count).collect::<Vec<_>>(), vec![3, 2, 1]);
        for h in &hs {
            assert_eq!(h.missing, 0);
            assert_eq!(h.rmspe, Some(0.0));
            assert_eq!(h.mape, Some(0.0));
            assert_eq!(h.coverage, Some(1.0));
            assert!((h.interval_score.unwrap() - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn failing_origins_are_counted_missing() {
        let fts = flat_series(10, 3, 0.0);
        let split = make_split(10, 2, 3).unwrap();
        let hs = expanding_window_with(&fts, &split, None, |train, h| {
            if train.n() == 8 {
                Err(Error::Numerical("boom".into()))
            } else {
                mean_forecaster(train, h)
            }
        })
        .unwrap();
        // origin 8 would have served horizons 1 and 2
        assert_eq!(hs.iter().map(|h| (h.count, h.missing)).collect::<Vec<_>>(), vec![(2, 1), (1, 1), (1, 0)]);
        assert_eq!(hs[2].rmspe, Some(0.0));
        assert_eq!(hs[0].coverage, None);
    }

    #[test]
    fn flat_objective_returns_midpoint() {
        let k = golden_section_kappa(|_| 1.0);
        assert!((k - 0.5).abs() < 1e-12);
        assert_eq!(golden_section_kappa(|_| f64::NAN), 0.5);
    }

    #[test]
    fn golden_section_finds_quadratic_minimum() {
        let k = golden_section_kappa(|k| (k - 0.3) * (k - 0.3));
        assert!((k - 0.3).abs() < 1e-3);
        let edge = golden_section_kappa(|k| -k);
        assert!(edge > 0.99);
    }

    #[test]
    fn csv_and_comparison_shapes() {
        let hm = |h, v| HorizonMetrics {
            horizon: h,
            count: 1,
            missing: 0,
            rmspe: Some(v),
            mape: Some(v),
            coverage: None,
            cpd: None,
            interval_score: None,
        };
        let a = EvaluationReport {
            method: "standard".into(),
            score_model: "arima".into(),
            kappa: None,
            alpha: None,
            horizons: vec![hm(1, 1.0), hm(2, 2.0)],
        };
        let mut b = a.clone();
        b.method = "weighted".into();
        b.kappa = Some(0.2);
        b.horizons = vec![hm(1, 0.5), hm(2, 3.0)];
        let csv = a.to_csv();
        assert!(csv.starts_with("method,horizon,metric,value\n"));
        assert!(csv.contains("standard,1,rmspe,1\n"));
        let table = comparison_table(&[a, b]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 2 * 2);
        assert!(table.contains("1,rmspe,weighted,0.5,true"));
        assert!(table.contains("2,rmspe,standard,2,true"));
    }
}
