//! Bootstrap prediction intervals from resampled score-forecast errors and
//! model residual curves.
//!
//! Replicate `b` at horizon `h` perturbs every score forecast with an error
//! drawn from that component's in-sample `h`-step pool, rebuilds the curve,
//! and adds a residual curve `Y_s` drawn uniformly from the fitted model.
//! Each `(b, h)` pair owns an independent ChaCha stream keyed by the master
//! seed, so the ensemble does not depend on the thread count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nsmodel::TwoStageModel;
use crate::scorecast::ScoreForecast;

/// Minimum replicate count for quantile bands.
pub const MIN_REPLICATES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for BootstrapSpec {
    fn default() -> Self {
        Self {
            replicates: 1000,
            alpha: 0.2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapEnsemble {
    /// One `h × p` matrix per replicate.
    pub replicates: Vec<DMatrix<f64>>,
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapEnsemble {
    pub fn b(&self) -> usize {
        self.replicates.len()
    }

    pub fn horizon(&self) -> usize {
        self.replicates.first().map_or(0, DMatrix::nrows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    /// `h × p`.
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub alpha: f64,
}

fn stream_rng(seed: u64, b: usize, h: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((b as u64) << 32) | h as u64);
    rng
}

fn check_pools(fc: &ScoreForecast, k: usize, h_max: usize, stage: &str) -> Result<()> {
    if fc.point.ncols() != k || fc.point.nrows() < h_max || fc.errors.len() < h_max {
        return Err(Error::Contract(format!(
            "{stage} forecasts do not cover {k} components over {h_max} horizons"
        )));
    }
    for (h, pools) in fc.errors.iter().take(h_max).enumerate() {
        if pools.len() != k {
            return Err(Error::Contract(format!("{stage} error pools missing at horizon {}", h + 1)));
        }
        if pools.iter().any(Vec::is_empty) {
            return Err(Error::Range(format!(
                "empty {stage} error pool at horizon {}",
                h + 1
            )));
        }
    }
    Ok(())
}

/// Draws `spec.replicates` bootstrap versions of the `h_max`-step forecast.
pub fn bootstrap_forecasts(
    model: &TwoStageModel,
    stage1: &ScoreForecast,
    stage2: Option<&ScoreForecast>,
    h_max: usize,
    spec: &BootstrapSpec,
) -> Result<BootstrapEnsemble> {
    if h_max == 0 {
        return Err(Error::Range("forecast horizon must be positive".into()));
    }
    if spec.replicates == 0 {
        return Err(Error::Parameter("at least one bootstrap replicate is required".into()));
    }
    if !(spec.alpha > 0.0 && spec.alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {}", spec.alpha)));
    }
    let n = model.residuals_y.n();
    if h_max >= n {
        return Err(Error::Range(format!("horizon {h_max} leaves no in-sample errors for n = {n}")));
    }
    let r = model.r();
    check_pools(stage1, r, h_max, "stage-1")?;
    let stage2_parts = match (&model.stage2, stage2) {
        (Some(basis), Some(fc)) => {
            check_pools(fc, basis.k(), h_max, "stage-2")?;
            Some((basis, fc))
        }
        (Some(_), None) => return Err(Error::Contract("missing stage-2 score forecasts".into())),
        (None, _) => None,
    };
    let phi1 = &model.stage1.eigenfunctions;
    let y = model.residuals_y.values();
    let p = model.mean.len();
    let replicates = (0..spec.replicates)
        .into_par_iter()
        .map(|b| {
            let mut out = DMatrix::zeros(h_max, p);
            for h in 0..h_max {
                let mut rng = stream_rng(spec.seed, b, h);
                let mut row = model.mean.clone();
                for k in 0..r {
                    let pool = &stage1.errors[h][k];
                    let beta = stage1.point[(h, k)] + pool[rng.random_range(0..pool.len())];
                    for (j, v) in row.iter_mut().enumerate() {
                        *v += beta * phi1[(j, k)];
                    }
                }
                if let Some((basis, fc)) = stage2_parts {
                    for w in 0..basis.k() {
                        let pool = &fc.errors[h][w];
                        let beta = fc.point[(h, w)] + pool[rng.random_range(0..pool.len())];
                        for (j, v) in row.iter_mut().enumerate() {
                            *v += beta * basis.eigenfunctions[(j, w)];
                        }
                    }
                }
                let s = rng.random_range(0..n);
                for (j, v) in row.iter().enumerate() {
                    out[(h, j)] = v + y[(s, j)];
                }
            }
            out
        })
        .collect();
    Ok(BootstrapEnsemble {
        replicates,
        alpha: spec.alpha,
        seed: spec.seed,
    })
}

/// Type-7 quantile of sorted data: linear interpolation between order
/// statistics at position `(N − 1) q`.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise `α/2` and `1 − α/2` quantiles of the ensemble.
pub fn quantile_band(ensemble: &BootstrapEnsemble) -> Result<PredictionBand> {
    quantile_band_at(ensemble, ensemble.alpha)
}

/// As [`quantile_band`] with an explicit level.
pub fn quantile_band_at(ensemble: &BootstrapEnsemble, alpha: f64) -> Result<PredictionBand> {
    let b = ensemble.b();
    if b < MIN_REPLICATES {
        return Err(Error::Parameter(format!(
            "quantile bands need at least {MIN_REPLICATES} replicates, got {b}"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (h, p) = ensemble.replicates[0].shape();
    let mut lower = DMatrix::zeros(h, p);
    let mut upper = DMatrix::zeros(h, p);
    let mut buf = vec![0.0; b];
    for i in 0..h {
        for j in 0..p {
            for (slot, rep) in buf.iter_mut().zip(&ensemble.replicates) {
                *slot = rep[(i, j)];
            }
            buf.sort_by(f64::total_cmp);
            lower[(i, j)] = quantile_type7(&buf, alpha / 2.0);
            upper[(i, j)] = quantile_type7(&buf, 1.0 - alpha / 2.0);
        }
    }
    Ok(PredictionBand { lower, upper, alpha })
}
