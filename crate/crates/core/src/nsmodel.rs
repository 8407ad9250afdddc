//! Two-stage dynamic FPCA for nonstationary functional time series.
//!
//! Stage 1 extracts the nonstationary components from the long-run
//! covariance of the first differences (or from the geometrically weighted
//! decomposition). Its residuals `Z_t` are tested for serial independence;
//! when independence is rejected, stage 2 extracts further components from
//! the long-run covariance of `Z_t`. What is left is the model residual `Y_t`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::fpca::{eigen_fpca, select_k_ratio, static_fpca, weighted_fpca_full, FpcaBasis};
use crate::fts::{first_difference, project, subtract_row, FunctionalTimeSeries, ScaleTag};
use crate::lrcov::{long_run_cov, KernelSpec};
use crate::scorecast::{select_d, KpssVariant};

/// How many components a stage retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Components {
    /// Eigenvalue-ratio estimate.
    #[default]
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndependenceTestSpec {
    pub lags: usize,
    pub dim: usize,
    pub level: f64,
}

impl Default for IndependenceTestSpec {
    fn default() -> Self {
        Self {
            lags: 10,
            dim: 3,
            level: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Geometric weighting parameter; `None` fits the unweighted model.
    pub kappa: Option<f64>,
    pub kernel: KernelSpec,
    /// Stage-1 component count.
    pub components: Components,
    pub independence: IndependenceTestSpec,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kappa: None,
            kernel: KernelSpec::default(),
            components: Components::Auto,
            independence: IndependenceTestSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    /// `X̄`.
    pub mean: Vec<f64>,
    /// `r̂` components with scores `⟨X_t − X̄, ζ_k⟩`.
    pub stage1: FpcaBasis,
    /// Components with scores `⟨Z_t, ζ_ω⟩`, present when independence of
    /// `Z_t` was rejected.
    pub stage2: Option<FpcaBasis>,
    pub residuals_z: FunctionalTimeSeries,
    pub residuals_y: FunctionalTimeSeries,
    pub kappa: Option<f64>,
    pub independence_p_value: f64,
    pub bandwidth_stage1: Option<f64>,
    pub bandwidth_stage2: Option<f64>,
}

impl TwoStageModel {
    pub fn r(&self) -> usize {
        self.stage1.k()
    }

    /// Total component count `K̂`.
    pub fn k_total(&self) -> usize {
        self.r() + self.stage2.as_ref().map_or(0, FpcaBasis::k)
    }

    pub fn is_weighted(&self) -> bool {
        self.kappa.is_some()
    }
}

fn stage_error(stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::DegenerateSpectrum => Error::Modeling {
            stage,
            msg: "all eigenvalues are zero".into(),
        },
        other => other,
    }
}

/// Fits the two-stage model to a series of curves (`n ≥ 20`).
pub fn fit_two_stage(fts: &FunctionalTimeSeries, options: &FitOptions) -> Result<TwoStageModel> {
    let n = fts.n();
    if n < 20 {
        return Err(Error::InsufficientData { needed: 20, got: n });
    }
    let p = fts.p();
    let (full, bandwidth1) = match options.kappa {
        Some(kappa) => (weighted_fpca_full(fts, kappa)?, None),
        None => {
            let diff = first_difference(fts)?;
            let surface = long_run_cov(&diff, &options.kernel)?;
            (eigen_fpca(&surface, fts, p)?, surface.bandwidth)
        }
    };
    let available = full.k();
    let r = match options.components {
        Components::Auto => select_k_ratio(&full.eigenvalues, n - 1).map_err(stage_error("stage 1"))?,
        Components::Fixed(k) => {
            if k == 0 {
                return Err(Error::Parameter("stage 1 needs at least one component".into()));
            }
            k
        }
    };
    if r > available || available == 0 {
        return Err(Error::Modeling {
            stage: "stage 1",
            msg: format!("{r} components requested but only {available} available"),
        });
    }
    let stage1 = full.truncate(r);
    warn_if_twice_integrated(&stage1.scores);

    let mut z = fts.values().clone();
    subtract_row(&mut z, &stage1.mean);
    z -= stage1.fitted();
    let residuals_z = fts.with_values(z.clone(), ScaleTag::Residual);

    let centered_scale = {
        let mut xc = fts.values().clone();
        subtract_row(&mut xc, &stage1.mean);
        xc.amax()
    };
    let independence_p_value = if z.amax() <= 1e-10 * centered_scale {
        1.0
    } else {
        independence_test(&residuals_z, options.independence.lags, options.independence.dim)?
    };
    let mut stage2 = None;
    let mut bandwidth2 = None;
    if independence_p_value < options.independence.level {
        let surface = long_run_cov(&residuals_z, &options.kernel)?;
        bandwidth2 = surface.bandwidth;
        let basis = eigen_fpca(&surface, &residuals_z, p)?;
        match select_k_ratio(&basis.eigenvalues, n) {
            Ok(k2) => {
                let mut b = basis.truncate(k2);
                b.scores = project(&z, &b.eigenfunctions, fts.grid());
                b.mean = vec![0.0; p];
                stage2 = Some(b);
            }
            Err(Error::DegenerateSpectrum) => {
                log::warn!("residual spectrum is degenerate; stage 2 omitted");
            }
            Err(e) => return Err(e),
        }
    }
    let y = match &stage2 {
        Some(b) => &z - b.fitted(),
        None => z,
    };
    Ok(TwoStageModel {
        mean: stage1.mean.clone(),
        stage1,
        stage2,
        residuals_y: fts.with_values(y, ScaleTag::Residual),
        residuals_z,
        kappa: options.kappa,
        independence_p_value,
        bandwidth_stage1: bandwidth1,
        bandwidth_stage2: bandwidth2,
    })
}

fn warn_if_twice_integrated(scores: &DMatrix<f64>) {
    for (k, col) in scores.column_iter().enumerate() {
        let x: Vec<f64> = col.iter().copied().collect();
        if let Ok(2) = select_d(&x, 2, KpssVariant::Level) {
            log::warn!(
                "stage-1 score {} needs two differences; the series may be integrated of order two",
                k + 1
            );
        }
    }
}

/// Portmanteau test of serial independence for a functional series.
///
/// Projects onto the leading `d` static principal components (fewer when
/// the rank is smaller), and refers `Q = n Σ_{ℓ=1}^{H} Σ_{i,j} r_{ij}(ℓ)²` to
/// a chi-square distribution with `d² H` degrees of freedom, where
/// `r_{ij}(ℓ)` are the lag-`ℓ` cross-correlations of the scores. A series
/// without variation returns 1.
pub fn independence_test(z: &FunctionalTimeSeries, lags: usize, dim: usize) -> Result<f64> {
    let n = z.n();
    if lags == 0 || dim == 0 {
        return Err(Error::Parameter("lags and dimension must be positive".into()));
    }
    if n <= lags + dim {
        return Err(Error::InsufficientData {
            needed: lags + dim + 1,
            got: n,
        });
    }
    let basis = static_fpca(z, dim.min(z.p()))?;
    let l1 = basis.eigenvalues.first().copied().unwrap_or(0.0);
    let scale = z.values().iter().map(|v| v * v).sum::<f64>() / (n * z.p()) as f64;
    if !(l1 > 1e-24 * scale.max(f64::MIN_POSITIVE)) || !(l1 > 1e-300) {
        log::warn!("independence test on a series without variation");
        return Ok(1.0);
    }
    let rank = basis
        .eigenvalues
        .iter()
        .filter(|&&v| v > 1e-10 * l1)
        .count();
    let d = dim.min(rank).min(basis.k());
    if d < dim {
        log::warn!("independence test dimension reduced from {dim} to {d}");
    }
    let s = basis.scores.columns(0, d);
    let var: Vec<f64> = (0..d)
        .map(|i| s.column(i).iter().map(|v| v * v).sum::<f64>() / n as f64)
        .collect();
    let mut q = 0.0;
    for lag in 1..=lags {
        for i in 0..d {
            for j in 0..d {
                let mut c = 0.0;
                for t in lag..n {
                    c += s[(t, i)] * s[(t - lag, j)];
                }
                let r = c / n as f64 / (var[i] * var[j]).sqrt();
                q += r * r;
            }
        }
    }
    q *= n as f64;
    let df = (d * d * lags) as f64;
    let chi = ChiSquared::new(df).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok((1.0 - chi.cdf(q)).clamp(0.0, 1.0))
}

/// `X̂_{n+h} = X̄ + Σ_k β̂_{n+h,k} ζ_k + Σ_ω β̂_{n+h,ω} ζ_ω` for every row of
/// the score forecasts; returns an `h × p` matrix.
pub fn point_forecast(
    model: &TwoStageModel,
    stage1_scores: &DMatrix<f64>,
    stage2_scores: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let h = stage1_scores.nrows();
    if stage1_scores.ncols() != model.r() {
        return Err(Error::Contract(format!(
            "{} stage-1 score forecasts for {} components",
            stage1_scores.ncols(),
            model.r()
        )));
    }
    let mut out = stage1_scores * model.stage1.eigenfunctions.transpose();
    match (&model.stage2, stage2_scores) {
        (Some(b), Some(s2)) => {
            if s2.ncols() != b.k() || s2.nrows() != h {
                return Err(Error::Contract(format!(
                    "stage-2 score forecasts are {}×{}, expected {h}×{}",
                    s2.nrows(),
                    s2.ncols(),
                    b.k()
                )));
            }
            out += s2 * b.eigenfunctions.transpose();
        }
        (Some(_), None) => {
            return Err(Error::Contract("missing stage-2 score forecasts".into()));
        }
        (None, Some(s2)) if s2.ncols() > 0 => {
            return Err(Error::Contract("stage-2 forecasts supplied for a one-stage model".into()));
        }
        _ => {}
    }
    for mut row in out.row_iter_mut() {
        for (v, m) in row.iter_mut().zip(&model.mean) {
            *v += m;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fts::{AgeGrid, Curve};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid() -> AgeGrid {
        AgeGrid::uniform(0.0, 1.0, 21).unwrap()
    }

    fn unit(f: impl Fn(f64) -> f64) -> Vec<f64> {
        let c = Curve::from_fn(&grid(), f).unwrap();
        let norm = c.norm_sq().sqrt();
        c.values().iter().map(|v| v / norm).collect()
    }

    fn random_walk_fixture(seed: u64) -> (FunctionalTimeSeries, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phi = unit(|u| (std::f64::consts::PI * u).sin() + 0.3);
        let base: Vec<f64> = grid().points().iter().map(|u| -2.0 - u).collect();
        let mut a = 0.0;
        let rows: Vec<Vec<f64>> = (0..60)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                a += e;
                base.iter().zip(&phi).map(|(b, f)| b + a * f).collect()
            })
            .collect();
        (
            FunctionalTimeSeries::from_rows(&rows, grid(), 1950, ScaleTag::Log10Rate).unwrap(),
            phi,
        )
    }

    #[test]
    fn single_random_walk_factor() {
        let (fts, phi) = random_walk_fixture(1);
        let m = fit_two_stage(&fts, &FitOptions::default()).unwrap();
        assert_eq!(m.r(), 1);
        let g = grid();
        let align = g.integrate(
            &m.stage1
                .eigenfunctions
                .column(0)
                .iter()
                .zip(&phi)
                .map(|(a, b)| a * b)
                .collect::<Vec<_>>(),
        );
        assert!(align.abs() >= 0.999);
        assert!(m.residuals_z.values().amax() <= 1e-8);
        assert!(m.stage2.is_none());
        assert_eq!(m.independence_p_value, 1.0);
    }

    #[test]
    fn decomposition_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|t| {
                (0..21)
                    .map(|j| 0.05 * t as f64 * (j as f64 / 20.0) + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                    .collect()
            })
            .collect();
        let fts = FunctionalTimeSeries::from_rows(&rows, grid(), 1, ScaleTag::Log10Rate).unwrap();
        let m = fit_two_stage(&fts, &FitOptions::default()).unwrap();
        let mut rebuilt = m.stage1.fitted() + m.residuals_y.values();
        if let Some(b) = &m.stage2 {
            rebuilt += b.fitted();
        }
        for t in 0..40 {
            for j in 0..21 {
                assert!((rebuilt[(t, j)] + m.mean[j] - fts.values()[(t, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_short() {
        let (fts, _) = random_walk_fixture(2);
        let short = fts.slice(0, 10).unwrap();
        assert!(matches!(
            fit_two_stage(&short, &FitOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn constant_residuals_are_independent() {
        let rows = vec![vec![0.0; 21]; 30];
        let z = FunctionalTimeSeries::from_rows(&rows, grid(), 1, ScaleTag::Residual).unwrap();
        assert_eq!(independence_test(&z, 10, 3).unwrap(), 1.0);
    }

    #[test]
    fn forecast_assembly() {
        let (fts, _) = random_walk_fixture(3);
        let m = fit_two_stage(&fts, &FitOptions::default()).unwrap();
        let zero = DMatrix::zeros(3, m.r());
        let f = point_forecast(&m, &zero, None).unwrap();
        for row in f.row_iter() {
            for (v, mu) in row.iter().zip(&m.mean) {
                assert_eq!(v, mu);
            }
        }
        let last = m.stage1.scores.row(fts.n() - 1).into_owned();
        let naive = DMatrix::from_fn(1, m.r(), |_, k| last[k]);
        let f = point_forecast(&m, &naive, None).unwrap();
        for j in 0..21 {
            assert!((f[(0, j)] - fts.values()[(fts.n() - 1, j)]).abs() < 1e-8);
        }
        let doubled = point_forecast(&m, &(&naive * 2.0), None).unwrap();
        for j in 0..21 {
            assert!(((doubled[(0, j)] - m.mean[j]) - 2.0 * (f[(0, j)] - m.mean[j])).abs() < 1e-10);
        }
        assert!(point_forecast(&m, &DMatrix::zeros(1, m.r() + 1), None).is_err());
    }
}
