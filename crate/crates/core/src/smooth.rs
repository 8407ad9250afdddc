//! Weighted penalized smoothing of log-mortality curves with an optional
//! monotone (non-decreasing) tail.
//!
//! The smoother minimizes `Σ w_j (y_j − f_j)² + λ Σ (Δᵐ f_j)²` over the grid
//! values `f`, where `Δᵐ` is the m-th order difference (m = 2 by default).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::{Curve, FunctionalTimeSeries};

/// Penalty strength: fixed, or chosen per curve by GCV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lambda {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsMode {
    Uniform,
    ExposureBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub penalty_order: usize,
    pub lambda: Lambda,
    /// Ages at or above this value are made non-decreasing. `None` disables it.
    pub monotone_from_age: Option<f64>,
    pub weights_mode: WeightsMode,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        Self {
            penalty_order: 2,
            lambda: Lambda::Auto,
            monotone_from_age: Some(65.0),
            weights_mode: WeightsMode::Uniform,
        }
    }
}

/// Candidate penalties for GCV: 41 points, log-spaced over `1e-4..=1e6`.
pub fn lambda_grid() -> Vec<f64> {
    (0..41).map(|i| 10f64.powf(-4.0 + 0.25 * i as f64)).collect()
}

fn difference_matrix(p: usize, order: usize) -> DMatrix<f64> {
    let mut d = DMatrix::<f64>::identity(p, p);
    for _ in 0..order {
        let r = d.nrows();
        d = DMatrix::from_fn(r - 1, p, |i, j| d[(i + 1, j)] - d[(i, j)]);
    }
    d
}

fn validate(y: &[f64], weights: &[f64], spec: &SmoothingSpec) -> Result<()> {
    if weights.len() != y.len() {
        return Err(Error::Contract("weights and curve differ in length".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Contract("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::Contract("weights are all zero".into()));
    }
    if spec.penalty_order == 0 || spec.penalty_order >= y.len() {
        return Err(Error::Parameter(format!(
            "penalty order {} invalid for {} points",
            spec.penalty_order,
            y.len()
        )));
    }
    Ok(())
}

/// Spectral form of the smoother for strictly positive weights:
/// `f = W^{-1/2} U diag(1/(1+λs)) Uᵀ W^{1/2} y`.
struct Spectral {
    sqrt_w: Vec<f64>,
    u: DMatrix<f64>,
    s: Vec<f64>,
    /// `Uᵀ W^{1/2} y`
    coef: DVector<f64>,
}

impl Spectral {
    fn new(y: &[f64], weights: &[f64], order: usize) -> Self {
        let p = y.len();
        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let d = difference_matrix(p, order);
        let penalty = d.transpose() * d;
        let m = DMatrix::from_fn(p, p, |i, j| penalty[(i, j)] / (sqrt_w[i] * sqrt_w[j]));
        let eig = SymmetricEigen::new(m);
        let mut s: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        // the penalty's null space (polynomials of degree < order) is exact
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
        for &i in idx.iter().take(order) {
            s[i] = 0.0;
        }
        let u = eig.eigenvectors;
        let wy = DVector::from_iterator(p, y.iter().zip(&sqrt_w).map(|(y, w)| y * w));
        let coef = u.transpose() * wy;
        Self { sqrt_w, u, s, coef }
    }

    fn fit(&self, lambda: f64) -> (Vec<f64>, f64) {
        let shrunk = DVector::from_iterator(
            self.s.len(),
            self.coef.iter().zip(&self.s).map(|(c, s)| c / (1.0 + lambda * s)),
        );
        let f = &self.u * shrunk;
        let trace = self.s.iter().map(|s| 1.0 / (1.0 + lambda * s)).sum();
        let fitted = f.iter().zip(&self.sqrt_w).map(|(v, w)| v / w).collect();
        (fitted, trace)
    }
}

fn dense_fit(y: &[f64], weights: &[f64], order: usize, lambda: f64) -> Result<Vec<f64>> {
    let p = y.len();
    let d = difference_matrix(p, order);
    let mut a = d.transpose() * d * lambda;
    for i in 0..p {
        a[(i, i)] += weights[i];
    }
    let rhs = DVector::from_iterator(p, y.iter().zip(weights).map(|(y, w)| y * w));
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("penalized normal equations are singular".into()))?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

fn weighted_rss(y: &[f64], f: &[f64], w: &[f64]) -> f64 {
    y.iter()
        .zip(f)
        .zip(w)
        .map(|((y, f), w)| w * (y - f) * (y - f))
        .sum()
}

fn fit_values(y: &[f64], weights: &[f64], order: usize, lambda: f64) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda must be nonnegative, got {lambda}")));
    }
    if weights.iter().all(|&w| w > 0.0) {
        Ok(Spectral::new(y, weights, order).fit(lambda).0)
    } else {
        dense_fit(y, weights, order, lambda)
    }
}

/// GCV choice of `λ` over [`lambda_grid`]; ties go to the smallest `λ`.
pub fn select_lambda_gcv(y: &Curve, weights: &[f64], spec: &SmoothingSpec) -> Result<f64> {
    let y = y.values();
    validate(y, weights, spec)?;
    let grid = lambda_grid();
    let n = y.len() as f64;
    let scores: Vec<f64> = if weights.iter().all(|&w| w > 0.0) {
        let sp = Spectral::new(y, weights, spec.penalty_order);
        grid.iter()
            .map(|&l| {
                let (f, tr) = sp.fit(l);
                n * weighted_rss(y, &f, weights) / (n - tr).powi(2)
            })
            .collect()
    } else {
        let mut out = Vec::with_capacity(grid.len());
        for &l in &grid {
            let f = dense_fit(y, weights, spec.penalty_order, l)?;
            // influence-matrix trace from the dense inverse
            let p = y.len();
            let d = difference_matrix(p, spec.penalty_order);
            let mut a = d.transpose() * d * l;
            for i in 0..p {
                a[(i, i)] += weights[i];
            }
            let inv = a
                .try_inverse()
                .ok_or_else(|| Error::Numerical("singular smoother".into()))?;
            let tr: f64 = (0..p).map(|i| inv[(i, i)] * weights[i]).sum();
            out.push(n * weighted_rss(y, &f, weights) / (n - tr).powi(2));
        }
        out
    };
    let scale = 1.0 + y.iter().zip(weights).map(|(y, w)| w * y * y).sum::<f64>() / n;
    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = 1e-12 * scale;
    let idx = scores
        .iter()
        .position(|&s| s <= best + tol)
        .ok_or_else(|| Error::Numerical("GCV scores are not finite".into()))?;
    Ok(grid[idx])
}

/// Penalized smooth of `y`, followed by the monotone tail projection if enabled.
pub fn smooth_curve(y: &Curve, weights: &[f64], spec: &SmoothingSpec) -> Result<Curve> {
    validate(y.values(), weights, spec)?;
    let lambda = match spec.lambda {
        Lambda::Fixed(l) => l,
        Lambda::Auto => select_lambda_gcv(y, weights, spec)?,
    };
    let fitted = fit_values(y.values(), weights, spec.penalty_order, lambda)?;
    let curve = Curve::new(fitted, y.grid().clone())?;
    match spec.monotone_from_age {
        Some(age) => monotone_project(&curve, age),
        None => Ok(curve),
    }
}

/// Isotonic (non-decreasing) regression of the values at ages `>= from_age`
/// by pool-adjacent-violators with equal weights.
pub fn monotone_project(f: &Curve, from_age: f64) -> Result<Curve> {
    let pts = f.grid().points();
    if from_age < pts[0] || from_age > pts[pts.len() - 1] {
        return Err(Error::Parameter(format!(
            "monotone start {from_age} outside the grid"
        )));
    }
    let start = pts.iter().position(|&u| u >= from_age - 1e-12).unwrap_or(pts.len());
    let mut values = f.values().to_vec();
    let tail = pav(&values[start..]);
    values[start..].copy_from_slice(&tail);
    Curve::new(values, f.grid().clone())
}

fn pav(y: &[f64]) -> Vec<f64> {
    // blocks of (sum, count)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (s1, c1) = blocks[blocks.len() - 2];
            let (s2, c2) = blocks[blocks.len() - 1];
            if s1 / c1 as f64 > s2 / c2 as f64 {
                blocks.pop();
                let last = blocks.len() - 1;
                blocks[last] = (s1 + s2, c1 + c2);
            } else {
                break;
            }
        }
    }
    blocks
        .into_iter()
        .flat_map(|(s, c)| std::iter::repeat_n(s / c as f64, c))
        .collect()
}

/// Smoothing weights proportional to `exposure × rate`, scaled to mean 1.
pub fn exposure_weights(exposure: &[f64], rate: &[f64]) -> Vec<f64> {
    let raw: Vec<f64> = exposure
        .iter()
        .zip(rate)
        .map(|(e, r)| {
            let w = e * r;
            if w.is_finite() && w > 0.0 { w } else { 0.0 }
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if mean > 0.0 {
        raw.iter().map(|w| w / mean).collect()
    } else {
        vec![1.0; raw.len()]
    }
}

/// Smooths every curve of `fts`; `weights` supplies one weight row per curve
/// (uniform weights when `None`).
pub fn smooth_series(
    fts: &FunctionalTimeSeries,
    weights: Option<&DMatrix<f64>>,
    spec: &SmoothingSpec,
) -> Result<FunctionalTimeSeries> {
    use rayon::prelude::*;
    let p = fts.p();
    let rows: Vec<Result<Vec<f64>>> = (0..fts.n())
        .into_par_iter()
        .map(|t| {
            let w: Vec<f64> = match weights {
                Some(m) => m.row(t).iter().copied().collect(),
                None => vec![1.0; p],
            };
            smooth_curve(&fts.curve(t), &w, spec).map(Curve::into_values)
        })
        .collect();
    let mut values = DMatrix::zeros(fts.n(), p);
    for (t, row) in rows.into_iter().enumerate() {
        values.row_mut(t).copy_from_slice(&row?);
    }
    Ok(fts.with_values(values, fts.scale_tag()))
}
