//! Non-seasonal ARIMA models: exact Gaussian likelihood through a Kalman
//! filter, automatic order selection and fixed-parameter h-step forecasts.
//!
//! The differenced series `w_t = Δ^d x_t` is modelled as
//! `w_t − μ = Σ τ_i (w_{t−i} − μ) + ε_t + Σ ν_j ε_{t−j}`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kpss::{difference, select_d, KpssVariant};
use super::optim::levenberg_marquardt;
use crate::error::{Error, Result};

/// Root-modulus margin for stationarity and invertibility.
const ROOT_TOL: f64 = 1e-6;
/// Automatic selection only admits candidates whose roots have modulus at
/// least `1 + SELECTION_ROOT_MARGIN`. Near-unit roots in cancelling AR/MA
/// pairs otherwise let large models chase single periodogram spikes.
pub const SELECTION_ROOT_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArimaConfig {
    pub max_p: usize,
    pub max_q: usize,
    pub max_d: usize,
    pub kpss: KpssVariant,
}

impl Default for ArimaConfig {
    fn default() -> Self {
        Self {
            max_p: 5,
            max_q: 5,
            max_d: 2,
            kpss: KpssVariant::Level,
        }
    }
}

/// A fitted ARIMA(p, d, q) model together with the series it was fitted to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaModel {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// `τ_1..τ_p`.
    pub ar: Vec<f64>,
    /// `ν_1..ν_q`.
    pub ma: Vec<f64>,
    /// Mean `μ` of the differenced series; the drift when `d = 1`.
    pub mean: f64,
    pub include_mean: bool,
    pub sigma2: f64,
    pub loglik: f64,
    pub aicc: f64,
    /// Observed levels.
    pub series: Vec<f64>,
}

struct Filtered {
    ssq: f64,
    sum_log_f: f64,
    /// `pred[j]` is the state mean for `w_j` given `w_0..w_{j−1}`, `j = 0..=m`.
    pred: Vec<Vec<f64>>,
    /// Standardized innovations `v_t / √F_t`.
    innov: Vec<f64>,
}

/// Harvey state-space form: `α_t = T α_{t−1} + R ε_t`, `z_t = α_t[0]`.
struct StateSpace {
    r: usize,
    phi: Vec<f64>,
    rvec: Vec<f64>,
}

impl StateSpace {
    fn new(ar: &[f64], ma: &[f64]) -> Self {
        let r = ar.len().max(ma.len() + 1);
        let mut phi = vec![0.0; r];
        phi[..ar.len()].copy_from_slice(ar);
        let mut rvec = vec![0.0; r];
        rvec[0] = 1.0;
        rvec[1..=ma.len()].copy_from_slice(ma);
        Self { r, phi, rvec }
    }

    fn step(&self, a: &[f64]) -> Vec<f64> {
        (0..self.r)
            .map(|i| self.phi[i] * a[0] + if i + 1 < self.r { a[i + 1] } else { 0.0 })
            .collect()
    }

    /// Stationary state covariance from `P = T P Tᵀ + R Rᵀ`, solved over the
    /// upper triangle using the sparsity of `T`.
    fn initial_cov(&self) -> Option<Vec<f64>> {
        let r = self.r;
        let idx = |i: usize, j: usize| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            a * r - a * (a + 1) / 2 + b
        };
        let n = r * (r + 1) / 2;
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = nalgebra::DVector::<f64>::zeros(n);
        let phi = &self.phi;
        for i in 0..r {
            for j in i..r {
                let row = idx(i, j);
                a[(row, row)] += 1.0;
                a[(row, idx(0, 0))] -= phi[i] * phi[j];
                if j + 1 < r {
                    a[(row, idx(0, j + 1))] -= phi[i];
                }
                if i + 1 < r {
                    a[(row, idx(i + 1, 0))] -= phi[j];
                }
                if i + 1 < r && j + 1 < r {
                    a[(row, idx(i + 1, j + 1))] -= 1.0;
                }
                rhs[row] = self.rvec[i] * self.rvec[j];
            }
        }
        let sol = a.lu().solve(&rhs)?;
        let mut p = vec![0.0; r * r];
        for i in 0..r {
            for j in 0..r {
                p[i * r + j] = sol[idx(i, j)];
            }
        }
        if p[0] > 0.0 && p.iter().all(|v| v.is_finite()) {
            Some(p)
        } else {
            None
        }
    }

    fn filter(&self, z: &[f64], keep_states: bool) -> Option<Filtered> {
        self.filter_full(z, keep_states, false)
    }

    fn filter_full(&self, z: &[f64], keep_states: bool, keep_innov: bool) -> Option<Filtered> {
        let r = self.r;
        let mut p = self.initial_cov()?;
        let mut col0 = vec![0.0; r];
        let mut a = vec![0.0; r];
        let mut gain = vec![0.0; r];
        let mut ssq = 0.0;
        let mut sum_log_f = 0.0;
        let mut pred = Vec::with_capacity(if keep_states { z.len() + 1 } else { 0 });
        let mut innov = Vec::with_capacity(if keep_innov { z.len() } else { 0 });
        let mut converged = false;
        for &obs in z {
            if keep_states {
                pred.push(a.clone());
            }
            let f = p[0];
            if !(f > 0.0) {
                return None;
            }
            let v = obs - a[0];
            ssq += v * v / f;
            sum_log_f += f.ln();
            if keep_innov {
                innov.push(v / f.sqrt());
            }
            for i in 0..r {
                gain[i] = p[i * r] / f;
            }
            let head = a[0] + gain[0] * v;
            for i in 0..r {
                let next = if i + 1 < r { a[i + 1] + gain[i + 1] * v } else { 0.0 };
                a[i] = self.phi[i] * head + next;
            }
            if !converged {
                // the update zeroes the first row of the filtered covariance,
                // so T P_u Tᵀ reduces to a shifted rank-one downdate
                col0.copy_from_slice(&gain);
                let mut delta: f64 = 0.0;
                for i in 0..r {
                    for j in i..r {
                        let val = if i + 1 < r && j + 1 < r {
                            p[(i + 1) * r + j + 1] - col0[i + 1] * col0[j + 1] * f
                        } else {
                            0.0
                        } + self.rvec[i] * self.rvec[j];
                        delta = delta.max((val - p[i * r + j]).abs());
                        p[i * r + j] = val;
                    }
                }
                for i in 1..r {
                    for j in 0..i {
                        p[i * r + j] = p[j * r + i];
                    }
                }
                converged = delta < 1e-12;
            }
        }
        if keep_states {
            pred.push(a);
        }
        Some(Filtered {
            ssq,
            sum_log_f,
            pred,
            innov,
        })
    }
}

/// Maps unconstrained values to the coefficients of a polynomial
/// `1 − Σ c_i B^i` with all roots outside the unit circle, through partial
/// autocorrelations `tanh(u_i)` and the Durbin–Levinson recursion.
fn pacf_to_coeffs(u: &[f64]) -> Vec<f64> {
    let mut c: Vec<f64> = Vec::with_capacity(u.len());
    for (k, &uk) in u.iter().enumerate() {
        let r = uk.tanh();
        let prev = c.clone();
        for j in 0..k {
            c[j] = prev[j] - r * prev[k - 1 - j];
        }
        c.push(r);
    }
    c
}

#[cfg(test)]
fn coeffs_to_pacf(c: &[f64]) -> Option<Vec<f64>> {
    let mut cur = c.to_vec();
    let mut u = vec![0.0; c.len()];
    for k in (0..c.len()).rev() {
        let r = cur[k];
        if r.abs() >= 1.0 {
            return None;
        }
        u[k] = r.atanh();
        let denom = 1.0 - r * r;
        let prev: Vec<f64> = (0..k).map(|j| (cur[j] + r * cur[k - 1 - j]) / denom).collect();
        cur = prev;
    }
    Some(u)
}

fn unpack(u: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    let ar = pacf_to_coeffs(&u[..p]);
    let ma = pacf_to_coeffs(&u[p..]).into_iter().map(|c| -c).collect();
    (ar, ma)
}

/// Largest modulus of the reciprocal roots of `1 − Σ c_i z^i`.
fn max_reciprocal_root(c: &[f64]) -> f64 {
    let k = c.len();
    if k == 0 {
        return 0.0;
    }
    let mut m = DMatrix::zeros(k, k);
    for j in 0..k {
        m[(0, j)] = c[j];
    }
    for i in 1..k {
        m[(i, i - 1)] = 1.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// True when the AR and MA polynomials have every root outside the unit
/// circle by at least the tolerance.
pub fn roots_ok(ar: &[f64], ma: &[f64]) -> bool {
    roots_clear(ar, ma, ROOT_TOL)
}

/// True when every AR and MA root has modulus at least `1 + margin`.
pub fn roots_clear(ar: &[f64], ma: &[f64], margin: f64) -> bool {
    let neg: Vec<f64> = ma.iter().map(|v| -v).collect();
    let limit = 1.0 / (1.0 + margin);
    max_reciprocal_root(ar) < limit && max_reciprocal_root(&neg) < limit
}

/// Conditional residuals `e_t`, `t = p..m`, with pre-sample shocks at zero.
fn css_residuals(z: &[f64], ar: &[f64], ma: &[f64], out: &mut Vec<f64>) -> bool {
    let p = ar.len();
    out.clear();
    for t in p..z.len() {
        let mut v = z[t];
        for (i, a) in ar.iter().enumerate() {
            v -= a * z[t - 1 - i];
        }
        for (j, b) in ma.iter().enumerate() {
            if t >= p + 1 + j {
                v -= b * out[t - p - 1 - j];
            }
        }
        out.push(v);
    }
    out.iter().all(|v| v.is_finite())
}

/// Residuals whose sum of squares is `S · (Π F_t)^{1/m}`, a monotone
/// transform of the concentrated Gaussian likelihood.
fn ml_residuals(z: &[f64], ar: &[f64], ma: &[f64], out: &mut Vec<f64>) -> bool {
    let Some(f) = StateSpace::new(ar, ma).filter_full(z, false, true) else {
        return false;
    };
    let g = (f.sum_log_f / (2.0 * z.len() as f64)).exp();
    out.clear();
    out.extend(f.innov.iter().map(|v| v * g));
    g.is_finite()
}

fn aicc(loglik: f64, k: usize, n: usize) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    if n <= k + 1 {
        return f64::INFINITY;
    }
    -2.0 * loglik + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0)
}

fn sample_mean(w: &[f64]) -> f64 {
    w.iter().sum::<f64>() / w.len() as f64
}

fn is_flat(z: &[f64], scale: f64) -> bool {
    z.iter().all(|v| v.abs() <= 1e-10 * scale)
}

impl ArimaModel {
    /// Fits ARIMA(p, d, q) by conditional sum of squares followed by exact
    /// maximum likelihood, with `μ` fixed at the sample mean of the
    /// differenced series when `include_mean` holds.
    pub fn fit(series: &[f64], p: usize, d: usize, q: usize, include_mean: bool) -> Result<Self> {
        if d > 2 {
            return Err(Error::Parameter(format!("differencing order {d} exceeds 2")));
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("series contains non-finite values".into()));
        }
        let mut w = series.to_vec();
        for _ in 0..d {
            w = difference(&w);
        }
        let m = w.len();
        let k = p + q + usize::from(include_mean) + 1;
        if m < k + 2 || m < p + q + 3 {
            return Err(Error::InsufficientData { needed: k + 2 + d, got: series.len() });
        }
        let mean = if include_mean { sample_mean(&w) } else { 0.0 };
        let z: Vec<f64> = w.iter().map(|v| v - mean).collect();
        let scale = series.iter().map(|v| v.abs()).fold(1.0, f64::max);
        if is_flat(&z, scale) {
            if p + q > 0 {
                return Err(Error::Numerical("zero-variance differenced series".into()));
            }
            return Ok(Self {
                p,
                d,
                q,
                ar: vec![],
                ma: vec![],
                mean,
                include_mean,
                sigma2: 0.0,
                loglik: f64::INFINITY,
                aicc: f64::NEG_INFINITY,
                series: series.to_vec(),
            });
        }
        let nparam = p + q;
        let (ar, ma) = if nparam == 0 {
            (vec![], vec![])
        } else {
            let x0 = vec![0.0; nparam];
            let (u_css, _) = levenberg_marquardt(
                |u, out| {
                    let (a, b) = unpack(u, p);
                    css_residuals(&z, &a, &b, out)
                },
                &x0,
                60,
            );
            let (u_ml, cost) = levenberg_marquardt(
                |u, out| {
                    let (a, b) = unpack(u, p);
                    ml_residuals(&z, &a, &b, out)
                },
                &u_css,
                25,
            );
            if !cost.is_finite() {
                return Err(Error::Numerical(format!("ARIMA({p},{d},{q}) likelihood is not finite")));
            }
            unpack(&u_ml, p)
        };
        let filt = StateSpace::new(&ar, &ma)
            .filter(&z, false)
            .ok_or_else(|| Error::Numerical("Kalman filter failed".into()))?;
        let mf = m as f64;
        let sigma2 = filt.ssq / mf;
        let loglik = -0.5 * (mf * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) + filt.sum_log_f);
        Ok(Self {
            p,
            d,
            q,
            ar,
            ma,
            mean,
            include_mean,
            sigma2,
            loglik,
            aicc: aicc(loglik, k, m),
            series: series.to_vec(),
        })
    }

    /// Builds a model with given coefficients for `series` without estimation.
    pub fn with_parameters(
        series: &[f64],
        d: usize,
        ar: Vec<f64>,
        ma: Vec<f64>,
        mean: f64,
        include_mean: bool,
    ) -> Result<Self> {
        if d > 2 {
            return Err(Error::Parameter(format!("differencing order {d} exceeds 2")));
        }
        if !roots_ok(&ar, &ma) {
            return Err(Error::Parameter("coefficients violate the root conditions".into()));
        }
        let mut model = Self {
            p: ar.len(),
            d,
            q: ma.len(),
            ar,
            ma,
            mean,
            include_mean,
            sigma2: f64::NAN,
            loglik: f64::NAN,
            aicc: f64::NAN,
            series: series.to_vec(),
        };
        let z = model.centered_differences();
        if let Some(f) = model.state_space().filter(&z, false) {
            model.sigma2 = f.ssq / z.len().max(1) as f64;
        }
        Ok(model)
    }

    /// Intercept `ψ = μ (1 − Σ τ_i)`.
    pub fn intercept(&self) -> f64 {
        self.mean * (1.0 - self.ar.iter().sum::<f64>())
    }

    /// Number of estimated parameters counted by the information criterion.
    pub fn n_params(&self) -> usize {
        self.p + self.q + usize::from(self.include_mean) + 1
    }

    fn state_space(&self) -> StateSpace {
        StateSpace::new(&self.ar, &self.ma)
    }

    fn centered_differences(&self) -> Vec<f64> {
        let mut w = self.series.clone();
        for _ in 0..self.d {
            w = difference(&w);
        }
        w.iter().map(|v| v - self.mean).collect()
    }

    fn predicted_states(&self) -> Vec<Vec<f64>> {
        let z = self.centered_differences();
        let ss = self.state_space();
        match ss.filter(&z, true) {
            Some(f) => f.pred,
            None => vec![vec![0.0; ss.r]; z.len() + 1],
        }
    }

    /// Forecasts levels at `origin + 1 ..= origin + h` from the state
    /// predicted with data up to index `origin`.
    fn forecast_from(&self, pred: &[Vec<f64>], origin: usize, h: usize) -> Vec<f64> {
        let ss = self.state_space();
        let idx = (origin + 1).saturating_sub(self.d);
        let mut a = pred[idx.min(pred.len() - 1)].clone();
        let mut w_hat = Vec::with_capacity(h);
        for _ in 0..h {
            w_hat.push(a[0] + self.mean);
            a = ss.step(&a);
        }
        let x = &self.series;
        match self.d {
            0 => w_hat,
            1 => {
                let mut level = x[origin];
                w_hat
                    .iter()
                    .map(|w| {
                        level += w;
                        level
                    })
                    .collect()
            }
            _ => {
                let mut level = x[origin];
                let mut slope = if origin >= 1 { x[origin] - x[origin - 1] } else { 0.0 };
                w_hat
                    .iter()
                    .map(|w| {
                        slope += w;
                        level += slope;
                        level
                    })
                    .collect()
            }
        }
    }

    /// Point forecasts for horizons `1..=h`.
    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        if h == 0 {
            return Err(Error::Range("forecast horizon must be positive".into()));
        }
        let pred = self.predicted_states();
        Ok(self.forecast_from(&pred, self.series.len() - 1, h))
    }

    /// `x_t − x̂_{t|t−h}` for `t = h+1..n` with the parameters held fixed.
    pub fn insample_errors(&self, h: usize) -> Result<Vec<f64>> {
        Ok(self.insample_errors_all(h)?.pop().unwrap_or_default())
    }

    /// In-sample error vectors for every horizon `1..=h_max`.
    pub fn insample_errors_all(&self, h_max: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.series.len();
        if h_max == 0 || h_max >= n {
            return Err(Error::Range(format!("horizon {h_max} must lie in 1..{n}")));
        }
        let pred = self.predicted_states();
        let mut out = vec![Vec::new(); h_max];
        for origin in 0..n - 1 {
            let reach = h_max.min(n - 1 - origin);
            let fc = self.forecast_from(&pred, origin, reach);
            for (i, f) in fc.iter().enumerate() {
                out[i].push(self.series[origin + 1 + i] - f);
            }
        }
        Ok(out)
    }
}

/// Automatic ARIMA: `d` by successive KPSS tests, then the AICc-best
/// `(p, q, constant)` over the search grid.
pub fn fit_arima_auto(series: &[f64], config: &ArimaConfig) -> Result<ArimaModel> {
    let n = series.len();
    if n < 15 {
        return Err(Error::InsufficientData { needed: 15, got: n });
    }
    let scale = series.iter().map(|v| v.abs()).fold(1.0, f64::max);
    let first = series[0];
    if series.iter().all(|v| (v - first).abs() <= 1e-12 * scale) {
        return ArimaModel::fit(series, 0, 0, 0, true);
    }
    let d = select_d(series, config.max_d.min(2), config.kpss)?;
    let mut candidates = Vec::new();
    for p in 0..=config.max_p {
        for q in 0..=config.max_q {
            for c in [true, false] {
                if c && d > 1 {
                    continue;
                }
                candidates.push((p, q, c));
            }
        }
    }
    let fits: Vec<Option<ArimaModel>> = candidates
        .par_iter()
        .map(|&(p, q, c)| match ArimaModel::fit(series, p, d, q, c) {
            Ok(m) if roots_clear(&m.ar, &m.ma, SELECTION_ROOT_MARGIN) && !m.aicc.is_nan() => Some(m),
            _ => None,
        })
        .collect();
    let best = fits.into_iter().flatten().min_by(|a, b| {
        a.aicc
            .total_cmp(&b.aicc)
            .then(a.n_params().cmp(&b.n_params()))
            .then(a.p.cmp(&b.p))
            .then(a.q.cmp(&b.q))
    });
    match best {
        Some(m) => Ok(m),
        None => {
            log::warn!("no ARIMA candidate could be fitted; using a random walk with drift");
            ArimaModel::fit(series, 0, 1, 0, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; n];
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        prev /= (1.0 - phi * phi).sqrt();
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e;
            *v = prev;
        }
        x
    }

    #[test]
    fn pacf_round_trip() {
        let u = [0.3, -1.2, 0.7];
        let c = pacf_to_coeffs(&u);
        let back = coeffs_to_pacf(&c).unwrap();
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!(roots_ok(&c, &[]));
    }

    #[test]
    fn stationary_covariance_of_ar1() {
        let ss = StateSpace::new(&[0.6], &[]);
        let p = ss.initial_cov().unwrap();
        assert!((p[0] - 1.0 / (1.0 - 0.36)).abs() < 1e-12);
    }

    #[test]
    fn ma1_covariance() {
        // var of z = 1 + θ², state (z_t, θ ε_t)
        let ss = StateSpace::new(&[], &[0.5]);
        let p = ss.initial_cov().unwrap();
        assert!((p[0] - 1.25).abs() < 1e-12);
        assert!((p[3] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn exact_likelihood_of_ar1_matches_closed_form() {
        let z = ar1(50, 0.5, 3);
        let phi: f64 = 0.5;
        let f = StateSpace::new(&[phi], &[]).filter(&z, false).unwrap();
        let mut ssq = z[0] * z[0] * (1.0 - phi * phi);
        for t in 1..z.len() {
            ssq += (z[t] - phi * z[t - 1]).powi(2);
        }
        assert!((f.ssq - ssq).abs() < 1e-9);
        assert!((f.sum_log_f + (1.0 - phi * phi).ln()).abs() < 1e-9);
    }

    #[test]
    fn random_walk_forecast_is_flat() {
        let x = vec![1.0, 3.0, 2.0, 5.0, 4.5];
        let m = ArimaModel::with_parameters(&x, 1, vec![], vec![], 0.0, false).unwrap();
        assert_eq!(m.forecast(4).unwrap(), vec![4.5; 4]);
        let e = m.insample_errors(1).unwrap();
        assert_eq!(e, vec![2.0, -1.0, 3.0, -0.5]);
        assert!(m.forecast(0).is_err());
    }

    #[test]
    fn ar1_recursion_by_hand() {
        let x = vec![1.0, -2.0, 3.0, 8.0];
        let m = ArimaModel::with_parameters(&x, 0, vec![0.5], vec![], 0.0, false).unwrap();
        let f = m.forecast(3).unwrap();
        for (a, b) in f.iter().zip([4.0, 2.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_mean_forecast() {
        let x = vec![2.0, 4.0, 3.0, 5.0, 1.0];
        let m = ArimaModel::with_parameters(&x, 0, vec![], vec![], 3.0, true).unwrap();
        assert_eq!(m.forecast(3).unwrap(), vec![3.0; 3]);
        assert_eq!(m.intercept(), 3.0);
    }

    #[test]
    fn error_lengths_and_one_step_consistency() {
        let x = ar1(100, 0.4, 9);
        let m = ArimaModel::fit(&x, 1, 0, 1, true).unwrap();
        assert_eq!(m.insample_errors(7).unwrap().len(), 93);
        let all = m.insample_errors_all(3).unwrap();
        assert_eq!(all.iter().map(Vec::len).collect::<Vec<_>>(), vec![99, 98, 97]);
        // one-step forecast of the last point from the penultimate origin
        let head = ArimaModel::with_parameters(&x[..99], 0, m.ar.clone(), m.ma.clone(), m.mean, true).unwrap();
        let f1 = head.forecast(1).unwrap()[0];
        assert!((x[99] - f1 - all[0][98]).abs() < 1e-10);
    }

    #[test]
    fn second_difference_integration() {
        let x: Vec<f64> = (0..10).map(|t| (t * t) as f64).collect();
        let m = ArimaModel::with_parameters(&x, 2, vec![], vec![], 0.0, false).unwrap();
        // Δx at the end is 17; flat second differences keep the slope
        assert_eq!(m.forecast(2).unwrap(), vec![81.0 + 17.0, 81.0 + 34.0]);
    }

    #[test]
    fn constant_series_is_degenerate() {
        let m = fit_arima_auto(&[2.5; 30], &ArimaConfig::default()).unwrap();
        assert_eq!((m.p, m.d, m.q), (0, 0, 0));
        assert_eq!(m.mean, 2.5);
        assert_eq!(m.sigma2, 0.0);
        assert_eq!(m.forecast(3).unwrap(), vec![2.5; 3]);
    }

    #[test]
    fn deterministic_trend_has_zero_errors() {
        let x: Vec<f64> = (0..40).map(|t| 1.0 + 0.5 * t as f64).collect();
        let m = fit_arima_auto(&x, &ArimaConfig::default()).unwrap();
        assert_eq!(m.d, 1);
        for e in m.insample_errors(3).unwrap() {
            assert!(e.abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_ar1() {
        let x = ar1(500, 0.6, 11);
        let m = fit_arima_auto(&x, &ArimaConfig::default()).unwrap();
        assert_eq!(m.d, 0);
        assert!(roots_ok(&m.ar, &m.ma));
        let ml = ArimaModel::fit(&x, 1, 0, 0, true).unwrap();
        assert!((ml.ar[0] - 0.6).abs() < 0.1, "{:?}", ml.ar);
    }
}
