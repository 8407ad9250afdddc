//! Additive-error exponential smoothing (ANN, AAN, AAdN) in innovations
//! state-space form.
//!
//! For fixed smoothing parameters the one-step errors are affine in the
//! initial level and trend, so those are concentrated out by least squares
//! and only the smoothing parameters are searched numerically.

use serde::{Deserialize, Serialize};

use super::optim::nelder_mead;
use crate::error::{Error, Result};

const PHI_MIN: f64 = 0.8;
const PHI_MAX: f64 = 0.98;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtsForm {
    #[serde(rename = "ANN")]
    Ann,
    #[serde(rename = "AAN")]
    Aan,
    #[serde(rename = "AAdN")]
    AadN,
}

impl EtsForm {
    pub const ALL: [EtsForm; 3] = [EtsForm::Ann, EtsForm::Aan, EtsForm::AadN];

    fn n_smoothing(self) -> usize {
        match self {
            EtsForm::Ann => 1,
            EtsForm::Aan => 2,
            EtsForm::AadN => 3,
        }
    }

    fn has_trend(self) -> bool {
        self != EtsForm::Ann
    }

    /// Smoothing parameters, initial states and the innovation variance.
    pub fn n_params(self) -> usize {
        self.n_smoothing() + if self.has_trend() { 2 } else { 1 } + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtsModel {
    pub form: EtsForm,
    pub alpha: f64,
    /// Trend smoothing, `0 < β < α`; zero for ANN.
    pub beta: f64,
    /// Damping in `[0.8, 0.98]` for AAdN, one otherwise.
    pub phi: f64,
    pub initial_level: f64,
    pub initial_trend: f64,
    pub sigma2: f64,
    pub aicc: f64,
    pub series: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Params {
    form: EtsForm,
    alpha: f64,
    beta: f64,
    phi: f64,
}

impl Params {
    fn from_unconstrained(form: EtsForm, u: &[f64]) -> Self {
        let logistic = |x: f64| 1.0 / (1.0 + (-x).exp());
        let alpha = logistic(u[0]);
        let beta = if form.has_trend() { alpha * logistic(u[1]) } else { 0.0 };
        let phi = match form {
            EtsForm::AadN => PHI_MIN + (PHI_MAX - PHI_MIN) * logistic(u[2]),
            _ => 1.0,
        };
        Self { form, alpha, beta, phi }
    }

    /// One-step errors and the states after each observation.
    fn run(&self, y: &[f64], l0: f64, b0: f64, states: Option<&mut Vec<(f64, f64)>>) -> Vec<f64> {
        let (mut l, mut b) = (l0, if self.form.has_trend() { b0 } else { 0.0 });
        let mut errs = Vec::with_capacity(y.len());
        let mut st = states;
        for &obs in y {
            let damped = self.phi * b;
            let e = obs - (l + damped);
            l = l + damped + self.alpha * e;
            b = damped + self.beta * e;
            errs.push(e);
            if let Some(s) = st.as_deref_mut() {
                s.push((l, b));
            }
        }
        errs
    }

    /// Least-squares initial states and the resulting sum of squared errors.
    fn concentrate(&self, y: &[f64]) -> (f64, f64, f64) {
        let e0 = self.run(y, 0.0, 0.0, None);
        let el = self.run(y, 1.0, 0.0, None);
        let dl: Vec<f64> = e0.iter().zip(&el).map(|(a, b)| a - b).collect();
        let (l0, b0) = if self.form.has_trend() {
            let eb = self.run(y, 0.0, 1.0, None);
            let db: Vec<f64> = e0.iter().zip(&eb).map(|(a, b)| a - b).collect();
            let sll: f64 = dl.iter().map(|v| v * v).sum();
            let sbb: f64 = db.iter().map(|v| v * v).sum();
            let slb: f64 = dl.iter().zip(&db).map(|(a, b)| a * b).sum();
            let sly: f64 = dl.iter().zip(&e0).map(|(a, b)| a * b).sum();
            let sby: f64 = db.iter().zip(&e0).map(|(a, b)| a * b).sum();
            let det = sll * sbb - slb * slb;
            if det.abs() > 1e-12 * sll * sbb {
                ((sbb * sly - slb * sby) / det, (sll * sby - slb * sly) / det)
            } else {
                (sly / sll, 0.0)
            }
        } else {
            let sll: f64 = dl.iter().map(|v| v * v).sum();
            (dl.iter().zip(&e0).map(|(a, b)| a * b).sum::<f64>() / sll, 0.0)
        };
        let sse = self.run(y, l0, b0, None).iter().map(|e| e * e).sum();
        (l0, b0, sse)
    }
}

fn floored_variance(sse: f64, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>() / n;
    (sse / n).max(1e-24 * scale)
}

fn aicc_of(sigma2: f64, n: usize, k: usize) -> f64 {
    let (nf, kf) = (n as f64, k as f64);
    let m2ll = nf * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    if n <= k + 1 {
        return f64::INFINITY;
    }
    m2ll + 2.0 * kf + 2.0 * kf * (kf + 1.0) / (nf - kf - 1.0)
}

impl EtsModel {
    fn from_params(par: Params, y: &[f64]) -> Self {
        let (l0, b0, sse) = par.concentrate(y);
        let sigma2 = sse / y.len() as f64;
        Self {
            form: par.form,
            alpha: par.alpha,
            beta: par.beta,
            phi: par.phi,
            initial_level: l0,
            initial_trend: b0,
            sigma2,
            aicc: aicc_of(floored_variance(sse, y), y.len(), par.form.n_params()),
            series: y.to_vec(),
        }
    }

    /// Fits one form by maximizing the concentrated Gaussian likelihood.
    pub fn fit(series: &[f64], form: EtsForm) -> Result<Self> {
        if series.len() < 10 {
            return Err(Error::InsufficientData { needed: 10, got: series.len() });
        }
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("series contains non-finite values".into()));
        }
        let u0 = [0.0, (0.1f64 / 0.9).ln(), 0.2];
        let x0 = &u0[..form.n_smoothing()];
        let (u, cost) = nelder_mead(
            |u| {
                let par = Params::from_unconstrained(form, u);
                let (_, _, sse) = par.concentrate(series);
                floored_variance(sse, series).ln()
            },
            x0,
            0.6,
            400,
            1e-12,
        );
        if !cost.is_finite() || cost >= 1e300 {
            return Err(Error::Numerical(format!("{form:?} likelihood is not finite")));
        }
        Ok(Self::from_params(Params::from_unconstrained(form, &u), series))
    }

    /// Builds a model with the given smoothing parameters, estimating only
    /// the initial states.
    pub fn with_parameters(series: &[f64], form: EtsForm, alpha: f64, beta: f64, phi: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Parameter(format!("alpha {alpha} outside (0, 1)")));
        }
        if form.has_trend() && !(beta > 0.0 && beta < alpha) {
            return Err(Error::Parameter(format!("beta {beta} outside (0, alpha)")));
        }
        if form == EtsForm::AadN && !(PHI_MIN..=PHI_MAX).contains(&phi) {
            return Err(Error::Parameter(format!("phi {phi} outside [0.8, 0.98]")));
        }
        if series.len() < 2 {
            return Err(Error::InsufficientData { needed: 2, got: series.len() });
        }
        let par = Params {
            form,
            alpha,
            beta: if form.has_trend() { beta } else { 0.0 },
            phi: if form == EtsForm::AadN { phi } else { 1.0 },
        };
        Ok(Self::from_params(par, series))
    }

    fn params(&self) -> Params {
        Params {
            form: self.form,
            alpha: self.alpha,
            beta: self.beta,
            phi: self.phi,
        }
    }

    fn states(&self) -> Vec<(f64, f64)> {
        let mut st = Vec::with_capacity(self.series.len());
        self.params()
            .run(&self.series, self.initial_level, self.initial_trend, Some(&mut st));
        st
    }

    fn project(&self, (l, b): (f64, f64), h: usize) -> Vec<f64> {
        let mut damp = 0.0;
        let mut pow = 1.0;
        (0..h)
            .map(|_| {
                pow *= self.phi;
                damp += pow;
                l + damp * b
            })
            .collect()
    }

    pub fn forecast(&self, h: usize) -> Result<Vec<f64>> {
        if h == 0 {
            return Err(Error::Range("forecast horizon must be positive".into()));
        }
        let last = *self.states().last().expect("series is nonempty");
        Ok(self.project(last, h))
    }

    /// In-sample error vectors `y_t − ŷ_{t|t−h}` for every horizon `1..=h_max`.
    pub fn insample_errors_all(&self, h_max: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.series.len();
        if h_max == 0 || h_max >= n {
            return Err(Error::Range(format!("horizon {h_max} must lie in 1..{n}")));
        }
        let states = self.states();
        let mut out = vec![Vec::new(); h_max];
        for origin in 0..n - 1 {
            let reach = h_max.min(n - 1 - origin);
            for (i, f) in self.project(states[origin], reach).iter().enumerate() {
                out[i].push(self.series[origin + 1 + i] - f);
            }
        }
        Ok(out)
    }
}

/// Fits ANN, AAN and AAdN and returns the one with the smallest AICc.
pub fn fit_ets_auto(series: &[f64]) -> Result<EtsModel> {
    if series.len() < 10 {
        return Err(Error::InsufficientData { needed: 10, got: series.len() });
    }
    let best = EtsForm::ALL
        .iter()
        .filter_map(|&f| EtsModel::fit(series, f).ok())
        .filter(|m| m.aicc.is_finite())
        .min_by(|a, b| a.aicc.total_cmp(&b.aicc));
    match best {
        Some(m) => Ok(m),
        None => {
            log::warn!("no exponential smoothing form could be fitted; using ANN with alpha = 0.5");
            EtsModel::with_parameters(series, EtsForm::Ann, 0.5, 0.0, 1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_selects_ann() {
        let m = fit_ets_auto(&[3.25; 20]).unwrap();
        assert_eq!(m.form, EtsForm::Ann);
        for f in m.forecast(5).unwrap() {
            assert!((f - 3.25).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_trend_continues_the_line() {
        let y: Vec<f64> = (0..30).map(|t| 2.0 - 0.3 * t as f64).collect();
        let m = fit_ets_auto(&y).unwrap();
        assert_eq!(m.form, EtsForm::Aan);
        let f = m.forecast(5).unwrap();
        for (h, v) in f.iter().enumerate() {
            let want = 2.0 - 0.3 * (30 + h) as f64;
            assert!((v - want).abs() < 1e-6, "{v} vs {want}");
        }
    }

    #[test]
    fn alpha_near_one_is_naive() {
        let y = [1.0, 4.0, 2.0, 7.0, 3.0, 5.0, 6.0, 2.0, 8.0, 4.5];
        let m = EtsModel::with_parameters(&y, EtsForm::Ann, 0.999, 0.0, 1.0).unwrap();
        for f in m.forecast(3).unwrap() {
            assert!((f - 4.5).abs() < 1e-2);
        }
        let e = m.insample_errors_all(1).unwrap();
        for (t, v) in e[0].iter().enumerate() {
            assert!((v - (y[t + 1] - y[t])).abs() < 1e-2);
        }
    }

    #[test]
    fn damped_forecast_sums_powers() {
        let y: Vec<f64> = (0..15).map(|t| (t as f64 * 0.7).sin() + 0.1 * t as f64).collect();
        let m = EtsModel::with_parameters(&y, EtsForm::AadN, 0.4, 0.1, 0.9).unwrap();
        let (l, b) = *m.states().last().unwrap();
        let f = m.forecast(2).unwrap();
        assert!((f[0] - (l + 0.9 * b)).abs() < 1e-12);
        assert!((f[1] - (l + (0.9 + 0.81) * b)).abs() < 1e-12);
    }

    #[test]
    fn parameter_ranges() {
        let y = [1.0; 12];
        assert!(EtsModel::with_parameters(&y, EtsForm::Ann, 1.0, 0.0, 1.0).is_err());
        assert!(EtsModel::with_parameters(&y, EtsForm::Aan, 0.3, 0.4, 1.0).is_err());
        assert!(EtsModel::with_parameters(&y, EtsForm::AadN, 0.3, 0.1, 0.99).is_err());
        let m = fit_ets_auto(&[0.1, 0.5, 0.2, 0.9, 0.4, 0.8, 0.3, 0.6, 0.7, 0.2, 0.5]).unwrap();
        assert!(m.alpha > 0.0 && m.alpha < 1.0);
        if m.form != EtsForm::Ann {
            assert!(m.beta > 0.0 && m.beta < m.alpha);
        }
    }

    #[test]
    fn deterministic_selection() {
        let y: Vec<f64> = (0..40).map(|t| ((t * 7919) % 13) as f64 + 0.2 * t as f64).collect();
        let a = fit_ets_auto(&y).unwrap();
        let b = fit_ets_auto(&y).unwrap();
        assert_eq!(a, b);
    }
}
