//! Derivative-free local minimization used by the likelihood fits.

use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;

struct Objective<F>(F);

impl<F: Fn(&[f64]) -> f64> CostFunction for Objective<F> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        let v = (self.0)(p);
        Ok(if v.is_finite() { v } else { 1e300 })
    }
}

/// Nelder–Mead from `x0` with an axis-aligned initial simplex of size `step`.
/// Returns the best point and its objective value.
pub(crate) fn nelder_mead(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iters: u64,
    tol: f64,
) -> (Vec<f64>, f64) {
    if x0.is_empty() {
        let v = f(x0);
        return (Vec::new(), v);
    }
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(tol)
        .expect("tolerance is nonnegative");
    let fallback = (x0.to_vec(), f(x0));
    match Executor::new(Objective(&f), solver)
        .configure(|s| s.max_iters(max_iters))
        .run()
    {
        Ok(res) => {
            let state = res.state();
            match state.get_best_param() {
                Some(p) if state.get_best_cost() <= fallback.1 || !fallback.1.is_finite() => {
                    (p.clone(), state.get_best_cost())
                }
                _ => fallback,
            }
        }
        Err(_) => fallback,
    }
}

/// Levenberg–Marquardt minimization of `‖r(x)‖²` with a forward-difference
/// Jacobian. `resid` fills its output buffer and returns `false` when `x` is
/// infeasible. Returns the best point and its sum of squares.
pub(crate) fn levenberg_marquardt(
    resid: impl Fn(&[f64], &mut Vec<f64>) -> bool,
    x0: &[f64],
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let k = x0.len();
    let mut x = x0.to_vec();
    let mut r = Vec::new();
    if !resid(&x, &mut r) {
        return (x, f64::INFINITY);
    }
    let ssq = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>();
    let mut s = ssq(&r);
    if k == 0 || !s.is_finite() {
        return (x, s);
    }
    let m = r.len();
    let mut jac = vec![0.0; m * k];
    let mut trial = Vec::new();
    let mut mu = -1.0;
    for _ in 0..max_iters {
        for j in 0..k {
            let h = 1e-7 * x[j].abs().max(1.0);
            let mut xp = x.clone();
            xp[j] += h;
            if !resid(&xp, &mut trial) {
                xp[j] = x[j] - h;
                if !resid(&xp, &mut trial) {
                    return (x, s);
                }
                for i in 0..m {
                    jac[i * k + j] = (r[i] - trial[i]) / h;
                }
            } else {
                for i in 0..m {
                    jac[i * k + j] = (trial[i] - r[i]) / h;
                }
            }
        }
        let mut a = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut g = nalgebra::DVector::<f64>::zeros(k);
        for i in 0..m {
            let row = &jac[i * k..(i + 1) * k];
            for p in 0..k {
                g[p] += row[p] * r[i];
                for q in p..k {
                    a[(p, q)] += row[p] * row[q];
                }
            }
        }
        for p in 0..k {
            for q in 0..p {
                a[(p, q)] = a[(q, p)];
            }
        }
        let diag_max = (0..k).map(|p| a[(p, p)]).fold(0.0, f64::max);
        if !(diag_max > 0.0) {
            break;
        }
        if mu < 0.0 {
            mu = 1e-3 * diag_max;
        }
        let mut improved = false;
        while mu <= 1e12 * diag_max {
            let mut damped = a.clone();
            for p in 0..k {
                damped[(p, p)] += mu * a[(p, p)].max(1e-12 * diag_max);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-&g))) else {
                mu *= 4.0;
                continue;
            };
            let xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            if resid(&xn, &mut trial) {
                let sn = ssq(&trial);
                if sn.is_finite() && sn < s {
                    let rel = (s - sn) / s.max(1e-300);
                    let small_step = step.norm() <= 1e-9 * (1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt());
                    x = xn;
                    std::mem::swap(&mut r, &mut trial);
                    s = sn;
                    mu = (mu / 3.0).max(1e-15 * diag_max);
                    improved = !(rel < 1e-9 || small_step);
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    (x, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, v) = nelder_mead(f, &[-1.0, 1.0], 0.5, 5000, 1e-14);
        assert!(v < 1e-8);
        assert!((x[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn levenberg_marquardt_fits_exponential_decay() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        let y: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let (x, s) = levenberg_marquardt(
            |p, out| {
                out.clear();
                out.extend(t.iter().zip(&y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y));
                true
            },
            &[1.0, 0.1],
            200,
        );
        assert!(s < 1e-16, "{s}");
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn empty_parameter_vector() {
        let (x, v) = nelder_mead(|_| 3.0, &[], 1.0, 10, 1e-8);
        assert!(x.is_empty());
        assert_eq!(v, 3.0);
    }
}
