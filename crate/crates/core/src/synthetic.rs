//! Seeded generators for synthetic functional time series and mortality
//! tables in the Human Mortality Database text layout.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::fts::{AgeGrid, Curve, FunctionalTimeSeries, ScaleTag};
use crate::ingest::{AgeLabel, MortalityTable, Sex};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    Distribution::<f64>::sample(&StandardNormal, rng)
}

/// `f` sampled on `grid` and scaled to unit L² norm.
pub fn unit_curve(grid: &AgeGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let c = Curve::from_fn(grid, f).expect("finite curve");
    let norm = c.norm_sq().sqrt();
    c.values().iter().map(|v| v / norm).collect()
}

/// Three L²-orthonormal shapes on `[0, 1]`-scaled grids: a shifted sine, a
/// full-period sine and a cosine, orthogonalised by Gram–Schmidt.
pub fn orthonormal_shapes(grid: &AgeGrid) -> [Vec<f64>; 3] {
    let lo = grid.points()[0];
    let span = grid.points()[grid.len() - 1] - lo;
    let s = move |u: f64| (u - lo) / span;
    let raw = [
        Curve::from_fn(grid, |u| (PI * s(u)).sin() + 0.3).unwrap().into_values(),
        Curve::from_fn(grid, |u| (2.0 * PI * s(u)).sin()).unwrap().into_values(),
        Curve::from_fn(grid, |u| (3.0 * PI * s(u)).cos()).unwrap().into_values(),
    ];
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(3);
    for mut v in raw {
        for q in &out {
            let ip = grid.integrate(&v.iter().zip(q).map(|(a, b)| a * b).collect::<Vec<_>>());
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= ip * b);
        }
        let norm = grid.integrate(&v.iter().map(|a| a * a).collect::<Vec<_>>()).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        out.push(v);
    }
    [out[0].clone(), out[1].clone(), out[2].clone()]
}

fn baseline(grid: &AgeGrid) -> Vec<f64> {
    let lo = grid.points()[0];
    let span = grid.points()[grid.len() - 1] - lo;
    grid.points().iter().map(|u| -2.0 - (u - lo) / span).collect()
}

fn assemble(grid: &AgeGrid, rows: Vec<Vec<f64>>, first_year: i32) -> FunctionalTimeSeries {
    FunctionalTimeSeries::from_rows(&rows, grid.clone(), first_year, ScaleTag::Log10Rate)
        .expect("generated rows are well formed")
}

/// `X_t = μ + a_t φ` with `a_t` a Gaussian random walk and no noise.
/// Returns the series and `φ`.
pub fn random_walk_factor(n: usize, grid: &AgeGrid, seed: u64) -> (FunctionalTimeSeries, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [phi, _, _] = orthonormal_shapes(grid);
    let base = baseline(grid);
    let mut a = 0.0;
    let rows = (0..n)
        .map(|_| {
            a += normal(&mut rng);
            base.iter().zip(&phi).map(|(b, f)| b + a * f).collect()
        })
        .collect();
    (assemble(grid, rows, 1900), phi)
}

/// A random-walk factor along `φ₁` plus a stationary AR(1) factor
/// (coefficient `rho`, innovation s.d. `sd`) along the orthogonal `φ₂`.
pub fn random_walk_plus_ar1(n: usize, grid: &AgeGrid, rho: f64, sd: f64, seed: u64) -> FunctionalTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [phi1, phi2, _] = orthonormal_shapes(grid);
    let base = baseline(grid);
    let (mut a, mut g) = (0.0, 0.0);
    let rows = (0..n)
        .map(|_| {
            a += normal(&mut rng);
            g = rho * g + sd * normal(&mut rng);
            (0..grid.len()).map(|j| base[j] + a * phi1[j] + g * phi2[j]).collect()
        })
        .collect();
    assemble(grid, rows, 1900)
}

/// Stationary model with i.i.d. Gaussian scores on three orthonormal shapes
/// with variances `spectrum`.
pub fn stationary_factors(n: usize, grid: &AgeGrid, spectrum: [f64; 3], seed: u64) -> FunctionalTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = orthonormal_shapes(grid);
    let base = baseline(grid);
    let rows = (0..n)
        .map(|_| {
            let z: Vec<f64> = spectrum.iter().map(|v| v.sqrt() * normal(&mut rng)).collect();
            (0..grid.len())
                .map(|j| base[j] + (0..3).map(|k| z[k] * shapes[k][j]).sum::<f64>())
                .collect()
        })
        .collect();
    assemble(grid, rows, 1900)
}

/// Stationary functional AR(1): each of three scores follows an AR(1) with
/// coefficient `rho[k]` and unit innovation variance scaled by `scale[k]`,
/// plus pointwise Gaussian noise of s.d. `noise`. A burn-in of 100 curves
/// is discarded.
pub fn functional_ar1(
    n: usize,
    grid: &AgeGrid,
    rho: [f64; 3],
    scale: [f64; 3],
    noise: f64,
    seed: u64,
) -> FunctionalTimeSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = orthonormal_shapes(grid);
    let base = baseline(grid);
    let mut z = [0.0; 3];
    let mut rows = Vec::with_capacity(n);
    for t in 0..n + 100 {
        for k in 0..3 {
            z[k] = rho[k] * z[k] + scale[k] * normal(&mut rng);
        }
        let row: Vec<f64> = (0..grid.len())
            .map(|j| base[j] + (0..3).map(|k| z[k] * shapes[k][j]).sum::<f64>() + noise * normal(&mut rng))
            .collect();
        if t >= 100 {
            rows.push(row);
        }
    }
    assemble(grid, rows, 1900)
}

/// Two regimes: the first `n − recent` curves move as a random walk along
/// `φ_B`, the last `recent` along `φ_A`, each with a small stationary
/// disturbance on the other shape. Returns the series, `φ_A` and `φ_B`.
pub fn two_regime(
    n: usize,
    recent: usize,
    grid: &AgeGrid,
    seed: u64,
) -> (FunctionalTimeSeries, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [phi_b, phi_a, _] = orthonormal_shapes(grid);
    let base = baseline(grid);
    let (mut a, mut b) = (0.0, 0.0);
    let rows = (0..n)
        .map(|t| {
            let (da, db) = if t + recent >= n {
                (normal(&mut rng), 0.05 * normal(&mut rng))
            } else {
                (0.05 * normal(&mut rng), normal(&mut rng))
            };
            a += da;
            b += db;
            (0..grid.len()).map(|j| base[j] + a * phi_a[j] + b * phi_b[j]).collect()
        })
        .collect();
    (assemble(grid, rows, 1900), phi_a, phi_b)
}

/// A Lee–Carter style synthetic population for both sexes.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMortality {
    pub years: Vec<i32>,
    /// Single-year ages `0..max_age`, then an open group `max_age+`.
    pub max_age: u32,
    pub female: DMatrix<f64>,
    pub male: DMatrix<f64>,
    pub exposure_female: DMatrix<f64>,
    pub exposure_male: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MortalitySpec {
    pub first_year: i32,
    pub n_years: usize,
    pub max_age: u32,
    /// Mean yearly change of the period index, in `log10` units.
    pub drift: f64,
    pub seed: u64,
}

impl Default for MortalitySpec {
    fn default() -> Self {
        Self {
            first_year: 1751,
            n_years: 272,
            max_age: 110,
            drift: -0.005,
            seed: 20_240_601,
        }
    }
}

/// `log10 m(x, t) = a(x) + b(x) k_t + c(x) γ_t + ε`: one random-walk period
/// index `k_t` with drift, one stationary AR(1) index `γ_t` and observation
/// noise whose variance shrinks with the expected number of deaths.
pub fn synthetic_mortality(spec: &MortalitySpec) -> SyntheticMortality {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.max_age as usize + 1;
    let n = spec.n_years;
    let ages: Vec<f64> = (0..p).map(|x| x as f64).collect();
    let a: Vec<f64> = ages
        .iter()
        .map(|&x| (3e-4 + 0.06 * (-0.9 * x).exp() + 4e-5 * (0.09 * x).exp()).log10())
        .collect();
    let b: Vec<f64> = ages.iter().map(|&x| 1.0 - 0.7 * x / 110.0).collect();
    let c: Vec<f64> = ages.iter().map(|&x| (PI * x / 110.0).sin()).collect();

    let mut k = 0.0;
    let mut g = 0.0;
    let mut index = Vec::with_capacity(n);
    for _ in 0..n {
        k += spec.drift + 0.02 * normal(&mut rng);
        g = 0.5 * g + 0.03 * normal(&mut rng);
        index.push((k, g));
    }

    let exposure = |t: usize, x: f64, female: bool| -> f64 {
        let size = 1e6 * (1.0 + 4.0 * t as f64 / n as f64);
        let shape = (-x / 38.0 - (x / 85.0).powi(8)).exp() * if female { 1.05 } else { 1.0 };
        (size * shape).max(5.0)
    };

    let mut out = SyntheticMortality {
        years: (0..n as i32).map(|t| spec.first_year + t).collect(),
        max_age: spec.max_age,
        female: DMatrix::zeros(n, p),
        male: DMatrix::zeros(n, p),
        exposure_female: DMatrix::zeros(n, p),
        exposure_male: DMatrix::zeros(n, p),
    };
    for (t, &(k, g)) in index.iter().enumerate() {
        for x in 0..p {
            for female in [true, false] {
                let shift = if female { -0.1 } else { 0.0 };
                let e = exposure(t, ages[x], female);
                let mean = 10f64.powf(a[x] + shift + b[x] * k + c[x] * g).min(2.0);
                let deaths = (mean * e).max(1.0);
                let rate = mean * (normal(&mut rng) / deaths.sqrt()).exp();
                let rate = (rate * 1e6).round().max(1.0) / 1e6;
                let e = (e * 100.0).round() / 100.0;
                if female {
                    out.female[(t, x)] = rate;
                    out.exposure_female[(t, x)] = e;
                } else {
                    out.male[(t, x)] = rate;
                    out.exposure_male[(t, x)] = e;
                }
            }
        }
    }
    out
}

impl SyntheticMortality {
    fn age_label(&self, x: usize) -> AgeLabel {
        AgeLabel {
            age: x as u32,
            open: x as u32 == self.max_age,
        }
    }

    fn write_table(&self, title: &str, f: &DMatrix<f64>, m: &DMatrix<f64>, total: &DMatrix<f64>, decimals: usize) -> String {
        let mut out = format!("Synthetic population, {title}\n\n  Year      Age      Female      Male      Total\n");
        for (t, year) in self.years.iter().enumerate() {
            for x in 0..f.ncols() {
                let age = self.age_label(x).to_string();
                let _ = writeln!(
                    out,
                    "  {year}  {age:>6}  {:>12.d$}  {:>12.d$}  {:>12.d$}",
                    f[(t, x)],
                    m[(t, x)],
                    total[(t, x)],
                    d = decimals
                );
            }
        }
        out
    }

    /// Death rates in the `Mx_1x1` layout.
    pub fn rates_text(&self) -> String {
        let total = DMatrix::from_fn(self.female.nrows(), self.female.ncols(), |t, x| {
            let ef = self.exposure_female[(t, x)];
            let em = self.exposure_male[(t, x)];
            (self.female[(t, x)] * ef + self.male[(t, x)] * em) / (ef + em)
        });
        self.write_table("Death rates (period 1x1)", &self.female, &self.male, &total, 6)
    }

    /// Exposure to risk in the `Exposures_1x1` layout.
    pub fn exposures_text(&self) -> String {
        let total = &self.exposure_female + &self.exposure_male;
        self.write_table("Exposure to risk (period 1x1)", &self.exposure_female, &self.exposure_male, &total, 2)
    }

    /// The table for one sex, with exposures attached.
    pub fn table(&self, sex: Sex) -> MortalityTable {
        let (rates, exposures) = match sex {
            Sex::Female => (self.female.clone(), self.exposure_female.clone()),
            Sex::Male => (self.male.clone(), self.exposure_male.clone()),
            Sex::Total => {
                let e = &self.exposure_female + &self.exposure_male;
                let r = DMatrix::from_fn(e.nrows(), e.ncols(), |t, x| {
                    (self.female[(t, x)] * self.exposure_female[(t, x)]
                        + self.male[(t, x)] * self.exposure_male[(t, x)])
                        / e[(t, x)]
                });
                (r, e)
            }
        };
        MortalityTable {
            years: self.years.clone(),
            ages: (0..rates.ncols()).map(|x| self.age_label(x)).collect(),
            rates,
            exposures: Some(exposures),
            sex,
            unweighted_pool: false,
        }
    }
}

/// Writes `<prefix>Mx_1x1.txt` and `<prefix>Exposures_1x1.txt` into `dir`.
pub fn write_hmd_files(data: &SyntheticMortality, dir: &std::path::Path, prefix: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let rates = dir.join(format!("{prefix}Mx_1x1.txt"));
    let exposures = dir.join(format!("{prefix}Exposures_1x1.txt"));
    std::fs::write(&rates, data.rates_text())?;
    std::fs::write(&exposures, data.exposures_text())?;
    Ok((rates, exposures))
}
