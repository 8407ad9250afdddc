//! Functional principal components of covariance surfaces, the
//! eigenvalue-ratio choice of the number of components, and the
//! geometrically weighted decomposition of a differenced series.
//!
//! Eigenfunctions are orthonormal under the trapezoidal inner product: the
//! symmetric eigensolve runs on `Q^{1/2} C Q^{1/2}` with `Q` the quadrature
//! weights, and eigenvectors are mapped back through `Q^{-1/2}`.

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fts::{center, first_difference, project, AgeGrid, Curve, FunctionalTimeSeries};
use crate::lrcov::{autocov, CovSurface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    StaticCov,
    LongRunCov,
    WeightedLongRun,
}

/// Eigenvalues, retained eigenfunctions and the scores of one decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpcaBasis {
    /// Full spectrum, non-increasing and nonnegative.
    pub eigenvalues: Vec<f64>,
    /// `p × K`, one eigenfunction per column.
    pub eigenfunctions: DMatrix<f64>,
    /// `n × K` scores `⟨X_t − X̄, φ_k⟩`.
    pub scores: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub grid: AgeGrid,
    pub source: BasisSource,
}

impl FpcaBasis {
    /// Number of retained components.
    pub fn k(&self) -> usize {
        self.eigenfunctions.ncols()
    }

    pub fn eigenfunction(&self, k: usize) -> Curve {
        Curve::new(
            self.eigenfunctions.column(k).iter().copied().collect(),
            self.grid.clone(),
        )
        .expect("eigenfunctions are finite")
    }

    /// Keeps the first `k` components.
    pub fn truncate(mut self, k: usize) -> Self {
        let k = k.min(self.k());
        self.eigenfunctions = self.eigenfunctions.columns(0, k).into_owned();
        self.scores = self.scores.columns(0, k).into_owned();
        self
    }

    /// `Σ_k β_{t,k} φ_k` for every row, without the mean.
    pub fn fitted(&self) -> DMatrix<f64> {
        &self.scores * self.eigenfunctions.transpose()
    }
}

/// Flips `v` so its entry of largest magnitude is positive (first index on ties).
pub(crate) fn apply_sign_convention(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn sqrt_weights(grid: &AgeGrid) -> Vec<f64> {
    grid.quadrature_weights().into_iter().map(f64::sqrt).collect()
}

/// Eigen-decomposition of `surface`; scores are computed for `data`.
///
/// Keeps at most `k_max` eigenfunctions. The full spectrum is always returned.
pub fn eigen_fpca(
    surface: &CovSurface,
    data: &FunctionalTimeSeries,
    k_max: usize,
) -> Result<FpcaBasis> {
    let c = &surface.values;
    let p = c.nrows();
    if c.ncols() != p || p != data.p() {
        return Err(Error::Contract("surface and data dimensions differ".into()));
    }
    surface.grid.check_same(data.grid())?;
    let scale = c.abs().max().max(f64::MIN_POSITIVE);
    if (c - c.transpose()).abs().max() > 1e-8 * scale {
        return Err(Error::Contract("covariance surface is not symmetric".into()));
    }
    let sw = sqrt_weights(&surface.grid);
    let m = DMatrix::from_fn(p, p, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]) * sw[i] * sw[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let k = k_max.min(p);
    let mut phi = DMatrix::zeros(p, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = (0..p).map(|r| eig.eigenvectors[(r, i)] / sw[r]).collect();
        apply_sign_convention(&mut v);
        phi.column_mut(col).copy_from_slice(&v);
    }
    let (xc, mean) = center(data);
    let scores = project(xc.values(), &phi, data.grid());
    Ok(FpcaBasis {
        eigenvalues,
        eigenfunctions: phi,
        scores,
        mean: mean.into_values(),
        grid: data.grid().clone(),
        source: match surface.kind {
            crate::lrcov::CovKind::LagCov => BasisSource::StaticCov,
            crate::lrcov::CovKind::LongRun => BasisSource::LongRunCov,
        },
    })
}

/// Static FPCA from the lag-0 sample covariance.
pub fn static_fpca(fts: &FunctionalTimeSeries, k_max: usize) -> Result<FpcaBasis> {
    eigen_fpca(&autocov(fts, 0)?, fts, k_max)
}

/// Eigenvalue-ratio estimate of the number of components.
///
/// Minimizes `λ_{k+1}/λ_k · 1(λ_k/λ_1 ≥ δ) + 1(λ_k/λ_1 < δ)` over
/// `1 ≤ k ≤ k_max`, with `δ = 1/ln(max(λ_1, n))` and
/// `k_max = #{k : λ_k ≥ Σλ/n}`. Ties go to the smallest `k`.
pub fn select_k_ratio(eigenvalues: &[f64], n: usize) -> Result<usize> {
    let lam: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let Some(&l1) = lam.first() else {
        return Err(Error::DegenerateSpectrum);
    };
    if !(l1 > 0.0) {
        return Err(Error::DegenerateSpectrum);
    }
    if lam.len() == 1 {
        return Ok(1);
    }
    let total: f64 = lam.iter().sum();
    let threshold = total / n.max(1) as f64;
    let k_max = lam
        .iter()
        .filter(|&&v| v >= threshold)
        .count()
        .clamp(1, lam.len() - 1);
    let delta = 1.0 / (l1.max(n as f64)).ln();
    let mut best = (1, f64::INFINITY);
    for k in 1..=k_max {
        let (lk, lnext) = (lam[k - 1], lam[k]);
        let crit = if lk / l1 >= delta { lnext / lk } else { 1.0 };
        if crit < best.1 {
            best = (k, crit);
        }
    }
    Ok(best.0)
}

/// Normalized geometric weights `w_t ∝ κ(1−κ)^{n−t}`, increasing in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricWeights {
    pub kappa: f64,
    pub weights: Vec<f64>,
}

pub fn geometric_weights(n: usize, kappa: f64) -> Result<GeometricWeights> {
    if !(kappa > 0.0 && kappa < 1.0) {
        return Err(Error::Parameter(format!("kappa must lie in (0, 1), got {kappa}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let log_decay = (1.0 - kappa).ln();
    let raw: Vec<f64> = (1..=n)
        .map(|t| kappa * ((n - t) as f64 * log_decay).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(GeometricWeights {
        kappa,
        weights: raw.iter().map(|w| w / total).collect(),
    })
}

/// Weighted decomposition of the first differences of `levels`.
///
/// Rows of the differenced data matrix are scaled by the geometric weights,
/// `G = W G*`; the right singular vectors of `G` give the eigenfunctions and
/// the squared singular values the spectrum. Scores project the centered
/// *levels*.
pub fn weighted_fpca(levels: &FunctionalTimeSeries, kappa: f64, k_max: usize) -> Result<FpcaBasis> {
    weighted_basis(levels, kappa, Some(k_max))
}

/// Weighted basis keeping every component of nonzero singular value.
pub(crate) fn weighted_fpca_full(levels: &FunctionalTimeSeries, kappa: f64) -> Result<FpcaBasis> {
    weighted_basis(levels, kappa, None)
}

fn weighted_basis(levels: &FunctionalTimeSeries, kappa: f64, k_max: Option<usize>) -> Result<FpcaBasis> {
    let diff = first_difference(levels)?;
    let rows = diff.n();
    let w = geometric_weights(rows, kappa)?;
    let p = diff.p();
    let sw = sqrt_weights(diff.grid());
    let g = DMatrix::from_fn(rows, p, |t, j| w.weights[t] * diff.values()[(t, j)] * sw[j]);
    let svd = SVD::new(g, false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let mut eigenvalues: Vec<f64> = order.iter().map(|&i| sv[i] * sv[i]).collect();
    eigenvalues.resize(p, 0.0);
    let tol = sv.max() * 1e-12 * rows.max(p) as f64;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    let k = match k_max {
        Some(k) if k > rank => {
            log::warn!("requested {k} weighted components but the rank is {rank}");
            rank
        }
        Some(k) => k,
        None => rank,
    };
    let mut phi = DMatrix::zeros(p, k);
    for (col, &i) in order.iter().take(k).enumerate() {
        let mut v: Vec<f64> = (0..p).map(|j| v_t[(i, j)] / sw[j]).collect();
        apply_sign_convention(&mut v);
        phi.column_mut(col).copy_from_slice(&v);
    }
    let (xc, mean) = center(levels);
    let scores = project(xc.values(), &phi, levels.grid());
    Ok(FpcaBasis {
        eigenvalues,
        eigenfunctions: phi,
        scores,
        mean: mean.into_values(),
        grid: levels.grid().clone(),
        source: BasisSource::WeightedLongRun,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fts::{inner_product, ScaleTag};
    use crate::lrcov::CovKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn grid(p: usize) -> AgeGrid {
        AgeGrid::uniform(0.0, 1.0, p).unwrap()
    }

    fn surface(values: DMatrix<f64>, g: &AgeGrid) -> CovSurface {
        CovSurface {
            values,
            grid: g.clone(),
            kind: CovKind::LongRun,
            bandwidth: None,
        }
    }

    fn random_fts(n: usize, p: usize, seed: u64) -> FunctionalTimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        FunctionalTimeSeries::from_rows(&rows, grid(p), 1, ScaleTag::Log10Rate).unwrap()
    }

    fn sine(g: &AgeGrid) -> Curve {
        let raw = Curve::from_fn(g, |u| (std::f64::consts::PI * u).sin() + 0.3 * u).unwrap();
        let norm = raw.norm_sq().sqrt();
        Curve::from_fn(g, |u| ((std::f64::consts::PI * u).sin() + 0.3 * u) / norm).unwrap()
    }

    #[test]
    fn rank_one_surface() {
        let g = grid(41);
        let phi = sine(&g);
        let v = DMatrix::from_fn(41, 41, |i, j| 4.0 * phi.values()[i] * phi.values()[j]);
        let data = random_fts(5, 41, 1);
        let b = eigen_fpca(&surface(v, &g), &data, 3).unwrap();
        assert!((b.eigenvalues[0] - 4.0).abs() < 1e-8);
        assert!(b.eigenvalues[1].abs() < 1e-8);
        let align = inner_product(&b.eigenfunction(0), &phi).unwrap().abs();
        assert!(align >= 1.0 - 1e-8);
    }

    #[test]
    fn three_by_three_matches_characteristic_polynomial() {
        // Q^{1/2} C Q^{1/2} = [[2,1,0],[1,2,1],[0,1,2]] whose characteristic
        // polynomial (2−λ)((2−λ)² − 2) gives λ ∈ {2+√2, 2, 2−√2}.
        let g = grid(3);
        let q = g.quadrature_weights();
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let c = DMatrix::from_fn(3, 3, |i, j| m[i][j] / (q[i] * q[j]).sqrt());
        let b = eigen_fpca(&surface(c, &g), &random_fts(4, 3, 2), 3).unwrap();
        let want = [2.0 + 2f64.sqrt(), 2.0, 2.0 - 2f64.sqrt()];
        for (a, w) in b.eigenvalues.iter().zip(want) {
            assert!((a - w).abs() < 1e-10);
        }
    }

    #[test]
    fn isotropic_surface_reconstructs() {
        let g = grid(6);
        let q = g.quadrature_weights();
        let c = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 / q[i] } else { 0.0 });
        let data = random_fts(8, 6, 3);
        let b = eigen_fpca(&surface(c, &g), &data, 6).unwrap();
        assert!(b.eigenvalues.iter().all(|&v| (v - 1.0).abs() < 1e-10));
        let (xc, _) = center(&data);
        assert!((b.fitted() - xc.values()).abs().max() < 1e-10);
    }

    #[test]
    fn asymmetric_surface_rejected() {
        let g = grid(3);
        let mut c = DMatrix::identity(3, 3);
        c[(0, 1)] = 0.5;
        assert!(matches!(
            eigen_fpca(&surface(c, &g), &random_fts(4, 3, 1), 2),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn orthonormal_signed_and_consistent_on_random_surfaces() {
        for seed in 0..50 {
            let data = random_fts(12, 9, seed);
            let b = static_fpca(&data, 9).unwrap();
            for j in 0..b.k() {
                let fj = b.eigenfunction(j);
                for k in 0..b.k() {
                    let ip = inner_product(&fj, &b.eigenfunction(k)).unwrap();
                    let want = if j == k { 1.0 } else { 0.0 };
                    assert!((ip - want).abs() < 1e-8, "seed {seed} ({j},{k}) {ip}");
                }
                let v = fj.values();
                let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
                assert!(big > 0.0);
                for t in 0..data.n() {
                    let xc = Curve::new(
                        data.curve(t).values().iter().zip(&b.mean).map(|(x, m)| x - m).collect(),
                        data.grid().clone(),
                    )
                    .unwrap();
                    let direct = inner_product(&xc, &fj).unwrap();
                    assert!((direct - b.scores[(t, j)]).abs() < 1e-10);
                }
            }
            assert!(b.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn reconstruction_error_decreases_with_k() {
        let data = random_fts(15, 10, 4);
        let full = static_fpca(&data, 10).unwrap();
        let (xc, _) = center(&data);
        let mut prev = vec![f64::INFINITY; data.n()];
        for k in 0..=10 {
            let resid = xc.values() - full.clone().truncate(k).fitted();
            for t in 0..data.n() {
                let row: Vec<f64> = resid.row(t).iter().map(|v| v * v).collect();
                let e = data.grid().integrate(&row);
                assert!(e <= prev[t] + 1e-12);
                prev[t] = e;
            }
        }
    }

    #[test]
    fn select_k_examples() {
        assert_eq!(select_k_ratio(&[10.0, 0.1, 0.09, 0.08], 100).unwrap(), 1);
        assert_eq!(select_k_ratio(&[5.0, 4.9, 0.01, 0.009], 100).unwrap(), 2);
        assert_eq!(select_k_ratio(&[1.0, 1.0], 10).unwrap(), 1);
        assert_eq!(select_k_ratio(&[3.0, 0.0, 0.0], 50).unwrap(), 1);
        assert!(matches!(select_k_ratio(&[0.0, 0.0], 10), Err(Error::DegenerateSpectrum)));
    }

    #[test]
    fn select_k_ratios_scale_free() {
        let lam = [7.0, 3.5, 1.2, 0.4, 0.1];
        for c in [0.01, 3.0, 1e4] {
            let scaled: Vec<f64> = lam.iter().map(|v| v * c).collect();
            for k in 0..4 {
                assert!((scaled[k + 1] / scaled[k] - lam[k + 1] / lam[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn geometric_weight_examples() {
        let w = geometric_weights(3, 0.5).unwrap();
        for (a, b) in w.weights.iter().zip([1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(geometric_weights(1, 0.3).unwrap().weights, vec![1.0]);
        assert!(geometric_weights(5, 0.0).is_err());
        assert!(geometric_weights(5, 1.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn geometric_weights_increasing(n in 1usize..300, kappa in 0.001f64..0.9) {
            let w = geometric_weights(n, kappa).unwrap();
            proptest::prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(w.weights.iter().all(|&v| v > 0.0));
            proptest::prop_assert!(w.weights.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn weighted_single_row_is_normalized_difference() {
        let g = grid(5);
        let rows = vec![vec![0.0, 0.0, 0.0, 0.0, 0.0], vec![1.0, -2.0, 0.5, 0.0, 1.0]];
        let levels = FunctionalTimeSeries::from_rows(&rows, g.clone(), 1, ScaleTag::Log10Rate).unwrap();
        let b = weighted_fpca(&levels, 0.4, 3).unwrap();
        assert_eq!(b.k(), 1);
        let d = Curve::new(rows[1].clone(), g).unwrap();
        let norm = d.norm_sq().sqrt();
        for (a, x) in b.eigenfunctions.column(0).iter().zip(&rows[1]) {
            assert!((a + x / norm).abs() < 1e-12 || (a - x / norm).abs() < 1e-12);
        }
        // sign: largest magnitude entry (−2) must come out positive
        assert!(b.eigenfunctions[(1, 0)] > 0.0);
    }

    #[test]
    fn weighted_uniform_limit_matches_plain_svd() {
        let data = random_fts(30, 12, 8);
        let b = weighted_fpca(&data, 1e-6, 2).unwrap();
        // unweighted: eigenvectors of G*ᵀG* in the quadrature metric
        let diff = first_difference(&data).unwrap();
        let gram = diff.values().transpose() * diff.values();
        let s = CovSurface {
            values: gram,
            grid: data.grid().clone(),
            kind: CovKind::LongRun,
            bandwidth: None,
        };
        let plain = eigen_fpca(&s, &data, 2).unwrap();
        let ip = inner_product(&b.eigenfunction(0), &plain.eigenfunction(0)).unwrap();
        assert!(ip.abs() >= 0.999);
    }
}
