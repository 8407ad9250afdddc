//! Functional time series data model and grid function algebra.
//!
//! Curves are stored densely as their values on a shared, uniformly spaced
//! grid. Integrals use the composite trapezoidal rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SPACING_RTOL: f64 = 1e-9;

/// Uniformly spaced, strictly increasing abscissae (ages in years).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AgeGrid {
    points: Vec<f64>,
    spacing: f64,
}

impl AgeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Contract(format!(
                "grid needs at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("grid points must be finite".into()));
        }
        let spacing = (points[points.len() - 1] - points[0]) / (points.len() - 1) as f64;
        if spacing <= 0.0 {
            return Err(Error::Contract("grid must be strictly increasing".into()));
        }
        for w in points.windows(2) {
            let step = w[1] - w[0];
            if step <= 0.0 {
                return Err(Error::Contract("grid must be strictly increasing".into()));
            }
            if ((step - spacing) / spacing).abs() > SPACING_RTOL {
                return Err(Error::Contract(format!(
                    "grid spacing is not uniform: step {step} vs mean {spacing}"
                )));
            }
        }
        Ok(Self { points, spacing })
    }

    /// `p` equally spaced points from `start` to `end` inclusive.
    pub fn uniform(start: f64, end: f64, p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::Contract("grid needs at least 2 points".into()));
        }
        let h = (end - start) / (p - 1) as f64;
        Self::new((0..p).map(|i| start + h * i as f64).collect())
    }

    /// Integer ages `0..=max_age`.
    pub fn ages(max_age: usize) -> Self {
        Self::uniform(0.0, max_age as f64, max_age + 1).expect("integer age grid is valid")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Trapezoidal quadrature weights: `h/2` at the ends, `h` inside.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let p = self.len();
        let mut w = vec![self.spacing; p];
        w[0] *= 0.5;
        w[p - 1] *= 0.5;
        w
    }

    /// Trapezoidal integral of grid values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let p = values.len();
        let inner: f64 = values[1..p - 1].iter().sum();
        self.spacing * (inner + 0.5 * (values[0] + values[p - 1]))
    }

    pub(crate) fn check_same(&self, other: &AgeGrid) -> Result<()> {
        if self.points.len() != other.points.len()
            || self
                .points
                .iter()
                .zip(&other.points)
                .any(|(a, b)| (a - b).abs() > SPACING_RTOL * self.spacing)
        {
            return Err(Error::Contract("curves live on different grids".into()));
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for AgeGrid {
    type Error = Error;
    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<AgeGrid> for Vec<f64> {
    fn from(g: AgeGrid) -> Self {
        g.points
    }
}

/// What the values of a series represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleTag {
    Log10Rate,
    RawRate,
    Differenced,
    Residual,
}

/// A single function evaluated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    values: Vec<f64>,
    grid: AgeGrid,
}

impl Curve {
    pub fn new(values: Vec<f64>, grid: AgeGrid) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Contract(format!(
                "curve has {} values but grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("curve values must be finite".into()));
        }
        Ok(Self { values, grid })
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(grid: &AgeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.points().iter().map(|&u| f(u)).collect(), grid.clone())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Squared L2 norm.
    pub fn norm_sq(&self) -> f64 {
        self.grid.integrate(&self.values.iter().map(|v| v * v).collect::<Vec<_>>())
    }
}

/// `⟨f, g⟩ = ∫ f(u) g(u) du` by the trapezoidal rule.
pub fn inner_product(f: &Curve, g: &Curve) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(weighted_dot(&f.grid.quadrature_weights(), &f.values, &g.values))
}

pub(crate) fn weighted_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    w.iter().zip(a).zip(b).map(|((w, a), b)| w * a * b).sum()
}

/// `n` curves on a common grid, one row per year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FtsRepr", into = "FtsRepr")]
pub struct FunctionalTimeSeries {
    values: DMatrix<f64>,
    grid: AgeGrid,
    time_labels: Vec<i32>,
    scale_tag: ScaleTag,
}

#[derive(Serialize, Deserialize)]
struct FtsRepr {
    values: DMatrix<f64>,
    grid: AgeGrid,
    time_labels: Vec<i32>,
    scale_tag: ScaleTag,
}

impl TryFrom<FtsRepr> for FunctionalTimeSeries {
    type Error = Error;

    fn try_from(r: FtsRepr) -> Result<Self> {
        Self::new(r.values, r.grid, r.time_labels, r.scale_tag)
    }
}

impl From<FunctionalTimeSeries> for FtsRepr {
    fn from(f: FunctionalTimeSeries) -> Self {
        Self {
            values: f.values,
            grid: f.grid,
            time_labels: f.time_labels,
            scale_tag: f.scale_tag,
        }
    }
}

impl FunctionalTimeSeries {
    pub fn new(
        values: DMatrix<f64>,
        grid: AgeGrid,
        time_labels: Vec<i32>,
        scale_tag: ScaleTag,
    ) -> Result<Self> {
        let n = values.nrows();
        if n == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if values.ncols() != grid.len() {
            return Err(Error::Contract(format!(
                "rows have {} values but grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if time_labels.len() != n {
            return Err(Error::Contract(format!(
                "{} time labels for {} curves",
                time_labels.len(),
                n
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("series values must be finite".into()));
        }
        for w in time_labels.windows(2) {
            let ok = if scale_tag == ScaleTag::Differenced {
                w[1] > w[0]
            } else {
                w[1] == w[0] + 1
            };
            if !ok {
                return Err(Error::Contract(format!(
                    "time labels must be consecutive: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self {
            values,
            grid,
            time_labels,
            scale_tag,
        })
    }

    /// Builds a series from row vectors with labels `first_year..`.
    pub fn from_rows(rows: &[Vec<f64>], grid: AgeGrid, first_year: i32, tag: ScaleTag) -> Result<Self> {
        let p = grid.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::Contract(format!(
                "row has {} values but grid has {p} points",
                bad.len()
            )));
        }
        let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        let labels = (0..rows.len() as i32).map(|i| first_year + i).collect();
        Self::new(values, grid, labels, tag)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn grid(&self) -> &AgeGrid {
        &self.grid
    }

    pub fn time_labels(&self) -> &[i32] {
        &self.time_labels
    }

    pub fn scale_tag(&self) -> ScaleTag {
        self.scale_tag
    }

    pub fn curve(&self, t: usize) -> Curve {
        Curve {
            values: self.values.row(t).iter().copied().collect(),
            grid: self.grid.clone(),
        }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|t| self.values.row(t).iter().copied().collect())
            .collect()
    }

    /// Curves `start..end` (0-based, half open).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.n() {
            return Err(Error::Range(format!(
                "slice {start}..{end} of a series with {} curves",
                self.n()
            )));
        }
        Ok(Self {
            values: self.values.rows(start, end - start).into_owned(),
            grid: self.grid.clone(),
            time_labels: self.time_labels[start..end].to_vec(),
            scale_tag: self.scale_tag,
        })
    }

    pub(crate) fn with_values(&self, values: DMatrix<f64>, tag: ScaleTag) -> Self {
        debug_assert_eq!(values.shape(), self.values.shape());
        Self {
            values,
            grid: self.grid.clone(),
            time_labels: self.time_labels.clone(),
            scale_tag: tag,
        }
    }
}

/// Pointwise mean across curves.
pub fn mean_function(fts: &FunctionalTimeSeries) -> Curve {
    let n = fts.n() as f64;
    let values = fts
        .values
        .column_iter()
        .map(|c| c.iter().sum::<f64>() / n)
        .collect();
    Curve {
        values,
        grid: fts.grid.clone(),
    }
}

/// `ΔX_t = X_t − X_{t−1}`, dropping the first year.
pub fn first_difference(fts: &FunctionalTimeSeries) -> Result<FunctionalTimeSeries> {
    let n = fts.n();
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let v = &fts.values;
    let diff = v.rows(1, n - 1) - v.rows(0, n - 1);
    Ok(FunctionalTimeSeries {
        values: diff,
        grid: fts.grid.clone(),
        time_labels: fts.time_labels[1..].to_vec(),
        scale_tag: ScaleTag::Differenced,
    })
}

/// Subtracts the mean function from every curve.
pub fn center(fts: &FunctionalTimeSeries) -> (FunctionalTimeSeries, Curve) {
    let mean = mean_function(fts);
    let mut values = fts.values.clone();
    subtract_row(&mut values, mean.values());
    (
        FunctionalTimeSeries {
            values,
            grid: fts.grid.clone(),
            time_labels: fts.time_labels.clone(),
            scale_tag: fts.scale_tag,
        },
        mean,
    )
}

pub(crate) fn subtract_row(m: &mut DMatrix<f64>, row: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(-row[j]);
    }
}

#[cfg(test)]
pub(crate) fn add_row(m: &mut DMatrix<f64>, row: &[f64]) {
    for (j, mut col) in m.column_iter_mut().enumerate() {
        col.add_scalar_mut(row[j]);
    }
}

/// Scores `⟨x_t, φ_k⟩` for each row of `x` against the columns of `basis`.
pub(crate) fn project(x: &DMatrix<f64>, basis: &DMatrix<f64>, grid: &AgeGrid) -> DMatrix<f64> {
    let w = DVector::from_vec(grid.quadrature_weights());
    let mut weighted = basis.clone();
    for mut col in weighted.column_iter_mut() {
        col.component_mul_assign(&w);
    }
    x * weighted
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> AgeGrid {
        AgeGrid::uniform(0.0, 1.0, 101).unwrap()
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(AgeGrid::new(vec![0.0]).is_err());
        assert!(AgeGrid::new(vec![0.0, 1.0, 1.5]).is_err());
        assert!(AgeGrid::new(vec![1.0, 0.0]).is_err());
        assert_eq!(AgeGrid::ages(95).len(), 96);
    }

    #[test]
    fn inner_product_constants_and_zero() {
        let g = unit_grid();
        let one = Curve::from_fn(&g, |_| 1.0).unwrap();
        let zero = Curve::from_fn(&g, |_| 0.0).unwrap();
        let sq = Curve::from_fn(&g, |u| u * u).unwrap();
        assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(inner_product(&zero, &sq).unwrap(), 0.0);
    }

    #[test]
    fn inner_product_linear_matches_direct_trapezoid() {
        let g = unit_grid();
        let f = Curve::from_fn(&g, |u| u).unwrap();
        // direct trapezoid sum, written out independently
        let h = 0.01;
        let mut direct = 0.0;
        for i in 0..100 {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            direct += 0.5 * h * (a * a + b * b);
        }
        let ip = inner_product(&f, &f).unwrap();
        assert!((ip - direct).abs() < 1e-12);
        assert!((ip - 1.0 / 3.0).abs() < 1e-3);
    }

    #[test]
    fn inner_product_grid_mismatch() {
        let f = Curve::from_fn(&unit_grid(), |u| u).unwrap();
        let g = Curve::from_fn(&AgeGrid::uniform(0.0, 2.0, 101).unwrap(), |u| u).unwrap();
        assert!(matches!(inner_product(&f, &g), Err(Error::Contract(_))));
    }

    fn series(rows: &[&[f64]]) -> FunctionalTimeSeries {
        let grid = AgeGrid::uniform(0.0, 1.0, rows[0].len()).unwrap();
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        FunctionalTimeSeries::from_rows(&rows, grid, 2000, ScaleTag::Log10Rate).unwrap()
    }

    #[test]
    fn mean_function_examples() {
        assert_eq!(mean_function(&series(&[&[0.0, 0.0], &[2.0, 2.0]])).values(), &[1.0, 1.0]);
        assert_eq!(mean_function(&series(&[&[4.0, 7.0]])).values(), &[4.0, 7.0]);
        assert_eq!(
            mean_function(&series(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 9.0]])).values(),
            &[3.0, 5.0]
        );
    }

    #[test]
    fn first_difference_examples() {
        let d = first_difference(&series(&[&[1.0, 1.0], &[3.0, 3.0], &[6.0, 6.0]])).unwrap();
        assert_eq!(d.rows(), vec![vec![2.0, 2.0], vec![3.0, 3.0]]);
        assert_eq!(d.time_labels(), &[2001, 2002]);
        assert_eq!(d.scale_tag(), ScaleTag::Differenced);

        let c = first_difference(&series(&[&[5.0, 5.0], &[5.0, 5.0], &[5.0, 5.0]])).unwrap();
        assert!(c.values().iter().all(|&v| v == 0.0));

        let lin = first_difference(&series(&[&[1.0, 2.0], &[2.0, 4.0], &[3.0, 6.0], &[4.0, 8.0]]))
            .unwrap();
        assert_eq!(lin.rows(), vec![vec![1.0, 2.0]; 3]);

        assert!(matches!(
            first_difference(&series(&[&[1.0, 1.0]])),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn center_examples() {
        let s = series(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let (c, mean) = center(&s);
        assert_eq!(c.rows(), vec![vec![-1.0, -1.0], vec![1.0, 1.0]]);
        let mut back = c.values().clone();
        add_row(&mut back, mean.values());
        assert_eq!(&back, s.values());
    }

    #[test]
    fn time_labels_must_be_consecutive() {
        let grid = AgeGrid::ages(1);
        let v = DMatrix::zeros(2, 2);
        assert!(FunctionalTimeSeries::new(v.clone(), grid.clone(), vec![2000, 2002], ScaleTag::Log10Rate).is_err());
        assert!(FunctionalTimeSeries::new(v, grid, vec![2000, 2002], ScaleTag::Differenced).is_ok());
    }
}
