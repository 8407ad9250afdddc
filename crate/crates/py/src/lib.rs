//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nsfts::eval::{self, KappaCriterion};
use nsfts::fts::{AgeGrid, FunctionalTimeSeries, ScaleTag};
use nsfts::ingest::{make_split, parse_mx_file, Sex};
use nsfts::lrcov::KernelSpec;
use nsfts::nsmodel::{Components, FitOptions};
use nsfts::pipeline::{fit_pipeline, prepare_series, DataConfig, FittedPipeline, PipelineConfig};
use nsfts::scorecast::{ScoreModelConfig, ScoreModelKind};
use nsfts::smooth::{SmoothingSpec, WeightsMode};
use nsfts::synthetic::{synthetic_mortality, MortalitySpec};
use nsfts::uncertainty::BootstrapSpec;

fn to_py(e: nsfts::Error) -> PyErr {
    match e {
        nsfts::Error::Io(_) => PyIOError::new_err(e.to_string()),
        e if e.is_numerical() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn parse<T: std::str::FromStr<Err = nsfts::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// Yearly curves on a common age grid.
#[pyclass(name = "FunctionalTimeSeries", module = "pynsfts", from_py_object)]
#[derive(Clone)]
struct PyFts {
    inner: FunctionalTimeSeries,
}

#[pymethods]
impl PyFts {
    #[new]
    fn new(values: Vec<Vec<f64>>, ages: Vec<f64>, first_year: i32) -> PyResult<Self> {
        let grid = AgeGrid::new(ages).map_err(to_py)?;
        let inner =
            FunctionalTimeSeries::from_rows(&values, grid, first_year, ScaleTag::Log10Rate).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn p(&self) -> usize {
        self.inner.p()
    }

    fn values(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn years(&self) -> Vec<i32> {
        self.inner.time_labels().to_vec()
    }

    fn ages(&self) -> Vec<f64> {
        self.inner.grid().points().to_vec()
    }

    /// Curves `start..end` (0-based, half open).
    fn slice(&self, start: usize, end: usize) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.slice(start, end).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        let years = self.inner.time_labels();
        format!(
            "FunctionalTimeSeries(n={}, p={}, years={}..{})",
            self.inner.n(),
            self.inner.p(),
            years[0],
            years[years.len() - 1]
        )
    }
}

fn data_config(open_age: u32, smooth: bool, exposure_weights: bool) -> DataConfig {
    DataConfig {
        open_age,
        smoothing: smooth.then(|| SmoothingSpec {
            weights_mode: if exposure_weights {
                WeightsMode::ExposureBased
            } else {
                WeightsMode::Uniform
            },
            ..SmoothingSpec::default()
        }),
    }
}

/// Reads an `Mx_1x1` death-rate file (and optionally its exposures), pools
/// the open age group, imputes, takes `log10` and smooths.
#[pyfunction]
#[pyo3(signature = (rates, sex = "male", exposures = None, open_age = 95, smooth = true))]
fn read_mortality(rates: &str, sex: &str, exposures: Option<&str>, open_age: u32, smooth: bool) -> PyResult<PyFts> {
    let sex: Sex = parse(sex)?;
    let mut table = parse_mx_file(rates, sex).map_err(to_py)?;
    if let Some(e) = exposures {
        table = table
            .with_exposures(&parse_mx_file(e, sex).map_err(to_py)?)
            .map_err(to_py)?;
    }
    let fts = prepare_series(&table, &data_config(open_age, smooth, exposures.is_some())).map_err(to_py)?;
    Ok(PyFts { inner: fts })
}

/// Prepared curves of the seeded synthetic population.
#[pyfunction]
#[pyo3(signature = (sex = "male", n_years = 272, max_age = 110, seed = 20_240_601, open_age = 95, smooth = true))]
fn synthetic_population(
    sex: &str,
    n_years: usize,
    max_age: u32,
    seed: u64,
    open_age: u32,
    smooth: bool,
) -> PyResult<PyFts> {
    let data = synthetic_mortality(&MortalitySpec {
        n_years,
        max_age,
        seed,
        ..MortalitySpec::default()
    });
    let table = data.table(parse(sex)?);
    let fts = prepare_series(&table, &data_config(open_age, smooth, true)).map_err(to_py)?;
    Ok(PyFts { inner: fts })
}

fn pipeline_config(
    kappa: Option<f64>,
    components: Option<usize>,
    score_model: &str,
    kernel: &str,
) -> PyResult<PipelineConfig> {
    let kind: ScoreModelKind = parse(score_model)?;
    Ok(PipelineConfig {
        fit: FitOptions {
            kappa,
            kernel: KernelSpec {
                kind: parse(kernel)?,
                ..KernelSpec::default()
            },
            components: components.map_or(Components::Auto, Components::Fixed),
            ..FitOptions::default()
        },
        score_model: ScoreModelConfig {
            kind,
            ..ScoreModelConfig::default()
        },
        bootstrap: None,
    })
}

fn bootstrap(replicates: usize, alpha: f64, seed: Option<u64>) -> PyResult<Option<BootstrapSpec>> {
    if replicates == 0 {
        return Ok(None);
    }
    let seed = seed.ok_or_else(|| PyValueError::new_err("bootstrap runs need a seed"))?;
    Ok(Some(BootstrapSpec { replicates, alpha, seed }))
}

/// A fitted two-stage model with its score forecasters.
#[pyclass(name = "Model", module = "pynsfts")]
struct PyModel {
    inner: FittedPipeline,
}

#[pymethods]
impl PyModel {
    /// Fits the model; `kappa` switches to the geometrically weighted
    /// decomposition.
    #[staticmethod]
    #[pyo3(signature = (fts, kappa = None, components = None, score_model = "arima", kernel = "bartlett"))]
    fn fit(
        py: Python<'_>,
        fts: &PyFts,
        kappa: Option<f64>,
        components: Option<usize>,
        score_model: &str,
        kernel: &str,
    ) -> PyResult<Self> {
        let cfg = pipeline_config(kappa, components, score_model, kernel)?;
        let series = fts.inner.clone();
        let inner = py.detach(move || fit_pipeline(&series, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Stage-1 component count.
    #[getter]
    fn r(&self) -> usize {
        self.inner.model.r()
    }

    #[getter]
    fn k_total(&self) -> usize {
        self.inner.model.k_total()
    }

    #[getter]
    fn kappa(&self) -> Option<f64> {
        self.inner.model.kappa
    }

    #[getter]
    fn independence_p_value(&self) -> f64 {
        self.inner.model.independence_p_value
    }

    #[getter]
    fn has_stage2(&self) -> bool {
        self.inner.stage2.is_some()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.model.stage1.eigenvalues.clone()
    }

    fn mean(&self) -> Vec<f64> {
        self.inner.model.mean.clone()
    }

    /// `p × r` eigenfunctions as rows of the grid.
    fn eigenfunctions(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.model.stage1.eigenfunctions)
    }

    fn score_models(&self) -> Vec<String> {
        let mut out = self.inner.stage1.labels();
        if let Some(s) = &self.inner.stage2 {
            out.extend(s.labels());
        }
        out
    }

    /// Returns a dict with `years`, `point` and, when bootstrapping,
    /// `lower` and `upper` (lists of rows, one per horizon).
    #[pyo3(signature = (h, replicates = 0, alpha = 0.2, seed = None))]
    fn forecast<'py>(
        &self,
        py: Python<'py>,
        h: usize,
        replicates: usize,
        alpha: f64,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let spec = bootstrap(replicates, alpha, seed)?;
        let f = py
            .detach(|| self.inner.forecast(h, spec.as_ref()))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        d.set_item("years", f.years)?;
        d.set_item("point", rows(&f.point))?;
        if let Some(b) = f.band {
            d.set_item("lower", rows(&b.lower))?;
            d.set_item("upper", rows(&b.upper))?;
        }
        Ok(d)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(r={}, K={}, weighted={})",
            self.inner.model.r(),
            self.inner.model.k_total(),
            self.inner.model.is_weighted()
        )
    }
}

#[pyfunction]
fn rmspe(errors: Vec<f64>) -> PyResult<f64> {
    eval::rmspe(&errors).map_err(to_py)
}

#[pyfunction]
fn mape(errors: Vec<f64>) -> PyResult<f64> {
    eval::mape(&errors).map_err(to_py)
}

#[pyfunction]
fn coverage_cpd(lower: Vec<f64>, upper: Vec<f64>, actual: Vec<f64>, alpha: f64) -> PyResult<(f64, f64)> {
    eval::coverage_cpd(&lower, &upper, &actual, alpha).map_err(to_py)
}

#[pyfunction]
fn interval_score(lb: f64, ub: f64, actual: f64, alpha: f64) -> PyResult<f64> {
    eval::interval_score(lb, ub, actual, alpha).map_err(to_py)
}

/// κ minimising the validation-block criterion.
#[pyfunction]
#[pyo3(signature = (fts, validation = 30, test = 30, criterion = "rmspe", score_model = "arima", replicates = 0, alpha = 0.2, seed = None))]
#[allow(clippy::too_many_arguments)]
fn optimize_kappa(
    py: Python<'_>,
    fts: &PyFts,
    validation: usize,
    test: usize,
    criterion: &str,
    score_model: &str,
    replicates: usize,
    alpha: f64,
    seed: Option<u64>,
) -> PyResult<f64> {
    let criterion: KappaCriterion = parse(criterion)?;
    let mut cfg = pipeline_config(None, None, score_model, "bartlett")?;
    cfg.bootstrap = bootstrap(replicates, alpha, seed)?;
    let split = make_split(fts.inner.n(), validation, test).map_err(to_py)?;
    py.detach(|| eval::optimize_kappa(&fts.inner, &split, &cfg, criterion))
        .map_err(to_py)
}

/// Expanding-window backtest; returns the report as a JSON string.
#[pyfunction]
#[pyo3(signature = (fts, validation = 30, test = 30, kappa = None, score_model = "arima", replicates = 0, alpha = 0.2, seed = None))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    fts: &PyFts,
    validation: usize,
    test: usize,
    kappa: Option<f64>,
    score_model: &str,
    replicates: usize,
    alpha: f64,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = pipeline_config(kappa, None, score_model, "bartlett")?;
    cfg.bootstrap = bootstrap(replicates, alpha, seed)?;
    let split = make_split(fts.inner.n(), validation, test).map_err(to_py)?;
    let report = py
        .detach(|| eval::expanding_window(&fts.inner, &split, &cfg))
        .map_err(to_py)?;
    report.to_json().map_err(to_py)
}

#[pymodule]
fn pynsfts(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyFts>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(read_mortality, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_population, m)?)?;
    m.add_function(wrap_pyfunction!(rmspe, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(coverage_cpd, m)?)?;
    m.add_function(wrap_pyfunction!(interval_score, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_kappa, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
