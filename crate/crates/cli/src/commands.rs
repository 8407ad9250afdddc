use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nsfts::eval::{comparison_table, expanding_window, optimize_kappa, EvaluationReport};
use nsfts::fts::FunctionalTimeSeries;
use nsfts::ingest::{group_open_age, make_split, parse_mx_file, to_log_fts, MortalityTable};
use nsfts::model_io::{ArtifactHeader, ModelDocument};
use nsfts::pipeline::{fit_pipeline, prepare_series, PipelineConfig};
use nsfts::synthetic::{synthetic_mortality, write_hmd_files, MortalitySpec};
use nsfts::uncertainty::BootstrapSpec;

use crate::config::{hex, Method, Resolved};
use crate::error::{CliError, Context};

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Standard => "standard",
        Method::Weighted => "weighted",
        Method::Both => "both",
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn load_table(r: &Resolved) -> Result<MortalityTable, CliError> {
    let table = parse_mx_file(&r.rates, r.sex).context(format!("ingest {}", r.rates.display()))?;
    match &r.exposures {
        Some(path) => {
            let exp = parse_mx_file(path, r.sex).context(format!("ingest {}", path.display()))?;
            table.with_exposures(&exp).context("ingest exposures")
        }
        None => Ok(table),
    }
}

fn load_series(r: &Resolved) -> Result<FunctionalTimeSeries, CliError> {
    let table = load_table(r)?;
    prepare_series(&table, &r.data).context("smooth")
}

/// Column labels for a grid whose last point is the open age group.
fn age_labels(points: &[f64], open_age: u32) -> Vec<String> {
    points
        .iter()
        .map(|&a| {
            if a == f64::from(open_age) {
                format!("{a}+")
            } else {
                format!("{a}")
            }
        })
        .collect()
}

fn matrix_csv(header: &ArtifactHeader, labels: &[String], years: &[i32], m: &DMatrix<f64>) -> String {
    let mut out = header.comment_block();
    let _ = writeln!(out, "year,{}", labels.join(","));
    for (t, year) in years.iter().enumerate() {
        let row: Vec<String> = m.row(t).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{year},{}", row.join(","));
    }
    out
}

pub fn ingest(r: &Resolved) -> Result<String, CliError> {
    let table = load_table(r)?;
    let header = ArtifactHeader::new(&r.hash, None);
    let grouped = group_open_age(&table, r.data.open_age).context("ingest")?;
    let raw = to_log_fts(&grouped).context("ingest")?;
    let curves = prepare_series(&table, &r.data).context("smooth")?;
    let labels = age_labels(curves.grid().points(), r.data.open_age);
    let sex = r.sex.as_str();
    write_file(
        &r.out.join(format!("log_rates_{sex}.csv")),
        &matrix_csv(&header, &labels, raw.time_labels(), raw.values()),
    )?;
    write_file(
        &r.out.join(format!("curves_{sex}.csv")),
        &matrix_csv(&header, &labels, curves.time_labels(), curves.values()),
    )?;
    let missing = table.rates.iter().filter(|v| !v.is_finite() || **v <= 0.0).count();
    Ok(format!(
        "{} years ({}-{}), {} age groups, {missing} missing or zero cells imputed; wrote {}\n",
        curves.n(),
        curves.time_labels()[0],
        curves.time_labels()[curves.n() - 1],
        curves.p(),
        r.out.display()
    ))
}

fn method_config(r: &Resolved, m: Method, fts: &FunctionalTimeSeries) -> Result<PipelineConfig, CliError> {
    let mut cfg = r.pipeline;
    if m == Method::Weighted {
        let kappa = match r.kappa {
            Some(k) => k,
            None => {
                let split = make_split(fts.n(), r.validation, r.test).context("kappa selection")?;
                optimize_kappa(fts, &split, &cfg, r.criterion).context("kappa selection")?
            }
        };
        cfg.fit.kappa = Some(kappa);
    }
    Ok(cfg)
}

fn fit_summary(doc: &ModelDocument) -> String {
    let m = &doc.pipeline.model;
    let mut out = doc.header.comment_block();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "population: {}", doc.population.as_deref().unwrap_or("unknown"));
    let _ = writeln!(out, "curves: {} (grid size {})", m.residuals_y.n(), m.mean.len());
    let _ = writeln!(out, "method: {}", if m.is_weighted() { "weighted" } else { "standard" });
    if let Some(k) = m.kappa {
        let _ = writeln!(out, "kappa: {k}");
    }
    let _ = writeln!(out, "stage-1 components (r): {}", m.r());
    let _ = writeln!(out, "total components (K): {}", m.k_total());
    let _ = writeln!(out, "stage-1 eigenvalues: {}", fmt(&m.stage1.eigenvalues[..m.stage1.eigenvalues.len().min(10)]));
    let _ = writeln!(out, "independence p-value: {}", m.independence_p_value);
    if let Some(b) = &m.stage2 {
        let _ = writeln!(out, "stage-2 eigenvalues: {}", fmt(&b.eigenvalues[..b.eigenvalues.len().min(10)]));
    }
    let _ = writeln!(out, "stage-1 score models: {}", doc.pipeline.stage1.labels().join(", "));
    if let Some(s2) = &doc.pipeline.stage2 {
        let _ = writeln!(out, "stage-2 score models: {}", s2.labels().join(", "));
    }
    out
}

pub fn fit(r: &Resolved) -> Result<String, CliError> {
    let fts = load_series(r)?;
    let mut msg = String::new();
    for m in r.methods() {
        let cfg = method_config(r, m, &fts)?;
        let fitted = fit_pipeline(&fts, &cfg).context("fit")?;
        let doc = ModelDocument::new(
            ArtifactHeader::new(&r.hash, cfg.bootstrap.map(|b| b.seed)),
            Some(r.sex.as_str().into()),
            r.data.clone(),
            cfg,
            fitted,
        );
        let name = method_name(m);
        let summary = fit_summary(&doc);
        write_file(&r.out.join(format!("model_{name}.json")), &doc.to_json().context("fit")?)?;
        write_file(&r.out.join(format!("model_{name}_summary.txt")), &summary)?;
        let _ = writeln!(msg, "[{name}]");
        msg.push_str(&summary);
    }
    Ok(msg)
}

pub struct ForecastArgs {
    pub model: PathBuf,
    pub horizon: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

pub fn forecast(a: &ForecastArgs) -> Result<String, CliError> {
    if a.horizon == 0 {
        return Err(CliError::Usage("horizon must be at least 1".into()));
    }
    if !a.model.is_file() {
        return Err(CliError::Usage(format!("model file not found: {}", a.model.display())));
    }
    let doc = ModelDocument::load(&a.model).context(format!("load model {}", a.model.display()))?;
    let spec = if a.replicates > 0 {
        let seed = a
            .seed
            .ok_or_else(|| CliError::Usage("bootstrap runs need --seed".into()))?;
        if !(a.alpha > 0.0 && a.alpha < 1.0) {
            return Err(CliError::Usage(format!("alpha must lie in (0, 1), got {}", a.alpha)));
        }
        Some(BootstrapSpec {
            replicates: a.replicates,
            alpha: a.alpha,
            seed,
        })
    } else {
        None
    };
    let f = doc.pipeline.forecast(a.horizon, spec.as_ref()).context("forecast")?;
    let hash = hex(&Sha256::digest(
        format!("{}|{}|{:?}", doc.header.config_hash, a.horizon, spec).as_bytes(),
    ));
    let header = ArtifactHeader::new(hash, spec.map(|s| s.seed));
    let labels = age_labels(doc.pipeline.model.stage1.grid.points(), doc.data.open_age);
    write_file(&a.out.join("forecast_point.csv"), &matrix_csv(&header, &labels, &f.years, &f.point))?;
    let mut msg = format!("forecast {} years ({}-{})", a.horizon, f.years[0], f.years[a.horizon - 1]);
    if let Some(band) = &f.band {
        write_file(&a.out.join("forecast_lower.csv"), &matrix_csv(&header, &labels, &f.years, &band.lower))?;
        write_file(&a.out.join("forecast_upper.csv"), &matrix_csv(&header, &labels, &f.years, &band.upper))?;
        let _ = write!(msg, " with {:.0}% bands", 100.0 * (1.0 - band.alpha));
    }
    let _ = writeln!(msg, "; wrote {}", a.out.display());
    Ok(msg)
}

/// A saved evaluation report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportDocument {
    pub header: ArtifactHeader,
    pub population: String,
    pub report: EvaluationReport,
}

fn write_comparisons(out: &Path, header: &ArtifactHeader, docs: &[ReportDocument]) -> Result<(), CliError> {
    let mut plot = header.comment_block();
    plot.push_str("method,sex,horizon,metric,value\n");
    for d in docs {
        let body = d.report.to_plot_csv(&d.population);
        plot.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
    }
    write_file(&out.join("plot_data.csv"), &plot)?;
    if docs.len() > 1 {
        let reports: Vec<EvaluationReport> = docs.iter().map(|d| d.report.clone()).collect();
        let mut table = header.comment_block();
        table.push_str(&comparison_table(&reports));
        write_file(&out.join("comparison.csv"), &table)?;
    }
    Ok(())
}

pub fn evaluate(r: &Resolved) -> Result<String, CliError> {
    let fts = load_series(r)?;
    let split = make_split(fts.n(), r.validation, r.test).context("evaluate")?;
    let header = ArtifactHeader::new(&r.hash, r.pipeline.bootstrap.map(|b| b.seed));
    let mut docs = Vec::new();
    let mut msg = String::new();
    for m in r.methods() {
        let cfg = method_config(r, m, &fts)?;
        let report = expanding_window(&fts, &split, &cfg).context("evaluate")?;
        let name = method_name(m);
        let mut csv = header.comment_block();
        csv.push_str(&report.to_csv());
        write_file(&r.out.join(format!("report_{name}.csv")), &csv)?;
        let doc = ReportDocument {
            header: header.clone(),
            population: r.sex.as_str().into(),
            report,
        };
        let mut json = serde_json::to_string_pretty(&doc).map_err(nsfts::Error::from).context("evaluate")?;
        json.push('\n');
        write_file(&r.out.join(format!("report_{name}.json")), &json)?;
        let first = &doc.report.horizons[0];
        let _ = writeln!(
            msg,
            "{name}: {} horizons, h=1 RMSPE {:.6} from {} origins{}",
            doc.report.horizons.len(),
            first.rmspe.unwrap_or(f64::NAN),
            first.count,
            doc.report.kappa.map_or(String::new(), |k| format!(", kappa {k:.4}"))
        );
        docs.push(doc);
    }
    write_comparisons(&r.out, &header, &docs)?;
    let _ = writeln!(msg, "wrote {}", r.out.display());
    Ok(msg)
}

pub fn compare_plots(reports: &[PathBuf], out: &Path) -> Result<String, CliError> {
    if reports.is_empty() {
        return Err(CliError::Usage("no reports given".into()));
    }
    let mut docs = Vec::new();
    for p in reports {
        let text = std::fs::read_to_string(p)
            .map_err(|e| CliError::Usage(format!("cannot read report {}: {e}", p.display())))?;
        let doc: ReportDocument = serde_json::from_str(&text)
            .map_err(|e| nsfts::Error::Schema(format!("{}: {e}", p.display())))
            .context("compare-plots")?;
        docs.push(doc);
    }
    let joined: String = docs.iter().map(|d| d.header.config_hash.as_str()).collect::<Vec<_>>().join("|");
    let header = ArtifactHeader::new(hex(&Sha256::digest(joined.as_bytes())), docs[0].header.seed);
    write_comparisons(out, &header, &docs)?;
    Ok(format!("compared {} reports; wrote {}\n", docs.len(), out.display()))
}

pub fn synth(spec: &MortalitySpec, out: &Path, prefix: &str) -> Result<String, CliError> {
    let data = synthetic_mortality(spec);
    let (r, e) = write_hmd_files(&data, out, prefix).context("synth")?;
    Ok(format!("wrote {} and {}\n", r.display(), e.display()))
}
