use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nsfts::fts::AgeGrid;
use nsfts::synthetic::{random_walk_factor, synthetic_mortality, write_hmd_files, MortalitySpec};

fn nsfts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsfts"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a noiseless random-walk series (ages 0..10, the last one open) as
/// a death-rate file with full precision. Returns the path and the `log10`
/// curves.
fn random_walk_file(dir: &Path) -> (PathBuf, Vec<Vec<f64>>) {
    let (fts, _) = random_walk_factor(60, &AgeGrid::ages(10), 2);
    let mut text = String::from("Random walk, Death rates\n\n  Year  Age  Female  Male  Total\n");
    let mut logs = Vec::new();
    for t in 0..fts.n() {
        let year = 1900 + t;
        let mut row = Vec::new();
        for a in 0..=10 {
            let r = 10f64.powf(fts.values()[(t, a)]);
            row.push(r.log10());
            let age = if a == 10 { "10+".to_string() } else { a.to_string() };
            let _ = writeln!(text, "{year} {age} {r:e} {r:e} {r:e}");
        }
        logs.push(row);
    }
    let path = dir.join("rw_Mx_1x1.txt");
    std::fs::write(&path, text).unwrap();
    (path, logs)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn fit_and_forecast_random_walk() {
    let dir = tempfile::tempdir().unwrap();
    let (rates, logs) = random_walk_file(dir.path());
    let out = dir.path().join("out");
    let args = [
        "fit", "--rates", s(&rates), "--open-age", "10", "--no-smoothing", "--out", s(&out),
    ];
    let fit = nsfts(&args);
    assert!(fit.status.success(), "{}", String::from_utf8_lossy(&fit.stderr));
    let summary = std::fs::read_to_string(out.join("model_standard_summary.txt")).unwrap();
    assert!(summary.contains("stage-1 components (r): 1"), "{summary}");
    assert!(summary.contains("ARIMA(0,1,0)\n"), "{summary}");
    assert!(summary.starts_with("# nsfts version: "));

    // identical config, identical bytes
    let model = std::fs::read(out.join("model_standard.json")).unwrap();
    assert!(nsfts(&args).status.success());
    assert_eq!(std::fs::read(out.join("model_standard.json")).unwrap(), model);

    let model_path = out.join("model_standard.json");
    let fc_dir = dir.path().join("fc");
    let f = nsfts(&["forecast", "--model", s(&model_path), "--horizon", "1", "--out", s(&fc_dir)]);
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let rows = read_csv(&fc_dir.join("forecast_point.csv"));
    assert_eq!(rows[0][0], "year");
    assert_eq!(rows[0][11], "10+");
    assert_eq!(rows[1][0], "1960");
    for (j, v) in rows[1][1..].iter().enumerate() {
        let v: f64 = v.parse().unwrap();
        assert!((v - logs[59][j]).abs() < 1e-8, "age {j}: {v} vs {}", logs[59][j]);
    }
    assert!(!fc_dir.join("forecast_lower.csv").exists());

    let f = nsfts(&[
        "forecast", "--model", s(&model_path), "--horizon", "3", "--bootstrap-b", "100", "--alpha", "0.2",
        "--seed", "5", "--out", s(&fc_dir),
    ]);
    assert!(f.status.success(), "{}", String::from_utf8_lossy(&f.stderr));
    let lower = read_csv(&fc_dir.join("forecast_lower.csv"));
    let upper = read_csv(&fc_dir.join("forecast_upper.csv"));
    assert_eq!(lower.len(), 4);
    for (l, u) in lower[1..].iter().zip(&upper[1..]) {
        for (a, b) in l[1..].iter().zip(&u[1..]) {
            assert!(a.parse::<f64>().unwrap() <= b.parse::<f64>().unwrap());
        }
    }
    let header = std::fs::read_to_string(fc_dir.join("forecast_lower.csv")).unwrap();
    assert!(header.contains("# seed: 5\n"));

    let zero = nsfts(&["forecast", "--model", s(&model_path), "--horizon", "0"]);
    assert_eq!(zero.status.code(), Some(2));
    let no_seed = nsfts(&["forecast", "--model", s(&model_path), "--horizon", "2", "--replicates", "100"]);
    assert_eq!(no_seed.status.code(), Some(2));
}

#[test]
fn missing_input_is_a_usage_error() {
    let o = nsfts(&["fit", "--rates", "/no/such/Mx_1x1.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/Mx_1x1.txt"));
    let o = nsfts(&["fit", "--config", "/no/such/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupted_model_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.json");
    std::fs::write(&p, "{\"format\": \"nsfts-model\", \"format_version\": 1, \"pipeline\": 3}").unwrap();
    let o = nsfts(&["forecast", "--model", s(&p), "--horizon", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
}

#[test]
fn malformed_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "Year Age Female Male Total\n1900 0 0.1 0.1\n").unwrap();
    let o = nsfts(&["ingest", "--rates", s(&p), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));
}

fn small_population(dir: &Path) -> (PathBuf, PathBuf) {
    let data = synthetic_mortality(&MortalitySpec {
        n_years: 45,
        max_age: 80,
        ..MortalitySpec::default()
    });
    write_hmd_files(&data, dir, "small_").unwrap()
}

#[test]
fn ingest_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (rates, exposures) = small_population(dir.path());
    let out = dir.path().join("ingest");
    let o = nsfts(&[
        "ingest", "--rates", s(&rates), "--exposures", s(&exposures), "--sex", "female", "--open-age", "75",
        "--out", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = read_csv(&out.join("curves_female.csv"));
    assert_eq!(curves.len(), 46);
    assert_eq!(curves[0].len(), 77);
    assert_eq!(curves[0][76], "75+");
    assert!(out.join("log_rates_female.csv").exists());
}

#[test]
fn smoothing_flags_control_the_curves() {
    let dir = tempfile::tempdir().unwrap();
    let (rates, exposures) = small_population(dir.path());
    let run = |name: &str, extra: &[&str]| {
        let out = dir.path().join(name);
        let mut args = vec!["ingest", "--rates", s(&rates), "--exposures", s(&exposures), "--open-age", "75"];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", s(&out)]);
        let o = nsfts(&args);
        assert!(o.status.success(), "{name}: {}", String::from_utf8_lossy(&o.stderr));
        (read_csv(&out.join("log_rates_male.csv")), read_csv(&out.join("curves_male.csv")))
    };
    let (raw, off) = run("off", &["--smooth", "off"]);
    assert_eq!(raw, off);
    let (_, identity) = run("zero", &["--lambda", "0", "--monotone-from", "off"]);
    assert_eq!(raw[0], identity[0]);
    for (a, b) in raw[1..].iter().zip(&identity[1..]) {
        assert_eq!(a[0], b[0]);
        for (x, y) in a[1..].iter().zip(&b[1..]) {
            let (x, y): (f64, f64) = (x.parse().unwrap(), y.parse().unwrap());
            assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
        }
    }
    let (_, smoothed) = run("auto", &["--smooth", "on", "--kpss", "trend"]);
    assert_ne!(raw, smoothed);

    let bad = nsfts(&["ingest", "--rates", s(&rates), "--lambda", "-1"]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = nsfts(&["ingest", "--rates", s(&rates), "--monotone-from", "old"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn evaluate_both_methods_on_short_test_block() {
    let dir = tempfile::tempdir().unwrap();
    let (rates, exposures) = small_population(dir.path());
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[input]\nrates = \"{}\"\nexposures = \"{}\"\n\n[data]\nopen_age = 75\n\n[model]\nmethod = \"both\"\nkappa = \"0.3\"\n\n[bootstrap]\nreplicates = 100\nseed = 11\n\n[split]\nvalidation = 5\ntest = 3\n",
            rates.file_name().unwrap().to_str().unwrap(),
            exposures.file_name().unwrap().to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("eval");
    let o = nsfts(&["evaluate", "--config", s(&config), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let report = read_csv(&out.join("report_standard.csv"));
    assert_eq!(report[0], ["method", "horizon", "metric", "value"]);
    let counts: Vec<&str> = report
        .iter()
        .filter(|r| r[2] == "count")
        .map(|r| r[3].as_str())
        .collect();
    assert_eq!(counts, ["3", "2", "1"]);

    let table = read_csv(&out.join("comparison.csv"));
    assert_eq!(table[0], ["horizon", "metric", "method", "value", "best"]);
    for h in ["1", "2", "3"] {
        for metric in ["rmspe", "mape", "coverage", "cpd", "interval_score"] {
            let methods: Vec<&str> = table
                .iter()
                .filter(|r| r[0] == h && r[1] == metric)
                .map(|r| r[2].as_str())
                .collect();
            assert_eq!(methods, ["standard", "weighted"], "h={h} {metric}");
        }
    }
    let plot = read_csv(&out.join("plot_data.csv"));
    assert_eq!(plot[0], ["method", "sex", "horizon", "metric", "value"]);
    assert!(plot.iter().skip(1).all(|r| r[1] == "male"));

    // rerun is byte-identical
    let first: Vec<Vec<u8>> = ["report_standard.json", "report_weighted.csv", "comparison.csv"]
        .iter()
        .map(|f| std::fs::read(out.join(f)).unwrap())
        .collect();
    assert!(nsfts(&["--threads", "2", "evaluate", "--config", s(&config), "--out", s(&out)]).status.success());
    for (f, bytes) in ["report_standard.json", "report_weighted.csv", "comparison.csv"].iter().zip(first) {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), bytes, "{f}");
    }

    let merged = dir.path().join("merged");
    let o = nsfts(&[
        "compare-plots",
        "--reports",
        s(&out.join("report_standard.json")),
        s(&out.join("report_weighted.json")),
        "--out",
        s(&merged),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_csv(&merged.join("comparison.csv")), table);
}

#[test]
fn bootstrap_evaluation_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (rates, _) = small_population(dir.path());
    let o = nsfts(&["evaluate", "--rates", s(&rates), "--open-age", "35"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn synth_writes_hmd_pair() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsfts(&["synth", "--out", s(dir.path()), "--years", "10", "--max-age", "20"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(dir.path().join("synthetic_Mx_1x1.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.trim_start().starts_with("17")).count(), 10 * 21);
}
