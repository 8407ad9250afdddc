use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use nsfts::eval::KappaCriterion;
use nsfts::ingest::Sex;
use nsfts::lrcov::{Bandwidth, Kernel, KernelSpec};
use nsfts::nsmodel::{Components, FitOptions, IndependenceTestSpec};
use nsfts::pipeline::{DataConfig, PipelineConfig};
use nsfts::scorecast::{ArimaConfig, KpssVariant, ScoreModelConfig, ScoreModelKind};
use nsfts::smooth::{Lambda, SmoothingSpec, WeightsMode};
use nsfts::uncertainty::BootstrapSpec;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub rates: Option<PathBuf>,
    pub exposures: Option<PathBuf>,
    pub sex: String,
}

impl Default for InputSection {
    fn default() -> Self {
        Self {
            rates: None,
            exposures: None,
            sex: "male".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub open_age: u32,
    pub smoothing: bool,
    /// `None` selects the penalty by GCV.
    pub smoothing_lambda: Option<f64>,
    pub monotone_from_age: Option<f64>,
    /// Weight the smoother by exposures when an exposure file is given.
    pub exposure_weights: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            open_age: 95,
            smoothing: true,
            smoothing_lambda: None,
            monotone_from_age: Some(65.0),
            exposure_weights: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Standard,
    Weighted,
    Both,
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(Self::Standard),
            "weighted" => Ok(Self::Weighted),
            "both" => Ok(Self::Both),
            other => Err(format!("unknown method '{other}' (standard, weighted or both)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub method: Method,
    /// `auto` or a value in (0, 1).
    pub kappa: String,
    pub kappa_criterion: String,
    /// `auto` or a positive integer.
    pub components: String,
    pub kernel: String,
    /// `auto` or a positive bandwidth.
    pub bandwidth: String,
    pub score_model: String,
    /// KPSS variant used to choose the differencing order: level or trend.
    pub kpss: String,
    pub independence_lags: usize,
    pub independence_level: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            method: Method::Standard,
            kappa: "auto".into(),
            kappa_criterion: "rmspe".into(),
            components: "auto".into(),
            kernel: "bartlett".into(),
            bandwidth: "auto".into(),
            score_model: "arima".into(),
            kpss: "level".into(),
            independence_lags: 10,
            independence_level: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Zero disables prediction bands.
    pub replicates: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            replicates: 1000,
            alpha: 0.2,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            validation: 30,
            test: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("nsfts-out"),
        }
    }
}

/// Everything a run needs, read from one TOML file and then overridden by
/// command-line flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub bootstrap: BootstrapSection,
    pub split: SplitSection,
    pub output: OutputSection,
}

/// Flag values that replace config entries when present.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Death-rate file in the `Mx_1x1` layout.
    #[arg(long)]
    pub rates: Option<PathBuf>,
    /// Exposure file in the `Exposures_1x1` layout.
    #[arg(long)]
    pub exposures: Option<PathBuf>,
    /// female, male or total.
    #[arg(long)]
    pub sex: Option<String>,
    /// Ages at and above this are pooled into one open group
    #[arg(long)]
    pub open_age: Option<u32>,
    /// Pre-smooth the log rates (on or off).
    #[arg(long, value_parser = ["on", "off"])]
    pub smooth: Option<String>,
    /// Model the raw log rates; same as `--smooth off`.
    #[arg(long)]
    pub no_smoothing: bool,
    /// Smoothing penalty: `auto` (GCV) or a nonnegative value.
    #[arg(long)]
    pub lambda: Option<String>,
    /// First age of the monotone constraint, or `off`.
    #[arg(long)]
    pub monotone_from: Option<String>,
    /// standard, weighted or both.
    #[arg(long)]
    pub method: Option<Method>,
    /// `auto` or a value in (0, 1).
    #[arg(long)]
    pub kappa: Option<String>,
    /// rmspe, mape, cpd or interval_score.
    #[arg(long)]
    pub kappa_criterion: Option<String>,
    /// `auto` or the stage-1 component count.
    #[arg(long)]
    pub components: Option<String>,
    /// bartlett, parzen or flat_top.
    #[arg(long)]
    pub kernel: Option<String>,
    /// `auto` or a fixed bandwidth.
    #[arg(long)]
    pub bandwidth: Option<String>,
    /// arima, ets or var.
    #[arg(long)]
    pub score_model: Option<String>,
    /// level or trend.
    #[arg(long)]
    pub kpss: Option<String>,
    /// Bootstrap replicates; 0 disables bands.
    #[arg(long, visible_alias = "bootstrap-b")]
    pub replicates: Option<usize>,
    /// Nominal miss rate of the prediction bands
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Bootstrap seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Years held out for choosing kappa
    #[arg(long)]
    pub validation: Option<usize>,
    /// Years in the final test block
    #[arg(long)]
    pub test: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))?;
        // relative input paths are taken relative to the config file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.input.rates, &mut cfg.input.exposures].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value.clone() {
                    $field = v;
                }
            };
        }
        if o.rates.is_some() {
            self.input.rates = o.rates.clone();
        }
        if o.exposures.is_some() {
            self.input.exposures = o.exposures.clone();
        }
        set!(self.input.sex, o.sex);
        set!(self.data.open_age, o.open_age);
        if let Some(s) = &o.smooth {
            self.data.smoothing = s == "on";
        }
        if o.no_smoothing {
            self.data.smoothing = false;
        }
        match o.lambda.as_deref() {
            None => {}
            Some("auto") => self.data.smoothing_lambda = None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v >= 0.0 => self.data.smoothing_lambda = Some(v),
                _ => return Err(CliError::Usage(format!("invalid smoothing penalty '{s}'"))),
            },
        }
        match o.monotone_from.as_deref() {
            None => {}
            Some("off") => self.data.monotone_from_age = None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) if v.is_finite() => self.data.monotone_from_age = Some(v),
                _ => return Err(CliError::Usage(format!("invalid monotone start age '{s}'"))),
            },
        }
        set!(self.model.method, o.method);
        set!(self.model.kappa, o.kappa);
        set!(self.model.kappa_criterion, o.kappa_criterion);
        set!(self.model.components, o.components);
        set!(self.model.kernel, o.kernel);
        set!(self.model.bandwidth, o.bandwidth);
        set!(self.model.score_model, o.score_model);
        set!(self.model.kpss, o.kpss);
        set!(self.bootstrap.replicates, o.replicates);
        set!(self.bootstrap.alpha, o.alpha);
        if o.seed.is_some() {
            self.bootstrap.seed = o.seed;
        }
        set!(self.split.validation, o.validation);
        set!(self.split.test, o.test);
        set!(self.output.dir, o.out);
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = OutputSection::default();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn resolve(&self, needs_bootstrap: bool) -> Result<Resolved, CliError> {
        let usage = |msg: String| CliError::Usage(msg);
        let rates = self
            .input
            .rates
            .clone()
            .ok_or_else(|| usage("no rates file given (input.rates or --rates)".into()))?;
        for p in std::iter::once(&rates).chain(self.input.exposures.as_ref()) {
            if !p.is_file() {
                return Err(usage(format!("input file not found: {}", p.display())));
            }
        }
        let sex: Sex = self.input.sex.parse().map_err(|e: nsfts::Error| usage(e.to_string()))?;

        let kappa = match self.model.kappa.as_str() {
            "auto" => None,
            s => {
                let k: f64 = s.parse().map_err(|_| usage(format!("invalid kappa '{s}'")))?;
                if !(k > 0.0 && k < 1.0) {
                    return Err(usage(format!("kappa must lie in (0, 1), got {k}")));
                }
                Some(k)
            }
        };
        let criterion: KappaCriterion = self
            .model
            .kappa_criterion
            .parse()
            .map_err(|e: nsfts::Error| usage(e.to_string()))?;
        let components = match self.model.components.as_str() {
            "auto" => Components::Auto,
            s => match s.parse::<usize>() {
                Ok(k) if k > 0 => Components::Fixed(k),
                _ => return Err(usage(format!("invalid component count '{s}'"))),
            },
        };
        let kernel: Kernel = self.model.kernel.parse().map_err(|e: nsfts::Error| usage(e.to_string()))?;
        let bandwidth = match self.model.bandwidth.as_str() {
            "auto" => Bandwidth::Auto,
            s => match s.parse::<f64>() {
                Ok(b) if b > 0.0 => Bandwidth::Fixed(b),
                _ => return Err(usage(format!("invalid bandwidth '{s}'"))),
            },
        };
        let kind: ScoreModelKind = self
            .model
            .score_model
            .parse()
            .map_err(|e: nsfts::Error| usage(e.to_string()))?;
        let kpss: KpssVariant = self.model.kpss.parse().map_err(|e: nsfts::Error| usage(e.to_string()))?;
        if !(self.model.independence_level > 0.0 && self.model.independence_level < 1.0) {
            return Err(usage("independence_level must lie in (0, 1)".into()));
        }

        let bootstrap = if needs_bootstrap && self.bootstrap.replicates > 0 {
            let seed = self.bootstrap.seed.ok_or_else(|| {
                usage("bootstrap runs need a seed (bootstrap.seed or --seed)".into())
            })?;
            if !(self.bootstrap.alpha > 0.0 && self.bootstrap.alpha < 1.0) {
                return Err(usage(format!("alpha must lie in (0, 1), got {}", self.bootstrap.alpha)));
            }
            Some(BootstrapSpec {
                replicates: self.bootstrap.replicates,
                alpha: self.bootstrap.alpha,
                seed,
            })
        } else {
            None
        };
        if criterion.needs_bands() && self.model.method != Method::Standard && kappa.is_none() && bootstrap.is_none() {
            return Err(usage(format!(
                "kappa criterion '{}' needs bootstrap bands",
                self.model.kappa_criterion
            )));
        }

        let smoothing = self.data.smoothing.then(|| SmoothingSpec {
            lambda: self.data.smoothing_lambda.map_or(Lambda::Auto, Lambda::Fixed),
            monotone_from_age: self.data.monotone_from_age,
            weights_mode: if self.data.exposure_weights && self.input.exposures.is_some() {
                WeightsMode::ExposureBased
            } else {
                WeightsMode::Uniform
            },
            ..SmoothingSpec::default()
        });

        Ok(Resolved {
            rates,
            exposures: self.input.exposures.clone(),
            sex,
            data: DataConfig {
                open_age: self.data.open_age,
                smoothing,
            },
            pipeline: PipelineConfig {
                fit: FitOptions {
                    kappa: None,
                    kernel: KernelSpec { kind: kernel, bandwidth },
                    components,
                    independence: IndependenceTestSpec {
                        lags: self.model.independence_lags,
                        level: self.model.independence_level,
                        ..IndependenceTestSpec::default()
                    },
                },
                score_model: ScoreModelConfig {
                    kind,
                    arima: ArimaConfig {
                        kpss,
                        ..ArimaConfig::default()
                    },
                    ..ScoreModelConfig::default()
                },
                bootstrap,
            },
            method: self.model.method,
            kappa,
            criterion,
            validation: self.split.validation,
            test: self.split.test,
            out: self.output.dir.clone(),
            hash: self.hash(),
        })
    }
}

/// A validated configuration in library terms.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub rates: PathBuf,
    pub exposures: Option<PathBuf>,
    pub sex: Sex,
    pub data: DataConfig,
    /// `fit.kappa` is filled in per method.
    pub pipeline: PipelineConfig,
    pub method: Method,
    /// Fixed κ for the weighted method; `None` selects it on the validation block.
    pub kappa: Option<f64>,
    pub criterion: KappaCriterion,
    pub validation: usize,
    pub test: usize,
    pub out: PathBuf,
    pub hash: String,
}

impl Resolved {
    pub fn methods(&self) -> Vec<Method> {
        match self.method {
            Method::Both => vec![Method::Standard, Method::Weighted],
            m => vec![m],
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_overrides() {
        let text = r#"
            [input]
            sex = "female"
            [model]
            method = "both"
            kappa = "0.3"
            [bootstrap]
            replicates = 200
            seed = 9
        "#;
        let mut cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.method, Method::Both);
        assert_eq!(cfg.split.test, 30);
        let before = cfg.hash();
        cfg.apply(&Overrides {
            seed: Some(10),
            out: Some("elsewhere".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert_eq!(cfg.bootstrap.seed, Some(10));
        assert_ne!(cfg.hash(), before);
        let mut moved = cfg.clone();
        moved.output.dir = "other".into();
        assert_eq!(moved.hash(), cfg.hash());
    }

    #[test]
    fn smoothing_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            smooth: Some("off".into()),
            lambda: Some("2.5".into()),
            monotone_from: Some("off".into()),
            kpss: Some("trend".into()),
            ..Overrides::default()
        })
        .unwrap();
        assert!(!cfg.data.smoothing);
        assert_eq!(cfg.data.smoothing_lambda, Some(2.5));
        assert_eq!(cfg.data.monotone_from_age, None);
        assert_eq!(cfg.model.kpss, "trend");
        let bad = Overrides {
            lambda: Some("-1".into()),
            ..Overrides::default()
        };
        assert!(matches!(cfg.apply(&bad), Err(CliError::Usage(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nmethd = \"both\"").is_err());
    }

    #[test]
    fn bootstrap_requires_seed() {
        let dir = tempfile::tempdir().unwrap();
        let rates = dir.path().join("r.txt");
        std::fs::write(&rates, "").unwrap();
        let mut cfg = RunConfig::default();
        cfg.input.rates = Some(rates);
        assert!(matches!(cfg.resolve(true), Err(CliError::Usage(_))));
        assert!(cfg.resolve(false).is_ok());
        cfg.bootstrap.seed = Some(1);
        assert!(cfg.resolve(true).unwrap().pipeline.bootstrap.is_some());
        cfg.model.kappa = "1.5".into();
        assert!(cfg.resolve(false).is_err());
    }
}
