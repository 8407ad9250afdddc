//! Versioned JSON documents for fitted pipelines.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::pipeline::{DataConfig, FittedPipeline, PipelineConfig};

pub const MODEL_FORMAT: &str = "nsfts-model";
pub const MODEL_VERSION: u32 = 1;

/// Provenance block attached to every artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    /// Version of the producing library.
    pub version: String,
    /// Hex digest of the canonical run configuration.
    pub config_hash: String,
    pub seed: Option<u64>,
}

impl ArtifactHeader {
    pub fn new(config_hash: impl Into<String>, seed: Option<u64>) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.into(),
            seed,
        }
    }

    /// `# key: value` lines for text outputs.
    pub fn comment_block(&self) -> String {
        let seed = self.seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# nsfts version: {}\n# config hash: {}\n# seed: {seed}\n",
            self.version, self.config_hash
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub format_version: u32,
    pub header: ArtifactHeader,
    /// Population label such as `male`.
    pub population: Option<String>,
    pub data: DataConfig,
    pub config: PipelineConfig,
    pub pipeline: FittedPipeline,
}

impl ModelDocument {
    pub fn new(
        header: ArtifactHeader,
        population: Option<String>,
        data: DataConfig,
        config: PipelineConfig,
        pipeline: FittedPipeline,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_VERSION,
            header,
            population,
            data,
            config,
            pipeline,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses and validates a document.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("not valid JSON: {e}")))?;
        match value.get("format").and_then(Value::as_str) {
            Some(MODEL_FORMAT) => {}
            Some(other) => return Err(Error::Schema(format!("unexpected format '{other}'"))),
            None => return Err(Error::Schema("missing 'format' field".into())),
        }
        match value.get("format_version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => {
                return Err(Error::Schema(format!(
                    "format version {v} is not supported (expected {MODEL_VERSION})"
                )))
            }
            None => return Err(Error::Schema("missing 'format_version' field".into())),
        }
        let doc: Self =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    fn validate(&self) -> Result<()> {
        let m = &self.pipeline.model;
        let p = m.mean.len();
        let n = m.residuals_y.n();
        let bad = |msg: String| Err(Error::Schema(msg));
        if m.stage1.eigenfunctions.nrows() != p || m.residuals_y.p() != p || m.residuals_z.p() != p {
            return bad(format!("grid size mismatch: mean has {p} points"));
        }
        if m.stage1.scores.shape() != (n, m.r()) {
            return bad(format!(
                "stage-1 scores are {:?}, expected ({n}, {})",
                m.stage1.scores.shape(),
                m.r()
            ));
        }
        if self.pipeline.stage1.k() != m.r() {
            return bad("stage-1 forecaster does not match the stage-1 basis".into());
        }
        match (&m.stage2, &self.pipeline.stage2) {
            (None, None) => {}
            (Some(b), Some(f)) if b.k() == f.k() && b.eigenfunctions.nrows() == p && b.scores.nrows() == n => {}
            _ => return bad("stage-2 basis and forecaster are inconsistent".into()),
        }
        if m.mean.iter().any(|v| !v.is_finite()) {
            return bad("non-finite mean function".into());
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
