use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{read_file, SCHEMA_VERSION};
use crate::experiments::DatasetSpec;
use crate::network::{ArchKind, Architecture, TrainConfig};
use crate::{Error, Result};

/// Which network variants a run trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchChoice {
    Plain,
    Resnet,
    /// Parameter-matched plain and residual pair.
    Both,
}

impl ArchChoice {
    pub fn kinds(self) -> Vec<ArchKind> {
        match self {
            ArchChoice::Plain => vec![ArchKind::Plain],
            ArchChoice::Resnet => vec![ArchKind::Resnet],
            ArchChoice::Both => vec![ArchKind::Plain, ArchKind::Resnet],
        }
    }
}

/// Architecture without the data-dependent input and output sizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    #[serde(rename = "type")]
    pub kind: ArchChoice,
    /// One width per fixed-width stage.
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
}

impl ArchConfig {
    pub fn architecture(&self, kind: ArchKind, input_dim: usize, n_classes: usize) -> Architecture {
        Architecture {
            kind,
            input_dim,
            widths: self.widths.clone(),
            blocks_per_stage: self.blocks_per_stage,
            n_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessConfig {
    #[serde(default = "default_gaussian_levels")]
    pub gaussian_levels: Vec<f64>,
    #[serde(default = "default_fgsm_levels")]
    pub fgsm_levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_gaussian_levels() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

fn default_fgsm_levels() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 50.0).collect()
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            gaussian_levels: default_gaussian_levels(),
            fgsm_levels: default_fgsm_levels(),
            seed: 0,
        }
    }
}

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}

fn default_reports() -> Vec<ReportFormat> {
    vec![ReportFormat::Json, ReportFormat::Csv]
}

/// Everything a CLI run needs. See `schemas/run_config.schema.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub architecture: ArchConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Weight-decay grid for `sweep`; defaults to `[train.gamma]`.
    #[serde(default)]
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default = "default_reports")]
    pub reports: Vec<ReportFormat>,
    #[serde(default)]
    pub robustness: RobustnessConfig,
}

/// The published run-config schema.
pub const RUN_CONFIG_SCHEMA: &str = include_str!("../../schemas/run_config.schema.json");

fn schema() -> &'static jsonschema::Validator {
    static VALIDATOR: OnceLock<jsonschema::Validator> = OnceLock::new();
    VALIDATOR.get_or_init(|| {
        let schema: serde_json::Value = serde_json::from_str(RUN_CONFIG_SCHEMA).expect("bundled schema is JSON");
        jsonschema::validator_for(&schema).expect("bundled schema is valid")
    })
}

/// `/architecture/widths/1` as `architecture.widths[1]`; the root is `$`.
fn dotted(pointer: &jsonschema::paths::Location) -> String {
    let mut out = String::new();
    for seg in pointer.segments() {
        match seg {
            jsonschema::paths::LocationSegment::Index(i) => out.push_str(&format!("[{i}]")),
            jsonschema::paths::LocationSegment::Property(p) => {
                if !out.is_empty() {
                    out.push('.');
                }
                out.push_str(&p);
            }
        }
    }
    if out.is_empty() {
        "$".to_string()
    } else {
        out
    }
}

fn bad(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn check_levels(path: &str, levels: &[f64]) -> Result<()> {
    for (i, &l) in levels.iter().enumerate() {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(bad(format!("{path}[{i}]"), format!("{l} must be finite and >= 0")));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Checks `text` against the published schema, then deserializes and
    /// applies the remaining semantic checks. Errors carry the offending
    /// field path, e.g. `train.lr` or `architecture.widths[1]`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| bad("$", e.to_string()))?;
        if let Some(err) = schema().iter_errors(&value).next() {
            return Err(bad(dotted(err.instance_path()), err.to_string()));
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            bad(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative dataset paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| bad("$", "config is not UTF-8"))?;
        let mut cfg = RunConfig::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.dataset.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(bad("schema_version", format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version)));
        }
        match &self.dataset {
            DatasetSpec::Blobs { n_classes, per_class, dim, noise, separation } => {
                if *n_classes < 2 {
                    return Err(bad("dataset.n_classes", "must be >= 2"));
                }
                if *per_class == 0 {
                    return Err(bad("dataset.per_class", "must be >= 1"));
                }
                if *dim == 0 {
                    return Err(bad("dataset.dim", "must be >= 1"));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(bad("dataset.noise", "must be finite and >= 0"));
                }
                if !separation.is_finite() {
                    return Err(bad("dataset.separation", "must be finite"));
                }
            }
            DatasetSpec::Spirals { n_classes, per_class, noise } => {
                if *n_classes < 2 {
                    return Err(bad("dataset.n_classes", "must be >= 2"));
                }
                if *per_class == 0 {
                    return Err(bad("dataset.per_class", "must be >= 1"));
                }
                if !(*noise >= 0.0 && noise.is_finite()) {
                    return Err(bad("dataset.noise", "must be finite and >= 0"));
                }
            }
            DatasetSpec::MnistSubset { classes, .. } => {
                if classes.len() < 2 {
                    return Err(bad("dataset.classes", "need at least two classes"));
                }
                if let Some(c) = classes.iter().find(|&&c| c > 9) {
                    return Err(bad("dataset.classes", format!("{c} is not a digit")));
                }
                let mut sorted = classes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != classes.len() {
                    return Err(bad("dataset.classes", "duplicate class"));
                }
            }
        }
        let a = &self.architecture;
        if a.widths.is_empty() {
            return Err(bad("architecture.widths", "need at least one stage"));
        }
        if let Some(i) = a.widths.iter().position(|&w| w == 0) {
            return Err(bad(format!("architecture.widths[{i}]"), "must be >= 1"));
        }
        if a.blocks_per_stage == 0 {
            return Err(bad("architecture.blocks_per_stage", "must be >= 1"));
        }
        // The dataset size is unknown here; batch size is bounded later.
        self.train.validate(usize::MAX)?;
        check_levels("gammas", &self.gammas)?;
        let mut g = self.gammas.clone();
        g.sort_by(f64::total_cmp);
        if g.windows(2).any(|w| w[0] == w[1]) {
            return Err(bad("gammas", "values must be distinct"));
        }
        if self.reports.is_empty() {
            return Err(bad("reports", "need at least one format"));
        }
        check_levels("robustness.gaussian_levels", &self.robustness.gaussian_levels)?;
        check_levels("robustness.fgsm_levels", &self.robustness.fgsm_levels)?;
        Ok(())
    }

    pub fn gamma_grid(&self) -> Vec<f64> {
        if self.gammas.is_empty() {
            vec![self.train.gamma]
        } else {
            self.gammas.clone()
        }
    }

    pub fn wants(&self, format: ReportFormat) -> bool {
        self.reports.contains(&format)
    }
}
