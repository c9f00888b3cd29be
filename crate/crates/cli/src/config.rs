use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use distsep::danse::SeparationConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_DURATION_S: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    OracleIrm,
    FileMasks,
    MwfLocalOnly,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::OracleIrm => "oracle-irm",
            Method::FileMasks => "file-masks",
            Method::MwfLocalOnly => "mwf-local-only",
        }
    }

    /// The separation settings this method implies on top of `base`.
    pub fn configure(self, base: &SeparationConfig) -> SeparationConfig {
        use distsep::mask::MaskKind;
        let mut cfg = base.clone();
        match self {
            Method::OracleIrm => {
                cfg.first_step.kind = MaskKind::OracleIrm;
                cfg.second_step.kind = MaskKind::OracleIrm;
                cfg.exchange = true;
            }
            Method::FileMasks => {
                cfg.first_step.kind = MaskKind::File;
                cfg.second_step.kind = MaskKind::File;
                cfg.exchange = true;
            }
            Method::MwfLocalOnly => {
                cfg.first_step.kind = MaskKind::OracleIrm;
                cfg.second_step.kind = MaskKind::OracleIrm;
                cfg.exchange = false;
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub n_sources: usize,
    pub n_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: Vec<Condition>,
    pub scenes_per_condition: usize,
    #[serde(default)]
    pub seed: u64,
    /// Dry-source WAVs (16 kHz mono); synthetic speech-like sources when absent.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub output_dir: PathBuf,
    pub method: Method,
    /// Root of per-scene mask directories, for `file-masks`.
    #[serde(default)]
    pub masks_dir: Option<PathBuf>,
    #[serde(default)]
    pub separation: SeparationConfig,
    /// Also write masks and filters of every node.
    #[serde(default)]
    pub write_tensors: bool,
}

fn default_duration() -> f64 {
    DEFAULT_DURATION_S
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            bail!("configuration error: the (N, K) grid is empty");
        }
        if let Some(c) = self.grid.iter().find(|c| c.n_sources == 0 || c.n_nodes == 0) {
            bail!("configuration error: condition N={} K={} needs N, K >= 1", c.n_sources, c.n_nodes);
        }
        if self.scenes_per_condition == 0 {
            bail!("configuration error: scenes_per_condition must be positive");
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            bail!("configuration error: duration_s must be positive");
        }
        if self.method == Method::FileMasks && self.masks_dir.is_none() {
            bail!("configuration error: method file-masks needs masks_dir");
        }
        self.method.configure(&self.separation).validate()?;
        Ok(())
    }
}
