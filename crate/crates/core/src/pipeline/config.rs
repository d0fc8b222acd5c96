use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ProposalSource;
use crate::mask::CropConfig;
use crate::prompt::{resolve_template, Augmentations};
use crate::saliency::{FusionParams, PeakParams};
use crate::select::FallbackPolicy;

/// Environment variable listing directories searched for named adapters.
pub const ADAPTER_PATH_ENV: &str = "SEGALIGN_ADAPTER_PATH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EncoderSpec {
    /// Precomputed tensors in a directory.
    TensorDir { path: PathBuf },
    /// A tensor directory called `name` found on the adapter search path.
    Named { name: String },
}

impl EncoderSpec {
    pub fn resolve(&self) -> Result<PathBuf> {
        match self {
            EncoderSpec::TensorDir { path } => Ok(path.clone()),
            EncoderSpec::Named { name } => {
                let search = std::env::var_os(ADAPTER_PATH_ENV).unwrap_or_default();
                std::env::split_paths(&search)
                    .map(|dir| dir.join(name))
                    .find(|p| p.is_dir())
                    .ok_or_else(|| Error::Config(format!("adapter `{name}` not found on {ADAPTER_PATH_ENV}")))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub bank: PathBuf,
    /// Overrides the bank's template (preset name or literal with `{CLASS}`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default = "all_augmentations")]
    pub augmentations: Augmentations,
    #[serde(default)]
    pub crop: CropConfig,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub peaks: PeakParams,
    #[serde(default)]
    pub fusion: FusionParams,
    /// Select a proposal; when false the thresholded saliency map is exported.
    #[serde(default = "yes")]
    pub selection: bool,
    #[serde(default)]
    pub fallback: FallbackPolicy,
    pub encoder: EncoderSpec,
    pub proposals: ProposalSource,
    /// Directory of `<image_id>.png`.
    pub images: PathBuf,
    /// Restricts the run to these images; default is every PNG in `images`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expressions: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
}

fn all_augmentations() -> Augmentations {
    Augmentations::ALL
}

fn default_tau() -> f64 {
    0.01
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    1
}

fn must_exist(what: &str, p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl PipelineConfig {
    /// Reads a config file, or the config recorded in a run manifest. Relative
    /// paths resolve against the file's directory and come back absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let value = match value {
            serde_json::Value::Object(mut m) if m.contains_key("manifest_version") => m
                .remove("config")
                .ok_or_else(|| Error::Config("manifest has no config".into()))?,
            v => v,
        };
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::json(path, e))?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::path::absolute(dir).map_err(|e| Error::io(dir, e))?;
        Ok(cfg.relative_to(&base))
    }

    /// Resolves relative paths against `base`.
    pub fn relative_to(mut self, base: &Path) -> Self {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.bank);
        fix(&mut self.images);
        fix(&mut self.out);
        if let Some(p) = self.gt.as_mut() {
            fix(p);
        }
        if let Some(p) = self.expressions.as_mut() {
            fix(p);
        }
        if let EncoderSpec::TensorDir { path } = &mut self.encoder {
            fix(path);
        }
        if let ProposalSource::File { path } = &mut self.proposals {
            fix(path);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        must_exist("bank", &self.bank)?;
        must_exist("image directory", &self.images)?;
        if let Some(p) = &self.gt {
            must_exist("ground truth", p)?;
        }
        if let Some(p) = &self.expressions {
            must_exist("expressions", p)?;
        }
        if let ProposalSource::File { path } = &self.proposals {
            must_exist("proposals", path)?;
        }
        must_exist("encoder tensors", &self.encoder.resolve()?)?;
        if let Some(t) = &self.template {
            resolve_template(t)?;
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidTemperature(self.tau));
        }
        if !(0.0..=1.0).contains(&self.peaks.theta) {
            return Err(Error::Config(format!(
                "theta must lie in [0, 1], got {}",
                self.peaks.theta
            )));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.crop.min_side == 0 {
            return Err(Error::Config("crop min_side must be at least 1".into()));
        }
        Ok(())
    }
}
