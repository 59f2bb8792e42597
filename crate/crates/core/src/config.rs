//! Run configuration, read from TOML.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::cka::{CkaConfig, Estimator};
use crate::error::{Error, Result};
use crate::hr::StftParams;
use crate::select::{SelectOptions, SelectionMode};
use crate::stats::CorrelateOptions;
use crate::synth::{DomainSpec, DEFAULT_WIDTHS};

fn default_widths() -> Vec<usize> {
    DEFAULT_WIDTHS.to_vec()
}
fn default_folds() -> usize {
    5
}
fn default_batch() -> usize {
    64
}
fn default_lambda() -> f64 {
    1e-2
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_alpha() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_folds")]
    pub fold_count: usize,
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lambda")]
    pub ridge_lambda: f64,
    #[serde(default)]
    pub stft: StftParams,
    /// Include `ds_y == ds_x` points when correlating metrics with MAE.
    #[serde(default = "yes")]
    pub correlate_include_self: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Let a target's own training-domain model compete during selection.
    #[serde(default)]
    pub select_include_self: bool,
    #[serde(default)]
    pub selection_mode: SelectionMode,
    pub domains: Vec<DomainSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::Config("no domains configured".into()));
        }
        let mut seen = HashSet::new();
        for d in &self.domains {
            if !seen.insert(d.domain_id.as_str()) {
                return Err(Error::Config(format!("duplicate domain_id '{}'", d.domain_id)));
            }
            d.validate()?;
            if d.subjects < self.fold_count {
                return Err(Error::Config(format!(
                    "domain '{}' has {} subjects for {} folds",
                    d.domain_id, d.subjects, self.fold_count
                )));
            }
        }
        let dim = self.domains[0].feature_dim;
        if let Some(d) = self.domains.iter().find(|d| d.feature_dim != dim) {
            return Err(Error::Config(format!(
                "domain '{}' has feature_dim {} but '{}' has {dim}; models are evaluated across domains",
                d.domain_id, d.feature_dim, self.domains[0].domain_id
            )));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(format!(
                "widths must list at least 2 positive layer sizes, got {:?}",
                self.widths
            )));
        }
        if self.fold_count == 0 {
            return Err(Error::Config("fold_count must be >= 1".into()));
        }
        if self.batch_size < self.estimator.min_samples() {
            return Err(Error::Config(format!(
                "batch_size {} below the {} estimator minimum of {}",
                self.batch_size,
                self.estimator,
                self.estimator.min_samples()
            )));
        }
        if !(self.ridge_lambda > 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "ridge_lambda must be positive, got {}",
                self.ridge_lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        self.stft.validate()
    }

    pub fn domain_ids(&self) -> Vec<String> {
        self.domains.iter().map(|d| d.domain_id.clone()).collect()
    }

    pub fn cka(&self) -> CkaConfig {
        CkaConfig {
            estimator: self.estimator,
            batch_size: self.batch_size,
        }
    }

    pub fn correlate_options(&self) -> CorrelateOptions {
        CorrelateOptions {
            include_self: self.correlate_include_self,
            alpha: self.alpha,
        }
    }

    pub fn select_options(&self) -> SelectOptions {
        SelectOptions {
            include_self: self.select_include_self,
            mode: self.selection_mode,
        }
    }
}
