use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticPairSpec;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, NormKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NormSetting {
    Uniform(NormKind),
    PerLayer(Vec<NormKind>),
}

impl Default for NormSetting {
    fn default() -> Self {
        NormSetting::Uniform(NormKind::Tdbn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    /// One kind for every hidden layer, or a list with one entry per hidden layer.
    #[serde(default)]
    pub norm_kind: NormSetting,
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec> {
        let spec = match &self.norm_kind {
            NormSetting::Uniform(kind) => ModelSpec {
                layer_sizes: self.layer_sizes.clone(),
                norm_kinds: vec![*kind; self.layer_sizes.len().saturating_sub(2)],
            },
            NormSetting::PerLayer(kinds) => ModelSpec { layer_sizes: self.layer_sizes.clone(), norm_kinds: kinds.clone() },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub source_images: PathBuf,
    pub source_labels: PathBuf,
    pub target_images: PathBuf,
    pub target_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticPairSpec),
    Idx(IdxPaths),
}

/// Every `holdout_stride`-th sample of each domain is held out for
/// accuracy and diagnostics; `0` evaluates on the training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub holdout_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { holdout_stride: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrthoDemoConfig {
    pub n: usize,
    pub m: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
}

impl Default for OrthoDemoConfig {
    fn default() -> Self {
        Self { n: 4, m: 64, learning_rate: 0.01, momentum: 0.9, steps: 5000, record_every: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WhitenCheckConfig {
    pub dim: usize,
    pub condition_number: f64,
    pub samples: usize,
    pub max_steps: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for WhitenCheckConfig {
    fn default() -> Self {
        Self { dim: 8, condition_number: 10.0, samples: 256, max_steps: 10, epsilon: crate::normalization::DEFAULT_EPSILON, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ortho_demo: OrthoDemoConfig,
    #[serde(default)]
    pub whiten_check: WhitenCheckConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(model) = &self.model {
            let spec = model.spec()?;
            if let Some(DataConfig::Synthetic(data)) = &self.data {
                if data.dim != spec.input_dim() {
                    return Err(Error::config(
                        "model.layer_sizes",
                        format!("input width {} does not match data.dim {}", spec.input_dim(), data.dim),
                    ));
                }
                if data.classes != spec.classes() {
                    return Err(Error::config(
                        "model.layer_sizes",
                        format!("output width {} does not match data.classes {}", spec.classes(), data.classes),
                    ));
                }
            }
        }
        if let Some(DataConfig::Synthetic(data)) = &self.data {
            data.validate()?;
        }
        if self.eval.holdout_stride == 1 {
            return Err(Error::config("eval.holdout_stride", "must be 0 or >= 2"));
        }
        let o = &self.ortho_demo;
        if o.n == 0 || o.m < o.n {
            return Err(Error::config("ortho_demo.m", "need 1 <= n <= m"));
        }
        if !(o.learning_rate > 0.0) || !o.learning_rate.is_finite() {
            return Err(Error::config("ortho_demo.learning_rate", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("ortho_demo.momentum", "must lie in [0, 1)"));
        }
        let w = &self.whiten_check;
        if w.dim == 0 {
            return Err(Error::config("whiten_check.dim", "must be >= 1"));
        }
        if !(w.condition_number >= 1.0) || !w.condition_number.is_finite() {
            return Err(Error::config("whiten_check.condition_number", "must be finite and >= 1"));
        }
        if w.samples < 2 {
            return Err(Error::config("whiten_check.samples", "must be >= 2"));
        }
        if w.max_steps == 0 {
            return Err(Error::config("whiten_check.max_steps", "must be >= 1"));
        }
        let (lo, hi) = crate::normalization::EPSILON_RANGE;
        if !(lo..=hi).contains(&w.epsilon) {
            return Err(Error::config("whiten_check.epsilon", "must lie in [1e-8, 1e-2]"));
        }
        Ok(())
    }

    /// Replaces every seed in the document.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.ortho_demo.seed = seed;
        self.whiten_check.seed = seed;
        if let Some(DataConfig::Synthetic(data)) = &mut self.data {
            data.seed = seed;
        }
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.as_ref().ok_or_else(|| Error::config("model", "missing section"))?.spec()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a configuration document.
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut de = serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::config(if path == "." { "<root>".to_string() } else { path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_config_str(&fs::read_to_string(path)?)
}
