//! Run configuration: a TOML file with `[dataset]`, `[validation]`,
//! `[model]`, `[train]`, `[loss]` and `[perceptual]` sections, plus
//! `section.key=value` overrides.
//!
//! ```toml
//! [dataset]
//! task = "LLE"
//! root = "data/lol"          # or input_dir = ..., target_dir = ...
//! resize = [512, 512]
//!
//! [model]
//! nr_curves = 16
//!
//! [train]
//! epochs = 200
//! batch = 2
//! ```
//!
//! Every key is optional except the dataset location; defaults are the
//! published training settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imaging::{DatasetSpec, Task};
use crate::losses::{ExtractorKind, LossWeights, PerceptualConfig};
use crate::model::ModelConfig;
use crate::training::TrainConfig;
use crate::{Error, Result};

/// The `[dataset]` / `[validation]` section as written in the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSection {
    #[serde(default = "default_task")]
    task: Task,
    root: Option<PathBuf>,
    input_dir: Option<PathBuf>,
    target_dir: Option<PathBuf>,
    #[serde(default = "default_resize")]
    resize: Option<[usize; 2]>,
    /// Train at each image's own size instead of resizing.
    #[serde(default)]
    native_resolution: bool,
    augmentation: Option<[f64; 2]>,
    subset: Option<usize>,
    #[serde(default)]
    subset_seed: u64,
}

fn default_task() -> Task {
    Task::Lle
}

fn default_resize() -> Option<[usize; 2]> {
    Some([512, 512])
}

impl DatasetSection {
    fn resolve(self, section: &str) -> Result<DatasetSpec> {
        let input_dir = self
            .input_dir
            .or_else(|| self.root.as_ref().map(|r| r.join("input")))
            .ok_or_else(|| Error::Config(format!("[{section}] needs root or input_dir")))?;
        let target_dir = self.target_dir.or_else(|| self.root.as_ref().map(|r| r.join("target")));
        Ok(DatasetSpec {
            task: self.task,
            input_dir,
            target_dir,
            resize: if self.native_resolution {
                None
            } else {
                self.resize.map(|[h, w]| (h, w))
            },
            augmentation: self.augmentation.map(|[a, b]| (a, b)),
            subset: self.subset,
            subset_seed: self.subset_seed,
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dataset: Option<DatasetSection>,
    validation: Option<DatasetSection>,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    loss: LossWeights,
    #[serde(default)]
    perceptual: PerceptualConfig,
}

/// A fully resolved, validated training configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<DatasetSpec>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub perceptual: PerceptualConfig,
}

impl RunConfig {
    /// Defaults around a dataset.
    pub fn new(dataset: DatasetSpec) -> Self {
        Self {
            dataset,
            validation: None,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
            perceptual: PerceptualConfig::default(),
        }
    }

    /// Parses TOML text after applying `key=value` overrides.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("config is not valid TOML: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let raw: RawConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        let dataset = raw
            .dataset
            .ok_or_else(|| Error::Config("missing [dataset] section".into()))?
            .resolve("dataset")?;
        Ok(Self {
            dataset,
            validation: raw.validation.map(|v| v.resolve("validation")).transpose()?,
            model: raw.model,
            train: raw.train,
            loss: raw.loss,
            perceptual: raw.perceptual,
        })
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    /// Checks everything a run needs before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.perceptual.extractor == ExtractorKind::Vgg16 {
            match &self.perceptual.weights {
                Some(p) if p.is_file() => {}
                Some(p) => return Err(Error::Weights(format!("VGG16 weights file {} not found", p.display()))),
                None => return Err(Error::Weights("perceptual.weights must name the VGG16 weights file".into())),
            }
        }
        self.dataset.validate()?;
        if let Some(v) = &self.validation {
            v.validate()?;
        }
        Ok(())
    }

    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serialises")
    }

    pub fn echo_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serialises")
    }
}

/// Applies `a.b.c=value`; the value is parsed as TOML and falls back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
