//! The run configuration file shared by every command.
//!
//! A TOML file with sections `[paths]`, `[model]`, `[train]`, `[data]`,
//! `[eval]`, `[ablate]` and `[attention]`, plus a top-level `seeds` list.
//! Every section is optional and falls back to its defaults. Relative paths
//! resolve against the directory holding the config file.
//!
//! The active seed drives the model initialization, the training streams
//! and the synthetic data generator at once, so per-section `seed` keys are
//! rejected in favour of the top-level list.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::AblationSpec;
use crate::data::{generate_synthetic, load_dataset, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::layers::Side;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Files read and written by the commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory. `gen-data` writes it; the other commands read it
    /// when set and generate synthetic data in memory from `[data]` when not.
    pub data: Option<PathBuf>,
    pub checkpoint: PathBuf,
    /// Loss trace, one JSON record per line.
    pub trace: PathBuf,
    /// Evaluation report.
    pub report: PathBuf,
    pub ablation: PathBuf,
    pub attention: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data: None,
            checkpoint: "out/model.json".into(),
            trace: "out/trace.jsonl".into(),
            report: "out/report.txt".into(),
            ablation: "out/ablation.txt".into(),
            attention: "out/attention.txt".into(),
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = &mut self.data {
            join(d);
        }
        for p in [
            &mut self.checkpoint,
            &mut self.trace,
            &mut self.report,
            &mut self.ablation,
            &mut self.attention,
        ] {
            join(p);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub side: Side,
    /// For linear adaptation, report mean absolute weights per field instead
    /// of failing.
    pub linear_magnitudes: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            side: Side::Item,
            linear_magnitudes: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds of a run; single-run commands use the first.
    pub seeds: Vec<u64>,
    pub paths: Paths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: SynthConfig,
    pub eval: EvalOptions,
    pub ablate: AblationSpec,
    pub attention: AttentionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![1],
            paths: Paths::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: SynthConfig::default(),
            eval: EvalOptions::default(),
            ablate: AblationSpec::default(),
            attention: AttentionConfig::default(),
        }
    }
}

/// Where a command's dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKey {
    /// Synthetic data generated from this configuration.
    Synthetic(SynthConfig),
    /// SHA-256 over the files of a dataset directory.
    Files(String),
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        for section in ["model", "train", "data"] {
            if raw.get(section).and_then(|s| s.get("seed")).is_some() {
                return Err(Error::Config(format!(
                    "`{section}.seed` is not allowed; set the top-level `seeds` list instead"
                )));
            }
        }
        let mut cfg: RunConfig =
            RunConfig::deserialize(raw).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.paths.resolve(base);
        cfg.apply_seed(cfg.seeds.first().copied().unwrap_or_default());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        RunConfig::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()?;
        self.eval.validate()?;
        self.ablate.validate()?;
        Ok(())
    }

    /// Replaces the seed list by a single seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
        self.apply_seed(seed);
    }

    /// Sets the model, training and data seeds to `seed`.
    pub fn apply_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.data.seed = seed;
    }

    pub fn with_seed(&self, seed: u64) -> RunConfig {
        let mut out = self.clone();
        out.apply_seed(seed);
        out
    }

    /// The dataset of this configuration at its current seed.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.paths.data {
            Some(dir) => {
                if !dir.join("schema.json").exists() {
                    return Err(Error::Config(format!(
                        "data directory `{}` has no schema.json",
                        dir.display()
                    )));
                }
                Ok(load_dataset(dir)?.0)
            }
            None => generate_synthetic(&self.data),
        }
    }

    pub fn data_key(&self) -> Result<DataKey> {
        match &self.paths.data {
            Some(dir) => Ok(DataKey::Files(fingerprint_dir(dir)?)),
            None => Ok(DataKey::Synthetic(self.data.clone())),
        }
    }

    /// Digest of the settings that determine a command's numbers. Paths are
    /// left out so that a moved run reproduces the same header.
    pub fn digest(&self) -> Result<String> {
        crate::eval::config_digest(&serde_json::json!({
            "seeds": self.seeds,
            "model": self.model,
            "train": self.train,
            "data": self.data_key()?,
            "eval": self.eval,
        }))
    }
}

/// SHA-256 over the dataset files in `dir`, in a fixed order.
pub fn fingerprint_dir(dir: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    for name in [
        "schema.json",
        "vocab.json",
        "users.tsv",
        "items.tsv",
        "train.tsv",
        "test.tsv",
        "candidates.tsv",
    ] {
        let path = dir.join(name);
        if path.exists() {
            hasher.update(name.as_bytes());
            hasher.update([0]);
            hasher.update(fs::read(&path)?);
            hasher.update([0]);
        }
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}
