//! Experiment configuration: one human-readable sectioned file, plus
//! scripted `--set section.key=value` overrides. Unknown keys are rejected
//! and every numeric range is validated before any dataset or checkpoint
//! file is opened.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use fltrain_core::faultmodel::{BitFlipModel, FaultModel, OverclockModel, ACC_BITS};
use fltrain_core::{Architecture, TrainConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads (0 = one per CPU).
    #[serde(default)]
    pub workers: usize,
    pub dataset: DatasetConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub fault: FaultConfig,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    /// CIFAR-10 binary batches.
    #[serde(default)]
    pub train_batches: Vec<PathBuf>,
    #[serde(default)]
    pub test_batches: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub arch: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
#[serde(tag = "kind")]
pub enum FaultConfig {
    None,
    Seu {
        rate: f64,
        #[serde(default)]
        bit_low: u32,
        #[serde(default = "default_bit_high")]
        bit_high: u32,
    },
    Overclock {
        f_safe: f64,
        base_rate: f64,
        /// Exponential growth per MHz. Give either `growth` directly or an
        /// anchor pair (`anchor_freq`, `anchor_rate`) to solve it from.
        #[serde(default)]
        growth: Option<f64>,
        #[serde(default)]
        anchor_freq: Option<f64>,
        #[serde(default)]
        anchor_rate: Option<f64>,
        #[serde(default = "default_msb_bias")]
        msb_bias: f64,
        /// Operating clock in MHz.
        freq: f64,
    },
}

fn default_bit_high() -> u32 {
    ACC_BITS - 1
}

fn default_msb_bias() -> f64 {
    2.0
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self::None
    }
}

/// The `[train]` section. Learning rate and epoch count defaults differ
/// between pre-training and fine-tuning, so they stay optional here and
/// each command fills its own.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub momentum: Option<f64>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub accuracy_threshold: Option<f64>,
    #[serde(default)]
    pub eval_interval: Option<usize>,
    #[serde(default)]
    pub eval_subset: Option<usize>,
}

impl ExperimentConfig {
    /// Parse the config file, apply `--set` overrides, then validate.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut value: toml::Value = text
            .parse()
            .with_context(|| format!("config file {} is not valid TOML", path.display()))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let config: ExperimentConfig =
            value.try_into().context("config does not match the expected schema")?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        Architecture::by_name(&self.network.arch)
            .map_err(|e| anyhow!("network.arch: {e}"))?;
        self.dataset.validate()?;
        self.fault_model().context("fault section")?;
        let t = &self.train;
        for (name, v) in [
            ("learning_rate", t.learning_rate),
            ("momentum", t.momentum),
            ("accuracy_threshold", t.accuracy_threshold),
        ] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    bail!("train.{name} = {v} is out of range");
                }
            }
        }
        if t.learning_rate == Some(0.0) {
            bail!("train.learning_rate must be positive");
        }
        if let Some(m) = t.momentum {
            if m >= 1.0 {
                bail!("train.momentum must lie in [0, 1)");
            }
        }
        if let Some(a) = t.accuracy_threshold {
            if a > 1.0 {
                bail!("train.accuracy_threshold must lie in [0, 1]");
            }
        }
        for (name, v) in [
            ("batch_size", t.batch_size),
            ("max_epochs", t.max_epochs),
            ("eval_interval", t.eval_interval),
        ] {
            if v == Some(0) {
                bail!("train.{name} must be positive");
            }
        }
        Ok(())
    }

    /// Resolve the fault section into a device fault model.
    pub fn fault_model(&self) -> Result<FaultModel> {
        match &self.fault {
            FaultConfig::None => Ok(FaultModel::None),
            FaultConfig::Seu { rate, bit_low, bit_high } => {
                let model = BitFlipModel::new(*rate, *bit_low, *bit_high)?;
                Ok(FaultModel::Seu(model))
            }
            FaultConfig::Overclock { .. } => {
                let (model, freq) = self.overclock_model()?;
                Ok(FaultModel::Overclock { model, freq_mhz: freq })
            }
        }
    }

    /// The overclock model of the fault section (error if it is not one),
    /// together with its configured operating frequency.
    pub fn overclock_model(&self) -> Result<(OverclockModel, f64)> {
        let FaultConfig::Overclock {
            f_safe,
            base_rate,
            growth,
            anchor_freq,
            anchor_rate,
            msb_bias,
            freq,
        } = &self.fault
        else {
            bail!("fault.kind must be 'overclock' for this operation");
        };
        let model = match (growth, anchor_freq, anchor_rate) {
            (Some(g), None, None) => OverclockModel::new(*f_safe, *base_rate, *g, *msb_bias)?,
            (None, Some(af), Some(ar)) => {
                OverclockModel::anchored(*f_safe, *base_rate, *af, *ar, *msb_bias)?
            }
            _ => bail!(
                "fault: give either 'growth' or the anchor pair 'anchor_freq'/'anchor_rate'"
            ),
        };
        if !(*freq > 0.0) {
            bail!("fault.freq = {freq} must be positive");
        }
        Ok((model, *freq))
    }

    /// SEU bit range (for sweeps that rebuild the model per rate).
    pub fn seu_bit_range(&self) -> (u32, u32) {
        match self.fault {
            FaultConfig::Seu { bit_low, bit_high, .. } => (bit_low, bit_high),
            _ => (0, ACC_BITS - 1),
        }
    }

    /// Training hyperparameters with per-command defaults filled in.
    pub fn train_config(&self, defaults: TrainDefaults) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(defaults.learning_rate),
            momentum: t.momentum.unwrap_or(0.9),
            batch_size: t.batch_size.unwrap_or(32),
            max_epochs: t.max_epochs.unwrap_or(defaults.max_epochs),
            accuracy_threshold: t.accuracy_threshold.unwrap_or(0.99),
            eval_interval: t.eval_interval.unwrap_or(400),
            eval_subset: t.eval_subset.unwrap_or(0),
            seed: self.seed,
        }
    }
}

/// Per-command hyperparameter defaults.
#[derive(Debug, Clone, Copy)]
pub struct TrainDefaults {
    pub learning_rate: f64,
    pub max_epochs: usize,
}

/// Off-line pre-training defaults.
pub const PRETRAIN_DEFAULTS: TrainDefaults = TrainDefaults { learning_rate: 1e-2, max_epochs: 3 };
/// Device-in-the-loop fine-tuning defaults.
pub const FINETUNE_DEFAULTS: TrainDefaults = TrainDefaults { learning_rate: 1e-3, max_epochs: 2 };

impl DatasetConfig {
    fn validate(&self) -> Result<()> {
        match self.kind {
            DatasetKind::Mnist => {
                for (name, p) in [
                    ("train_images", &self.train_images),
                    ("train_labels", &self.train_labels),
                    ("test_images", &self.test_images),
                    ("test_labels", &self.test_labels),
                ] {
                    let p = p
                        .as_ref()
                        .ok_or_else(|| anyhow!("dataset.{name} is required for kind = mnist"))?;
                    ensure_exists(name, p)?;
                }
            }
            DatasetKind::Cifar10 => {
                if self.train_batches.is_empty() || self.test_batches.is_empty() {
                    bail!("dataset.train_batches and dataset.test_batches are required for cifar10");
                }
                for p in self.train_batches.iter().chain(&self.test_batches) {
                    ensure_exists("batch", p)?;
                }
            }
        }
        Ok(())
    }

    pub fn load_train(&self) -> Result<fltrain_core::DatasetSplit> {
        match self.kind {
            DatasetKind::Mnist => Ok(fltrain_core::load_idx(
                self.train_images.as_ref().unwrap(),
                self.train_labels.as_ref().unwrap(),
            )?),
            DatasetKind::Cifar10 => Ok(fltrain_core::load_cifar10(&self.train_batches)?),
        }
    }

    pub fn load_test(&self) -> Result<fltrain_core::DatasetSplit> {
        match self.kind {
            DatasetKind::Mnist => Ok(fltrain_core::load_idx(
                self.test_images.as_ref().unwrap(),
                self.test_labels.as_ref().unwrap(),
            )?),
            DatasetKind::Cifar10 => Ok(fltrain_core::load_cifar10(&self.test_batches)?),
        }
    }
}

fn ensure_exists(name: &str, p: &Path) -> Result<()> {
    if !p.exists() {
        bail!("dataset.{name}: path {} does not exist", p.display());
    }
    Ok(())
}

/// Apply one `section.key=value` override onto the parsed TOML tree. The
/// value is parsed as a TOML literal, falling back to a bare string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override '{spec}' is not of the form key=value"))?;
    let literal: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| anyhow!("override '{spec}': '{part}' is not inside a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), literal);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("override paths have at least one segment")
}
