//! Run configuration: a TOML file of `[section]` headers and `key = value` lines,
//! overridden per key from the command line as `section.key=value`.
//!
//! Precedence is command line, then file, then built-in default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, test_seed, Dataset, Generator, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{Fusion, HeadVariant, ModelConfig};
use crate::nn::AdamConfig;
use crate::train::{EpochBudget, ProtocolKind, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// Output directory for checkpoints and metrics.
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 42,
            out: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Training CSV; empty means generate the synthetic benchmark.
    pub train: String,
    /// Held-out CSV; empty means the synthetic test split (or none when `train` is a file).
    pub test: String,
    pub categories: usize,
    pub per_category: usize,
    pub test_per_category: usize,
    pub input_dim: usize,
    pub noise: f64,
    pub max_angle: f64,
    pub offset_scale: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SynthConfig::standard(0);
        Self {
            train: String::new(),
            test: String::new(),
            categories: s.num_categories,
            per_category: s.samples_per_category,
            test_per_category: crate::experiments::STANDARD_TEST_PER_CATEGORY,
            input_dim: s.input_dim,
            noise: s.noise,
            max_angle: s.max_angle,
            offset_scale: s.offset_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub category_hidden: Vec<usize>,
    pub head_hidden: [usize; 2],
    pub variant: String,
    /// 0 means `categories × head_hidden[0]`.
    pub independent_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::desk(2);
        Self {
            feature_hidden: m.feature_hidden,
            feature_dim: m.feature_dim,
            category_hidden: m.category_hidden,
            head_hidden: m.head_hidden,
            variant: m.variant.to_string(),
            independent_hidden: 0,
            bn_momentum: m.bn_momentum,
            bn_eps: m.bn_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub protocol: String,
    pub fusion: String,
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub joint_lr: f64,
    pub epochs_pretrain: usize,
    pub epochs_heads: usize,
    pub epochs_oracle: usize,
    pub epochs_category: usize,
    pub epochs_joint: usize,
    /// Record epoch durations in metrics.jsonl (makes the file non-reproducible).
    pub record_wall_time: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            protocol: ProtocolKind::PoseFirst.to_string(),
            fusion: t.fusion.to_string(),
            lambda: t.lambda,
            batch_size: t.batch_size,
            lr: t.adam.lr,
            joint_lr: t.joint_lr,
            epochs_pretrain: t.epochs.pretrain,
            epochs_heads: t.epochs.heads,
            epochs_oracle: t.epochs.oracle,
            epochs_category: t.epochs.category,
            epochs_joint: t.epochs.joint,
            record_wall_time: t.record_wall_time,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub seed: u64,
    pub step: f64,
    /// Tolerance for layers without trigonometric terms.
    pub layer_tol: f64,
    /// Tolerance for the losses, the π·tanh output and composed objectives.
    pub loss_tol: f64,
    /// Parameter whose analytic gradient is deliberately perturbed; empty for none.
    pub inject_fault: String,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            seed: 7,
            step: 1e-5,
            layer_tol: 1e-6,
            loss_tol: 1e-4,
            inject_fault: String::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub gradcheck: GradcheckSection,
}

/// Splits `section.key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override '{s}' is not section.key=value")))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

fn override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in overrides {
            let (section, name) = key
                .split_once('.')
                .ok_or_else(|| Error::InvalidConfig(format!("override key '{key}' needs a section, as in train.lambda")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(t) = entry else {
                return Err(Error::InvalidConfig(format!("'{section}' is not a section")));
            };
            t.insert(name.to_string(), override_value(raw));
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.protocol()?;
        self.fusion()?;
        self.variant()?;
        self.train_config()?.validate()?;
        if self.data.train.is_empty() {
            self.synth_config().validate()?;
        }
        if self.gradcheck.step <= 0.0 || self.gradcheck.layer_tol <= 0.0 || self.gradcheck.loss_tol <= 0.0 {
            return Err(Error::InvalidConfig("gradcheck step and tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn protocol(&self) -> Result<ProtocolKind> {
        self.train.protocol.parse()
    }

    pub fn fusion(&self) -> Result<Fusion> {
        self.train.fusion.parse()
    }

    pub fn variant(&self) -> Result<HeadVariant> {
        self.model.variant.parse()
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            num_categories: self.data.categories,
            samples_per_category: self.data.per_category,
            input_dim: self.data.input_dim,
            generator_seed: self.run.seed,
            noise: self.data.noise,
            max_angle: self.data.max_angle,
            offset_scale: self.data.offset_scale,
        }
    }

    pub fn model_config(&self, num_categories: usize, input_dim: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            num_categories,
            input_dim,
            feature_hidden: m.feature_hidden.clone(),
            feature_dim: m.feature_dim,
            category_hidden: m.category_hidden.clone(),
            head_hidden: m.head_hidden,
            variant: self.variant()?,
            independent_hidden: if m.independent_hidden == 0 {
                num_categories * m.head_hidden[0]
            } else {
                m.independent_hidden
            },
            bn_momentum: m.bn_momentum,
            bn_eps: m.bn_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            adam: AdamConfig::default().with_lr(t.lr),
            joint_lr: t.joint_lr,
            fusion: self.fusion()?,
            lambda: t.lambda,
            epochs: EpochBudget {
                pretrain: t.epochs_pretrain,
                heads: t.epochs_heads,
                oracle: t.epochs_oracle,
                category: t.epochs_category,
                joint: t.epochs_joint,
            },
            record_wall_time: t.record_wall_time,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training split and optional held-out split, from files or the generator.
    pub fn datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        let k = self.data.categories;
        if self.data.train.is_empty() {
            let gen = Generator::new(self.synth_config())?;
            let train = gen.generate(self.run.seed)?;
            let test = Generator::new(SynthConfig {
                samples_per_category: self.data.test_per_category,
                ..self.synth_config()
            })?
            .generate(test_seed(self.run.seed))?;
            return Ok((train, (self.data.test_per_category > 0).then_some(test)));
        }
        let train = load_csv(Path::new(&self.data.train))?.with_num_categories(k)?;
        let test = if self.data.test.is_empty() {
            None
        } else {
            let t = load_csv(Path::new(&self.data.test))?.with_num_categories(k)?;
            if t.input_dim != train.input_dim {
                return Err(Error::shape(format!(
                    "test split has {} features, training split has {}",
                    t.input_dim, train.input_dim
                )));
            }
            Some(t)
        };
        Ok((train, test))
    }
}
