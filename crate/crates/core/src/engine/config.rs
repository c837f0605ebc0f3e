use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::arch::SupernetConfig;
use crate::controller::ControllerConfig;
use crate::data::{AugmentConfig, DataSource, SplitRatios};
use crate::error::{Error, Result};
use crate::loss::{LossConfig, LossKind, MarginConfig};
use crate::reward::{CostTable, LatencyMode, LatencyModel};
use crate::schedule::{ScheduleConfig, StepDecay};

/// How repeated samples of one architecture are scored when ranking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    /// Best single-batch accuracy observed.
    #[default]
    Best,
    /// Mean over all observations.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    pub nodes: usize,
    pub epochs: usize,
    /// Architectures sampled per controller step.
    pub samples_per_step: usize,
    /// Controller steps per epoch.
    pub controller_steps: usize,
    pub top_k: usize,
    pub ranking: RankPolicy,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            nodes: 5,
            epochs: 100,
            samples_per_step: 8,
            controller_steps: 30,
            top_k: 3,
            ranking: RankPolicy::Best,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrainSettings {
    pub epochs: usize,
}

impl Default for RetrainSettings {
    fn default() -> Self {
        Self { epochs: 150 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSettings {
    pub kind: LossKind,
    /// Margin; the loss's usual value when absent.
    pub m: Option<f64>,
    pub s: Option<f64>,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            kind: LossKind::CrossEntropy,
            m: None,
            s: None,
        }
    }
}

impl LossSettings {
    pub fn to_config(&self) -> LossConfig {
        let d = MarginConfig::default_for(self.kind);
        LossConfig {
            kind: self.kind,
            margin: MarginConfig {
                m: self.m.unwrap_or(d.m),
                s: self.s.unwrap_or(d.s),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub batch_size: usize,
    /// Batch size of validation and test passes.
    pub eval_batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub loss: LossSettings,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            batch_size: 128,
            eval_batch_size: 128,
            momentum: 0.9,
            weight_decay: 1e-4,
            loss: LossSettings::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub policy: ControllerConfig,
    pub lr: StepDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSettings {
    /// Latency the reward is normalised by, in the units of `mode`.
    pub target: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_mode")]
    pub mode: LatencyMode,
    /// Cost-table file overriding the built-in analytic coefficients.
    #[serde(default)]
    pub cost_table: Option<PathBuf>,
}

fn default_q() -> f64 {
    -0.07
}

fn default_mode() -> LatencyMode {
    LatencyMode::Analytic
}

impl RewardSettings {
    pub fn latency_model(&self) -> Result<LatencyModel> {
        let table = match &self.cost_table {
            Some(p) => CostTable::load(p)?,
            None => CostTable::default(),
        };
        let m = LatencyModel {
            mode: self.mode,
            table,
            target: self.target,
            q: self.q,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSettings {
    pub source: DataSource,
    pub ratios: SplitRatios,
    pub augment: AugmentConfig,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            ratios: SplitRatios::default(),
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SupernetSettings {
    pub stem_channels: usize,
    pub dropblock_keep_prob: f64,
}

impl Default for SupernetSettings {
    fn default() -> Self {
        Self {
            stem_channels: 8,
            dropblock_keep_prob: 0.9,
        }
    }
}

/// Every knob of a search-and-retrain experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub search: SearchSettings,
    #[serde(default)]
    pub retrain: RetrainSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub controller: ControllerSettings,
    pub reward: RewardSettings,
    #[serde(default)]
    pub data: DataSettings,
    #[serde(default)]
    pub supernet: SupernetSettings,
}

fn toml_err(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // Serde names the offending key in backticks; report that as the field.
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<document>".into());
    Error::Config { field, message: msg }
}

impl RunConfig {
    /// Parses TOML, applies `key.path=value` overrides, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(toml_err)?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(doc).try_into().map_err(toml_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    /// Schedule spanning `epochs` epochs.
    pub fn schedule_for(&self, epochs: usize) -> ScheduleConfig {
        ScheduleConfig {
            total_epochs: epochs as f64,
            ..self.schedule.clone()
        }
    }

    pub fn loss(&self) -> LossConfig {
        self.train.loss.to_config()
    }

    pub fn supernet_config(&self, channels: usize, height: usize, width: usize, n_classes: usize) -> SupernetConfig {
        SupernetConfig {
            nodes: self.search.nodes,
            in_channels: channels,
            height,
            width,
            stem_channels: self.supernet.stem_channels,
            n_classes,
            dropblock_keep_prob: self.supernet.dropblock_keep_prob,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.search;
        for (v, name) in [
            (s.nodes, "search.nodes"),
            (s.epochs, "search.epochs"),
            (s.samples_per_step, "search.samples_per_step"),
            (s.controller_steps, "search.controller_steps"),
            (s.top_k, "search.top_k"),
            (self.retrain.epochs, "retrain.epochs"),
            (self.supernet.stem_channels, "supernet.stem_channels"),
            (self.train.eval_batch_size, "train.eval_batch_size"),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.train.batch_size < 2 {
            return Err(Error::config("train.batch_size", "batch norm needs at least 2 samples"));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return Err(Error::config("train.momentum", "must be in [0, 1)"));
        }
        if !(self.train.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        if !(self.supernet.dropblock_keep_prob > 0.0 && self.supernet.dropblock_keep_prob <= 1.0) {
            return Err(Error::config("supernet.dropblock_keep_prob", "must be in (0, 1]"));
        }
        self.schedule_for(s.epochs).validate()?;
        self.schedule_for(self.retrain.epochs).validate()?;
        self.controller.policy.validate()?;
        self.controller.lr.validate()?;
        self.loss().validate()?;
        if !(self.reward.target > 0.0 && self.reward.target.is_finite()) {
            return Err(Error::config("reward.target", "must be positive"));
        }
        if !(self.reward.q <= 0.0) {
            return Err(Error::config("reward.q", "must be <= 0"));
        }
        if let DataSource::Synthetic {
            n_classes,
            per_class,
            image_size,
        } = self.data.source
        {
            if n_classes == 0 || per_class == 0 || image_size == 0 {
                return Err(Error::config("data.source", "synthetic counts must be positive"));
            }
            self.validate_augment(image_size, image_size)?;
        }
        Ok(())
    }

    /// Augmentation must reproduce the stored image size.
    pub fn validate_augment(&self, height: usize, width: usize) -> Result<()> {
        let a = &self.data.augment;
        a.validate(height, width)?;
        if a.crop && (a.crop_size != height || a.crop_size != width) {
            return Err(Error::config("data.augment.crop_size", "must equal the image size"));
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key.path=value"))?;
    let path = path.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().unwrap();
    let mut table = doc;
    for k in parents {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{k}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}
