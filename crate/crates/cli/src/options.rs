//! Training option resolution: command-line flags win over the optional
//! `"training"` section of the network config file, which wins over the
//! built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use convctc::optim::{Hyperparams, Stage};
use convctc::train::{LossReduction, TrainOptions};
use convctc::NetworkConfig;
use serde::Deserialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageArg {
    Adam,
    Sgd,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Stage {
        match s {
            StageArg::Adam => Stage::Adam,
            StageArg::Sgd => Stage::Sgd,
        }
    }
}

/// Every knob that can be given on the command line or in the config file.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
    pub stage: Option<StageArg>,
    pub lr: Option<f64>,
    pub batch: Option<usize>,
    pub dropout: Option<f64>,
    pub l2: Option<f64>,
    pub patience: Option<usize>,
    pub epochs: Option<usize>,
    pub eval_every: Option<usize>,
    pub loss: Option<LossReduction>,
    pub fine_tune: Option<bool>,
    pub shuffle: Option<bool>,
    pub sort_by_length: Option<bool>,
    pub timing: Option<bool>,
}

impl TrainingSection {
    /// Fields set in `self` replace those of `base`.
    pub fn over(self, base: TrainingSection) -> TrainingSection {
        TrainingSection {
            seed: self.seed.or(base.seed),
            precision: self.precision.or(base.precision),
            stage: self.stage.or(base.stage),
            lr: self.lr.or(base.lr),
            batch: self.batch.or(base.batch),
            dropout: self.dropout.or(base.dropout),
            l2: self.l2.or(base.l2),
            patience: self.patience.or(base.patience),
            epochs: self.epochs.or(base.epochs),
            eval_every: self.eval_every.or(base.eval_every),
            loss: self.loss.or(base.loss),
            fine_tune: self.fine_tune.or(base.fine_tune),
            shuffle: self.shuffle.or(base.shuffle),
            sort_by_length: self.sort_by_length.or(base.sort_by_length),
            timing: self.timing.or(base.timing),
        }
    }

    /// The resolved options. `--lr` and `--l2` apply to the starting stage;
    /// the automatic fine-tune stage keeps its own defaults.
    pub fn options(&self) -> TrainOptions {
        let d = TrainOptions::default();
        let stage: Stage = self.stage.map_or(d.stage, Into::into);
        let mut hyper = Hyperparams::for_stage(stage);
        if let Some(lr) = self.lr {
            hyper.lr = lr;
        }
        if let Some(l2) = self.l2 {
            hyper.l2 = l2;
        }
        let fine_tune = match (stage, self.fine_tune.unwrap_or(true)) {
            (Stage::Adam, true) => Some(Hyperparams::sgd()),
            _ => None,
        };
        TrainOptions {
            seed: self.seed.unwrap_or(d.seed),
            stage,
            hyper,
            fine_tune,
            batch_size: self.batch.unwrap_or(d.batch_size),
            max_epochs: self.epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            eval_every: self.eval_every.unwrap_or(d.eval_every),
            reduction: self.loss.unwrap_or(d.reduction),
            shuffle: self.shuffle.unwrap_or(d.shuffle),
            sort_by_length: self.sort_by_length.unwrap_or(d.sort_by_length),
            record_seconds: self.timing.unwrap_or(d.record_seconds),
        }
    }
}

/// Reads a network config file and its optional `"training"` section.
pub fn load_config(path: &Path) -> Result<(NetworkConfig, TrainingSection)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("parsing config {}", path.display()))
}

pub fn parse_config(text: &str) -> Result<(NetworkConfig, TrainingSection)> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let section = match value.as_object_mut().and_then(|o| o.remove("training")) {
        Some(v) => serde_json::from_value(v).context("invalid \"training\" section")?,
        None => TrainingSection::default(),
    };
    Ok((serde_json::from_value(value)?, section))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = TrainingSection {
            lr: Some(3e-4),
            batch: Some(8),
            timing: Some(false),
            ..Default::default()
        };
        let flags = TrainingSection {
            lr: Some(1e-3),
            ..Default::default()
        };
        let o = flags.over(file).options();
        assert_eq!(o.hyper.lr, 1e-3);
        assert_eq!(o.batch_size, 8);
        assert!(!o.record_seconds);
        assert_eq!(o.patience, 5);
        assert_eq!(o.stage, Stage::Adam);
        assert_eq!(o.hyper.l2, 0.0);
        assert_eq!(o.fine_tune, Some(Hyperparams::sgd()));
    }

    #[test]
    fn sgd_stage_defaults() {
        let o = TrainingSection {
            stage: Some(StageArg::Sgd),
            ..Default::default()
        }
        .options();
        assert_eq!(o.hyper.lr, 1e-5);
        assert_eq!(o.hyper.l2, 1e-5);
        assert_eq!(o.fine_tune, None);
    }

    #[test]
    fn config_with_training_section() {
        let mut json: serde_json::Value =
            serde_json::from_str(&NetworkConfig::standard().to_json()).unwrap();
        json["training"] = serde_json::json!({"seed": 9, "loss": "mean", "precision": "f64"});
        let (config, section) = parse_config(&json.to_string()).unwrap();
        assert_eq!(config, NetworkConfig::standard());
        assert_eq!(section.seed, Some(9));
        assert_eq!(section.precision, Some(Precision::F64));
        assert_eq!(section.options().reduction, LossReduction::Mean);

        json["training"] = serde_json::json!({"learning_rate": 1});
        assert!(parse_config(&json.to_string()).is_err());
    }
}
