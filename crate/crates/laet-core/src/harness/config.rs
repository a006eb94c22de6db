//! Experiment configuration: a flat key-value text format with dotted
//! section keys. Every key has a default, so a minimal config is one line
//! (the dataset path).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datakit::{SynthSpec, SynthTask};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Strategy};
use crate::probe::{Metric2, ProbeMode, Schedule};
use crate::selection::SelectionStrategy;

/// Where the dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Path { path: PathBuf },
    Synth { spec: SynthSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub strategy: Strategy,
    pub metric2: Metric2,
    pub mode: ProbeMode,
    pub holdout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectSettings {
    pub alpha: f64,
    pub beta: f64,
    pub strategy: SelectionStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinetuneSettings {
    pub epochs: usize,
    pub lr_model: f64,
    pub lr_classifier: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub clip: f64,
    pub schedule: Schedule,
}

/// Full experiment configuration; echoed verbatim into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: Option<DataSource>,
    pub split: SplitFractions,
    pub model: ModelConfig,
    pub probe: ProbeSettings,
    pub select: SelectSettings,
    pub finetune: FinetuneSettings,
    pub report_votes: bool,
    pub sweep_alphas: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: None,
            split: SplitFractions {
                train: 0.8,
                val: 0.1,
                test: 0.1,
            },
            model: ModelConfig::default(),
            probe: ProbeSettings {
                epochs: 100,
                lr: 2e-4,
                batch: 64,
                strategy: Strategy::Lt,
                metric2: Metric2::F1,
                mode: ProbeMode::Shared,
                holdout: 0.2,
            },
            select: SelectSettings {
                alpha: 0.5,
                beta: 0.5,
                strategy: SelectionStrategy::Dominance,
            },
            finetune: FinetuneSettings {
                epochs: 30,
                lr_model: 2e-5,
                lr_classifier: 2e-4,
                weight_decay: 1e-4,
                batch: 32,
                clip: 1.0,
                schedule: Schedule::Constant,
            },
            report_votes: true,
            sweep_alphas: vec![0.3, 0.5, 0.7],
            sweep_betas: vec![0.3, 0.5, 0.7],
            seed: 7,
            out: PathBuf::from("runs/laet"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| {
        Error::InvalidArgument(format!("bad value '{value}' for key '{key}': {e}"))
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidArgument(format!(
            "bad boolean '{value}' for key '{key}'"
        ))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|part| parse_num::<f64>(key, part.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Parse the flat `key = value` format over the defaults. Lines starting
    /// with `#` and blank lines are ignored. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut synth: Option<SynthTask> = None;
        let mut size = 2000usize;
        let mut classes = 3usize;
        let mut noise = 0.0f64;
        let mut schedule_kind: Option<String> = None;
        let mut t0 = 100.0f64;

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected 'key = value', got '{line}'"),
                });
            };
            let key = key.trim();
            let value = value.trim();
            match key {
                "data.path" => cfg.data = Some(DataSource::Path { path: value.into() }),
                "data.synth" => synth = Some(SynthTask::parse(value)?),
                "data.size" => size = parse_num(key, value)?,
                "data.classes" => classes = parse_num(key, value)?,
                "data.noise" => noise = parse_num(key, value)?,
                "split.train" => cfg.split.train = parse_num(key, value)?,
                "split.val" => cfg.split.val = parse_num(key, value)?,
                "split.test" => cfg.split.test = parse_num(key, value)?,
                "model.layers" => cfg.model.layers = parse_num(key, value)?,
                "model.dim" => cfg.model.dim = parse_num(key, value)?,
                "model.heads" => cfg.model.heads = parse_num(key, value)?,
                "model.context" => cfg.model.context = parse_num(key, value)?,
                "probe.epochs" => cfg.probe.epochs = parse_num(key, value)?,
                "probe.lr" => cfg.probe.lr = parse_num(key, value)?,
                "probe.batch" => cfg.probe.batch = parse_num(key, value)?,
                "probe.strategy" => cfg.probe.strategy = Strategy::parse(value)?,
                "probe.metric2" => cfg.probe.metric2 = Metric2::parse(value)?,
                "probe.mode" => {
                    cfg.probe.mode = match value.to_ascii_lowercase().as_str() {
                        "shared" => ProbeMode::Shared,
                        "independent" => ProbeMode::Independent,
                        other => {
                            return Err(Error::InvalidArgument(format!(
                                "unknown probe mode '{other}' (expected shared|independent)"
                            )))
                        }
                    }
                }
                "probe.holdout" => cfg.probe.holdout = parse_num(key, value)?,
                "select.alpha" => cfg.select.alpha = parse_num(key, value)?,
                "select.beta" => cfg.select.beta = parse_num(key, value)?,
                "select.strategy" => cfg.select.strategy = SelectionStrategy::parse(value)?,
                "finetune.epochs" => cfg.finetune.epochs = parse_num(key, value)?,
                "finetune.lr_model" => cfg.finetune.lr_model = parse_num(key, value)?,
                "finetune.lr_classifier" => cfg.finetune.lr_classifier = parse_num(key, value)?,
                "finetune.weight_decay" => cfg.finetune.weight_decay = parse_num(key, value)?,
                "finetune.batch" => cfg.finetune.batch = parse_num(key, value)?,
                "finetune.clip" => cfg.finetune.clip = parse_num(key, value)?,
                "finetune.schedule" => schedule_kind = Some(value.to_ascii_lowercase()),
                "finetune.t0" => t0 = parse_num(key, value)?,
                "report.votes" => cfg.report_votes = parse_bool(key, value)?,
                "sweep.alphas" => cfg.sweep_alphas = parse_list(key, value)?,
                "sweep.betas" => cfg.sweep_betas = parse_list(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "out" => cfg.out = value.into(),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown configuration key '{other}'"
                    )))
                }
            }
        }

        if let Some(task) = synth {
            if cfg.data.is_some() {
                return Err(Error::InvalidArgument(
                    "data.path and data.synth are mutually exclusive".into(),
                ));
            }
            cfg.data = Some(DataSource::Synth {
                spec: SynthSpec {
                    task,
                    size,
                    classes,
                    noise,
                },
            });
        }
        if let Some(kind) = schedule_kind {
            cfg.finetune.schedule = match kind.as_str() {
                "constant" => Schedule::Constant,
                "diminishing" => Schedule::Diminishing { t0 },
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown schedule '{other}' (expected constant|diminishing)"
                    )))
                }
            };
        }
        Ok(cfg)
    }

    /// Range checks shared by every subcommand; `require_data` additionally
    /// demands a dataset source whose file (if any) exists.
    pub fn validate(&self, require_data: bool) -> Result<()> {
        self.model.validate()?;
        let s = &self.split;
        if s.train <= 0.0 || s.val < 0.0 || s.test < 0.0 || s.train + s.val + s.test > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(
                "split fractions must be positive and sum to at most 1".into(),
            ));
        }
        if self.probe.epochs == 0 || self.probe.lr <= 0.0 || self.probe.batch == 0 {
            return Err(Error::InvalidArgument(
                "probe epochs, learning rate and batch must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.probe.holdout) || self.probe.holdout == 0.0 {
            return Err(Error::InvalidArgument(
                "probe holdout must be in (0, 1)".into(),
            ));
        }
        if self.select.alpha < 0.0 || self.select.beta < 0.0 {
            return Err(Error::InvalidArgument(
                "selection coefficients must be non-negative".into(),
            ));
        }
        if self.finetune.epochs == 0
            || self.finetune.lr_model <= 0.0
            || self.finetune.lr_classifier <= 0.0
            || self.finetune.weight_decay < 0.0
            || self.finetune.batch == 0
            || self.finetune.clip <= 0.0
        {
            return Err(Error::InvalidArgument(
                "fine-tune parameters out of range".into(),
            ));
        }
        match (&self.data, require_data) {
            (None, true) => Err(Error::InvalidArgument(
                "no dataset configured: set data.path or data.synth".into(),
            )),
            (Some(DataSource::Path { path }), _) => {
                if !path.exists() {
                    return Err(Error::InvalidArgument(format!(
                        "dataset file '{}' does not exist",
                        path.display()
                    )));
                }
                Ok(())
            }
            (Some(DataSource::Synth { spec }), _) => {
                if !(0.0..=1.0).contains(&spec.noise) {
                    return Err(Error::InvalidArgument("noise must be in [0, 1]".into()));
                }
                Ok(())
            }
            (None, false) => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_documented_values() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.select.alpha, 0.5);
        assert_eq!(cfg.select.beta, 0.5);
        assert_eq!(cfg.probe.epochs, 100);
        assert_eq!(cfg.probe.lr, 2e-4);
        assert_eq!(cfg.finetune.epochs, 30);
        assert_eq!(cfg.finetune.lr_model, 2e-5);
        assert_eq!(cfg.finetune.lr_classifier, 2e-4);
        assert_eq!(cfg.finetune.weight_decay, 1e-4);
        assert_eq!(cfg.model.layers, 8);
        assert_eq!(cfg.model.dim, 64);
    }

    #[test]
    fn minimal_config_is_one_line() {
        let cfg = ExperimentConfig::parse("data.synth = keyword\n").unwrap();
        assert!(matches!(cfg.data, Some(DataSource::Synth { .. })));
        cfg.validate(true).unwrap();
    }

    #[test]
    fn parse_round_trip_of_keys() {
        let text = "\
# comment
data.synth = suffix
data.size = 500
data.classes = 4
data.noise = 0.1
model.layers = 6
probe.strategy = sat
probe.metric2 = mcc
select.alpha = 0.3
select.strategy = threshold
finetune.schedule = diminishing
finetune.t0 = 25
seed = 99
out = /tmp/somewhere
";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.model.layers, 6);
        assert_eq!(cfg.probe.strategy, Strategy::Sat);
        assert_eq!(cfg.probe.metric2, Metric2::Mcc);
        assert_eq!(cfg.select.strategy, SelectionStrategy::Threshold);
        assert_eq!(cfg.finetune.schedule, Schedule::Diminishing { t0: 25.0 });
        assert_eq!(cfg.seed, 99);
        match cfg.data {
            Some(DataSource::Synth { spec }) => {
                assert_eq!(spec.task, SynthTask::Suffix);
                assert_eq!(spec.size, 500);
                assert_eq!(spec.classes, 4);
                assert_eq!(spec.noise, 0.1);
            }
            other => panic!("unexpected data source {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(ExperimentConfig::parse("bogus.key = 1").is_err());
        assert!(ExperimentConfig::parse("model.layers = many").is_err());
        assert!(ExperimentConfig::parse("probe.strategy = nope").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn validation_catches_missing_data_and_bad_ranges() {
        let cfg = ExperimentConfig::default();
        assert!(cfg.validate(true).is_err());
        assert!(cfg.validate(false).is_ok());

        let mut bad = ExperimentConfig::default();
        bad.split.train = 0.9;
        bad.split.val = 0.2;
        assert!(bad.validate(false).is_err());

        let mut bad = ExperimentConfig::default();
        bad.data = Some(DataSource::Path {
            path: "/definitely/not/here.jsonl".into(),
        });
        assert!(bad.validate(true).is_err());
    }
}
