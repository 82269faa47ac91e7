//! Run configuration read from a TOML or JSON file.
//!
//! Every field is optional. Missing values fall back to the library
//! defaults, and command-line flags are layered on top by the caller.
//!
//! ```toml
//! seed = 7
//!
//! [paths]
//! train_csv = "data/trainingData.csv"
//! validation_csv = "data/validationData.csv"
//! out_dir = "runs/scnn"
//!
//! [preprocess]
//! stability_threshold_m = 30.0
//!
//! [stopping]
//! min_subsample = 800
//! min_accuracy = 0.98
//!
//! [net]
//! classifier_hidden = [128, 64]
//! epochs = 60
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::neuralnet::{Optimizer, TrainConfig};
use crate::pipeline::PipelineConfig;
use crate::preprocess::PreprocessConfig;
use crate::tree::{ExpansionRule, NetConfig, ProposalSources, StoppingRule};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub train_csv: Option<PathBuf>,
    pub validation_csv: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    Adam,
    Sgd,
}

/// Settings applied to every network in the tree. Epochs and patience apply
/// to classifiers and regressors alike when given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSettings {
    pub classifier_hidden: Option<Vec<usize>>,
    pub regressor_hidden: Option<Vec<usize>>,
    pub optimizer: Option<OptimizerName>,
    pub momentum: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub early_stop_on_validation: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    pub stopping: StoppingRule,
    pub proposals: ProposalSources,
    /// Floors added on each side of a leaf's floor range; 0 disables expansion.
    pub expansion_floors: Option<u8>,
    pub metric_holdout: Option<f64>,
    pub net: NetSettings,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.extension().and_then(|e| e.to_str()) == Some("json"))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        if json {
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(PipelineConfig::default().seed)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let seed = self.seed();
        let n = &self.net;
        let apply = |mut t: TrainConfig| -> TrainConfig {
            if let Some(name) = n.optimizer {
                t.optimizer = match name {
                    OptimizerName::Adam => Optimizer::ADAM,
                    OptimizerName::Sgd => Optimizer::Sgd {
                        momentum: n.momentum.unwrap_or(0.9),
                    },
                };
            }
            if let Some(v) = n.learning_rate {
                t.learning_rate = v;
            }
            if let Some(v) = n.batch_size {
                t.batch_size = v;
            }
            if let Some(v) = n.epochs {
                t.epochs = v;
            }
            if let Some(v) = n.patience {
                t.patience = v;
            }
            t
        };
        let defaults = NetConfig::default();
        let net = NetConfig {
            classifier_hidden: n.classifier_hidden.clone().unwrap_or(defaults.classifier_hidden),
            regressor_hidden: n.regressor_hidden.clone().unwrap_or(defaults.regressor_hidden),
            classifier: apply(TrainConfig::classifier(seed)),
            regressor: apply(TrainConfig::regressor(seed)),
            early_stop_on_validation: n.early_stop_on_validation.unwrap_or(defaults.early_stop_on_validation),
        };
        let expansion = match self.expansion_floors {
            Some(0) => ExpansionRule::None,
            Some(floors) => ExpansionRule::RelaxFloors { floors },
            None => ExpansionRule::default(),
        };
        let cfg = PipelineConfig {
            preprocess: self.preprocess,
            stopping: self.stopping,
            sources: self.proposals,
            expansion,
            net,
            seed,
            metric_holdout: self.metric_holdout.unwrap_or(0.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::parse("", false).unwrap();
        let p = c.pipeline().unwrap();
        assert_eq!(p.stopping, StoppingRule::default());
        assert_eq!(p.preprocess, PreprocessConfig::default());
        assert_eq!(p.net.classifier.seed, p.seed);
    }

    #[test]
    fn toml_sections_override() {
        let text = r#"
            seed = 9
            expansion_floors = 0
            [stopping]
            min_subsample = 50
            [net]
            epochs = 5
            optimizer = "sgd"
            classifier_hidden = [16]
        "#;
        let p = RunConfig::parse(text, false).unwrap().pipeline().unwrap();
        assert_eq!(p.seed, 9);
        assert_eq!(p.stopping.min_subsample, 50);
        assert_eq!(p.stopping.min_accuracy, 0.98);
        assert_eq!(p.expansion, ExpansionRule::None);
        assert_eq!((p.net.classifier.epochs, p.net.regressor.epochs), (5, 5));
        assert_eq!(p.net.classifier.optimizer, Optimizer::Sgd { momentum: 0.9 });
        assert_eq!(p.net.classifier_hidden, vec![16]);
        assert_eq!(p.net.regressor_hidden, vec![128, 64]);
    }

    #[test]
    fn json_is_accepted() {
        let c = RunConfig::parse(r#"{"paths": {"out_dir": "x"}, "metric_holdout": 0.25}"#, true).unwrap();
        assert_eq!(c.paths.out_dir, Some(PathBuf::from("x")));
        assert_eq!(c.pipeline().unwrap().metric_holdout, 0.25);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(RunConfig::parse("colour = 3", false).is_err());
        let bad = RunConfig::parse("[net]\nlearning_rate = -1.0", false).unwrap();
        assert!(bad.pipeline().is_err());
    }
}
