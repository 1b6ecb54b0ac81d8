//! Run configuration: model, training and synthesis settings in one JSON file.
//! Unknown keys are rejected; missing ones take their defaults.

use std::path::Path;

use hia_core::data::SynthConfig;
use hia_core::model::ModelConfig;
use hia_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HiaError, Result};
use crate::files;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => files::read_json(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |e| HiaError::data("config", e);
        self.model.validate().map_err(ctx)?;
        self.train.validate().map_err(ctx)?;
        self.synth.validate().map_err(ctx)?;
        if self.synth.max_phones() > self.model.max_len {
            log::warn!(
                "synthetic utterances may reach {} phones, above model max_len {}",
                self.synth.max_phones(),
                self.model.max_len
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let c: RunConfig = files::from_json_str(
            Path::new("c.json"),
            r#"{"model": {"embed_dim": 24}, "train": {"epochs": 3}}"#,
        )
        .unwrap();
        assert_eq!(c.model.embed_dim, 24);
        assert_eq!(c.model.enc_layers, 3);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.synth, SynthConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = files::from_json_str::<RunConfig>(Path::new("c.json"), r#"{"model": {"embed_dims": 24}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("embed_dims"), "{err}");
        assert!(files::from_json_str::<RunConfig>(Path::new("c.json"), r#"{"optim": {}}"#).is_err());
    }

    #[test]
    fn invalid_values_fail_validation() {
        let c = RunConfig {
            model: ModelConfig { conv_kernel: 4, ..ModelConfig::default() },
            ..RunConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().exit_code(), crate::error::EXIT_VALIDATION);
    }

    #[test]
    fn serialized_defaults_round_trip() {
        let text = serde_json::to_string(&RunConfig::default()).unwrap();
        let back: RunConfig = files::from_json_str(Path::new("c.json"), &text).unwrap();
        assert_eq!(back, RunConfig::default());
    }
}
