//! The JSON experiment configuration and its command-line overrides.

use std::path::Path;

use mmr_core::attack::{AttackKind, NoiseSpec};
use mmr_core::data::GeneratorSpec;
use mmr_core::trainer::{Method, RunConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::store;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Used when no dataset directory is given.
    pub generator: GeneratorSpec,
    /// Training fraction of the train/test split.
    pub split_ratio: f64,
    pub split_seed: u64,
    /// Injected into the training split unless the dataset already carries
    /// an injection.
    pub attack: Option<NoiseSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorSpec::default(),
            split_ratio: 0.75,
            split_seed: 0,
            attack: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabConfig {
    pub data: DataConfig,
    pub run: RunConfig,
    /// Write `embeddings.bin` for the training set at the end of a run.
    pub export_embeddings: bool,
}

/// Flag values that override the configuration file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub attack: Option<AttackKind>,
    pub ratio: Option<f64>,
    pub rho: Option<f64>,
    pub tau: Option<f64>,
    pub period: Option<usize>,
    pub epochs: Option<usize>,
}

impl LabConfig {
    pub fn load(path: &Path) -> Result<Self> {
        store::read_json(path)
    }

    /// Applies training overrides. `--seed` sets the run seed; `--attack`
    /// and `--ratio` set the injection applied to the training split.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(s) = o.seed {
            self.run.seed = s;
        }
        if let Some(m) = o.method {
            self.run.method = m;
        }
        if o.attack.is_some() || o.ratio.is_some() {
            let base = self.data.attack.clone().unwrap_or_else(|| NoiseSpec::new(AttackKind::Sym, 0.0, 0));
            self.data.attack = Some(NoiseSpec {
                kind: o.attack.unwrap_or(base.kind),
                ratio: o.ratio.unwrap_or(base.ratio),
                ..base
            });
        }
        if let Some(v) = o.rho {
            self.run.hil.rho = v;
        }
        if let Some(v) = o.tau {
            self.run.hil.tau = v;
        }
        if let Some(v) = o.period {
            self.run.hil.period = v;
        }
        if let Some(v) = o.epochs {
            self.run.epochs = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.data.generator.validate()?;
        if let Some(a) = &self.data.attack {
            a.validate()?;
        }
        if !(self.data.split_ratio > 0.0 && self.data.split_ratio < 1.0) {
            return Err(LabError::Usage(format!("split_ratio {} outside (0, 1)", self.data.split_ratio)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c: LabConfig = serde_json::from_str(r#"{"run": {"epochs": 3, "hil": {"rho": 0.01}}}"#).unwrap();
        assert_eq!(c.run.epochs, 3);
        assert_eq!(c.run.hil.rho, 0.01);
        assert_eq!(c.run.hil.period, 3);
        assert_eq!(c.data.split_ratio, 0.75);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<LabConfig>(r#"{"run": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn ratio_override_creates_symmetric_attack() {
        let mut c = LabConfig::default();
        c.apply(&Overrides {
            ratio: Some(0.2),
            seed: Some(9),
            ..Overrides::default()
        })
        .unwrap();
        let a = c.data.attack.unwrap();
        assert_eq!((a.kind, a.ratio), (AttackKind::Sym, 0.2));
        assert_eq!(c.run.seed, 9);
    }

    #[test]
    fn invalid_override_fails_validation() {
        let mut c = LabConfig::default();
        assert!(c
            .apply(&Overrides {
                epochs: Some(0),
                ..Overrides::default()
            })
            .is_err());
    }
}
