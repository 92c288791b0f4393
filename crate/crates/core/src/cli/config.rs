//! The run configuration document and `--set key.path=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::dcnet::{InferenceConfig, NetworkConfig, TrainingConfig};
use crate::ensemble::PolicyKind;
use crate::mixgen::CorpusConfig;
use crate::pipeline::SpatialConfig;
use crate::signal::StftConfig;

/// Ensemble policy settings. Without an explicit `threshold` the confidence
/// policy calibrates one on the validation split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub policy: PolicyKind,
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { policy: PolicyKind::Confidence, threshold: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed; per-mixture streams are derived from it and the mixture id.
    pub seed: u64,
    /// Confidence exponent used for pseudo-label weights.
    pub alpha: f64,
    pub stft: StftConfig,
    pub spatial: SpatialConfig,
    pub network: NetworkConfig,
    pub training: TrainingConfig,
    pub inference: InferenceConfig,
    pub ensemble: EnsembleConfig,
    pub corpus: CorpusConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            alpha: 1.0,
            stft: StftConfig::default(),
            spatial: SpatialConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
            ensemble: EnsembleConfig::default(),
            corpus: CorpusConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        Self::from_table(table)
    }

    pub fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let config: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |m: String| CliError::Usage(format!("config: {m}"));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(usage(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        if self.spatial.n_components != 2 {
            return Err(usage(format!("spatial.n_components must be 2, got {}", self.spatial.n_components)));
        }
        self.network.validate().map_err(|e| usage(e.to_string()))?;
        self.training.validate().map_err(|e| usage(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }
}

/// Applies one `key.path=value` override; the value is parsed as a TOML
/// value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), CliError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{item}` is not of the form key.path=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("malformed override key `{key}`")));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = parts.split_last().expect("non-empty key");
    let mut node = table;
    for part in parents {
        let entry = node.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override key `{key}`: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        assert_eq!(c.spatial.tau_db, -10.0);
        assert_eq!(c.stft.window_ms, 32.0);
        assert_eq!(c.stft.hop_ms, 8.0);
        assert_eq!(c.training.batch_size, 40);
        assert_eq!(c.training.epochs, 100);
        assert_eq!(c.training.plateau_patience, 5);
        assert_eq!(c.training.initial_lr, 1e-3);
        let parsed = RunConfig::from_table(c.to_toml().parse().unwrap()).unwrap();
        assert_eq!(parsed, c);
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "training.epochs=3").unwrap();
        apply_override(&mut t, "corpus.kinds=[\"tone\", \"chirp\"]").unwrap();
        apply_override(&mut t, "ensemble.policy=random").unwrap();
        let c = RunConfig::from_table(t).unwrap();
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.corpus.kinds.len(), 2);
        assert_eq!(c.ensemble.policy, PolicyKind::Random);

        let mut bad = toml::Table::new();
        apply_override(&mut bad, "training.epochz=3").unwrap();
        let err = RunConfig::from_table(bad).unwrap_err().to_string();
        assert!(err.contains("epochz"), "{err}");
        assert!(apply_override(&mut toml::Table::new(), "novalue").is_err());
    }
}
