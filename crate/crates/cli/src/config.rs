//! Run configuration file: one section per stage, unknown keys rejected.

use std::path::Path;

use pics::analysis::Optics;
use pics::data::PhantomConfig;
use pics::nn::UNetConfig;
use pics::prep::PreprocessConfig;
use pics::qpi::{IntegrationConfig, StackMeta};
use pics::seg::ThresholdMethod;
use pics::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Bumped whenever a field is renamed or removed.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructSection {
    pub stack: StackMeta,
    pub integration: IntegrationConfig,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            stack: StackMeta::default(),
            integration: IntegrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    pub n_test: usize,
    pub val_fraction: f64,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self {
            n_test: 25,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentSection {
    pub method: ThresholdMethod,
    pub sigma: f64,
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self {
            method: ThresholdMethod::Otsu,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Required; there is no default wavelength.
    pub optics: Option<Optics>,
    pub window_hours: f64,
    pub frame_interval_hours: f64,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            optics: None,
            window_hours: 5.0,
            frame_interval_hours: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Overrides every stage seed when set.
    pub seed: Option<u64>,
    pub reconstruct: ReconstructSection,
    pub preprocess: PreprocessConfig,
    pub phantom: PhantomConfig,
    pub split: SplitSection,
    pub network: UNetConfig,
    pub train: TrainConfig,
    pub segment: SegmentSection,
    pub analyze: AnalyzeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            reconstruct: ReconstructSection::default(),
            preprocess: PreprocessConfig::default(),
            phantom: PhantomConfig::default(),
            split: SplitSection::default(),
            network: UNetConfig::default(),
            train: TrainConfig::default(),
            segment: SegmentSection::default(),
            analyze: AnalyzeSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Validation(format!(
                "config schema {} (this build reads {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    /// Applies the global seed to every stage that draws random numbers.
    pub fn propagate_seed(&mut self) {
        if let Some(s) = self.seed {
            self.phantom.seed = s;
            self.train.seed = s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let ok: RunConfig = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(ok.train.epochs, 3);
        assert!(serde_json::from_str::<RunConfig>(r#"{"trian": {}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"phantom": {"sise": 3}}"#).is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
