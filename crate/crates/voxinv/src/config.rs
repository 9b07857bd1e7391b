//! Run configuration: one JSON document covering scene generation,
//! training and evaluation. Every key is optional; unknown keys are
//! rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use voxinv_core::forge::dataset::{ClutterConfig, ForgeConfig};
use voxinv_core::forge::physics::SurveyConfig;
use voxinv_core::forge::scene::SceneRanges;
use voxinv_core::nets::{DenoiserConfig, InverterConfig};
use voxinv_core::train::{FineTuneConfig, TrainConfig};

use crate::error::{Error, Result};
use crate::io::read;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: usize,
    /// With 0, validation scenes are carved out of `train` using
    /// `train.split`.
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train: 48, val: 8, test: 8, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Object-mask threshold; defaults to halfway between the background
    /// and the lowest object permittivity.
    pub iou_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneRanges,
    pub survey: SurveyConfig,
    pub clutter: ClutterConfig,
    /// Volume extents `[time/depth, line, trace]`.
    pub grid: [usize; 3],
    pub dataset: DatasetConfig,
    pub denoiser: DenoiserConfig,
    pub inverter: InverterConfig,
    pub train: TrainConfig,
    pub fine_tune: FineTuneConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let forge = ForgeConfig::default();
        Self {
            scene: forge.scene,
            survey: forge.survey,
            clutter: forge.clutter,
            grid: forge.grid,
            dataset: DatasetConfig::default(),
            denoiser: DenoiserConfig::default(),
            inverter: InverterConfig::default(),
            train: TrainConfig::default(),
            fine_tune: FineTuneConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Splits a core message of the form `"<key> must ..."` into key and text.
fn keyed(e: voxinv_core::Error) -> Error {
    match e {
        voxinv_core::Error::InvalidConfig(msg) => {
            let (key, rest) = msg.split_once(' ').unwrap_or((msg.as_str(), ""));
            Error::Config { key: key.to_string(), message: rest.to_string() }
        }
        other => other.into(),
    }
}

impl RunConfig {
    pub fn forge(&self) -> ForgeConfig {
        ForgeConfig {
            scene: self.scene.clone(),
            survey: self.survey.clone(),
            clutter: self.clutter.clone(),
            grid: self.grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forge().validate().map_err(keyed)?;
        self.denoiser.validate().map_err(|e| Error::Config { key: "denoiser".into(), message: e.to_string() })?;
        self.inverter.validate().map_err(|e| Error::Config { key: "inverter".into(), message: e.to_string() })?;
        self.train.validate().map_err(keyed)?;
        self.fine_tune.validate().map_err(keyed)?;
        if self.dataset.train == 0 {
            return Err(Error::Config { key: "dataset.train".into(), message: "must be >= 1".into() });
        }
        if let Some(t) = self.eval.iou_threshold {
            if !t.is_finite() {
                return Err(Error::Config { key: "eval.iou_threshold".into(), message: "must be finite".into() });
            }
        }
        Ok(())
    }

    /// Parses and validates a JSON document; blank input means all
    /// defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config { key, message: e.into_inner().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Config {
            key: ".".into(),
            message: "config is not UTF-8".into(),
        })?;
        Self::parse(text)
    }

    /// Canonical JSON: keys sorted at every level.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self).expect("config serializes").to_string()
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn fingerprint(&self) -> String {
        sha256_hex(self.canonical_json().as_bytes())
    }

    /// Fingerprint of the settings that determine generated data, with the
    /// master seed actually used.
    pub fn dataset_fingerprint(&self, seed: u64) -> String {
        let dataset = DatasetConfig { seed, ..self.dataset.clone() };
        let v = serde_json::json!({ "forge": self.forge(), "dataset": dataset });
        sha256_hex(v.to_string().as_bytes())
    }

    /// Background permittivity of ground-truth maps.
    pub fn background(&self) -> f64 {
        self.clutter.background(self.scene.soil_epsilon_r)
    }

    pub fn iou_threshold(&self) -> f64 {
        self.eval
            .iou_threshold
            .unwrap_or_else(|| voxinv_core::eval::iou_threshold(self.background(), self.scene.epsilon_r[0]))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.survey.center_frequency, 1e9);
        assert_eq!(c.train.lr0, 0.001);
    }

    #[test]
    fn errors_name_keys() {
        match RunConfig::parse(r#"{"train": {"lr0": -1}}"#) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.lr0"),
            other => panic!("{other:?}"),
        }
        match RunConfig::parse(r#"{"survey": {"bogus": 1}}"#) {
            Err(Error::Config { key, .. }) => assert!(key.starts_with("survey"), "{key}"),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("{").is_err());
    }

    #[test]
    fn round_trip_and_fingerprint() {
        let c = RunConfig::parse(r#"{"grid": [16, 16, 16], "train": {"epochs": 3, "lr0": 0.01}}"#).unwrap();
        let again = RunConfig::parse(&c.to_pretty_json()).unwrap();
        assert_eq!(again, c);
        let reordered = RunConfig::parse(r#"{"train": {"lr0": 0.01, "epochs": 3}, "grid": [16, 16, 16]}"#).unwrap();
        assert_eq!(reordered.fingerprint(), c.fingerprint());
        assert_ne!(RunConfig::default().fingerprint(), c.fingerprint());
    }
}
