//! One document holding every tunable setting of a run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crf::CrfParams;
use crate::error::{Error, Result};
use crate::eval::EvalParams;
use crate::msfcn::NetworkConfig;
use crate::superpix::{SlicParams, DEFAULT_SCALES};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    /// Superpixel counts, one segmentation per entry.
    pub scales: Vec<usize>,
    pub slic: SlicParams,
    pub crf: CrfParams,
    pub eval: EvalParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            scales: DEFAULT_SCALES.to_vec(),
            slic: SlicParams::default(),
            crf: CrfParams::default(),
            eval: EvalParams::default(),
        }
    }
}

impl RunConfig {
    /// Narrow network trained at native resolution on small synthetic images.
    pub fn synthetic() -> Self {
        RunConfig {
            network: NetworkConfig::default().with_width_scale(0.125),
            train: TrainConfig::synthetic(),
            ..RunConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.crf.validate()?;
        self.eval.validate()?;
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::InvalidConfig("scales must be a nonempty list of positive counts".into()));
        }
        if !(self.slic.compactness >= 0.0 && self.slic.compactness.is_finite()) || self.slic.max_iters == 0 {
            return Err(Error::InvalidConfig("slic needs finite compactness and at least one iteration".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_unknown_keys() {
        let c = RunConfig::synthetic();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"crf": {"iterations": 3, "bogus": 1}}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_json(r#"{"scales": []}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"lr_new": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"eval": {"thresholds": 0}}"#).is_err());
    }
}
