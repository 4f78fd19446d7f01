//! Versioned JSON snapshots of trained models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{HyperParameters, Standardizer, TrainConfig};

pub const SNAPSHOT_VERSION: u32 = 1;

/// Hyperparameters are stored in constrained space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub version: u32,
    pub params: HyperParameters,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub config: TrainConfig,
}

impl ModelSnapshot {
    pub fn new(params: HyperParameters, standardizer: Standardizer, config: TrainConfig) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            params,
            standardizer,
            seed: config.seed,
            config,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Self = serde_json::from_str(text)?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
                snap.version
            )));
        }
        snap.params.validate()?;
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{InputKernelParams, KernelKind, NoiseParams};

    #[test]
    fn json_roundtrip_and_version_check() {
        let params = HyperParameters::new(
            InputKernelParams::new(KernelKind::Matern52, 0.4, 1.2),
            2,
            NoiseParams {
                global: 1e-4,
                per_output: vec![0.01, 0.02],
            },
        );
        let snap = ModelSnapshot::new(params, Standardizer::identity(2), TrainConfig::default());
        let text = snap.to_json().unwrap();
        assert_eq!(ModelSnapshot::from_json(&text).unwrap(), snap);
        let bumped = text.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(ModelSnapshot::from_json(&bumped).is_err());
    }
}
