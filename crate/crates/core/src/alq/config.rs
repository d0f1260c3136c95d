use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::group::MAX_ENUM_BITS;
use crate::error::{Error, Result};

/// Upper bound on any per-layer `i_max` (the container stores `I_k` as `u8`).
pub const MAX_I_MAX: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Magnitude,
    LossAware,
}

/// How far to prune. Exactly one key must be present in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneTarget {
    /// Prune until the network's weight-weighted average bitwidth is at most
    /// this value.
    TargetAvgBitwidth(f64),
    /// Remove this fraction of all live coordinates.
    Rate(f64),
}

/// Per-layer `i_max`, keyed by layer name (`Conv1D_2`, `Softmax`, ...), with
/// a fallback for unnamed layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IMaxMap {
    #[serde(default = "default_i_max")]
    pub default: usize,
    #[serde(flatten)]
    pub layers: BTreeMap<String, usize>,
}

fn default_i_max() -> usize {
    2
}

impl Default for IMaxMap {
    fn default() -> Self {
        let mut layers = BTreeMap::new();
        layers.insert("Conv1D_2".to_string(), 2);
        layers.insert("Softmax".to_string(), 2);
        Self { default: 2, layers }
    }
}

impl IMaxMap {
    pub fn uniform(i_max: usize) -> Self {
        Self {
            default: i_max,
            layers: BTreeMap::new(),
        }
    }

    pub fn get(&self, layer_name: &str) -> usize {
        self.layers.get(layer_name).copied().unwrap_or(self.default)
    }

    fn max(&self) -> usize {
        self.layers.values().copied().chain([self.default]).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlqConfig {
    pub group_size: usize,
    pub i_max: IMaxMap,
    pub prune: PruneTarget,
    pub scorer: Scorer,
    pub refine_iters: usize,
    pub calib_batch: usize,
    pub seed: u64,
    /// Weight of the quadratic term in the loss-aware score.
    pub curvature: f64,
}

impl Default for AlqConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            i_max: IMaxMap::default(),
            prune: PruneTarget::TargetAvgBitwidth(2.0),
            scorer: Scorer::LossAware,
            refine_iters: 3,
            calib_batch: 64,
            seed: 0,
            curvature: 1.0,
        }
    }
}

impl AlqConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: AlqConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 || self.group_size > u16::MAX as usize {
            return Err(Error::Config("group_size must be in [1, 65535]".into()));
        }
        let all = self.i_max.layers.values().chain([&self.i_max.default]);
        for &i in all {
            if !(1..=MAX_I_MAX).contains(&i) {
                return Err(Error::Config(format!("i_max must be in [1, {MAX_I_MAX}]")));
            }
        }
        if self.refine_iters > 0 && self.i_max.max() > MAX_ENUM_BITS {
            return Err(Error::Config(format!(
                "i_max above {MAX_ENUM_BITS} requires refine_iters = 0"
            )));
        }
        match self.prune {
            PruneTarget::Rate(r) if !(0.0..1.0).contains(&r) => {
                return Err(Error::Config("prune.rate must be in [0,1)".into()));
            }
            PruneTarget::TargetAvgBitwidth(t) if !(t >= 0.0 && t.is_finite()) => {
                return Err(Error::Config(
                    "prune.target_avg_bitwidth must be finite and >= 0".into(),
                ));
            }
            _ => {}
        }
        if self.calib_batch == 0 {
            return Err(Error::Config("calib_batch must be >= 1".into()));
        }
        if !(self.curvature >= 0.0 && self.curvature.is_finite()) {
            return Err(Error::Config("curvature must be finite and >= 0".into()));
        }
        Ok(())
    }
}
