//! Run configuration: one TOML document whose tables mirror the modules.
//!
//! Unknown keys are rejected. The config hash is the SHA-256 of the
//! canonical JSON form (keys sorted), so it does not depend on key order or
//! formatting in the source file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::diversity::DiversityConfig;
use crate::losses::LossWeights;
use crate::networks::{DiscriminatorConfig, FrTrainConfig, GeneratorConfig, RegularizerConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub resolution: usize,
    /// Synthetic identities supplying training sources and references.
    pub identities: usize,
    /// Synthetic images per identity and domain.
    pub per_identity: usize,
    /// Identity of the impersonation target `z`.
    pub target_identity: usize,
    pub seed: u64,
    /// Real source faces; overrides the synthetic sources.
    pub source_dir: Option<PathBuf>,
    /// Real reference (made-up) faces; overrides the synthetic references.
    pub reference_dir: Option<PathBuf>,
    /// Real target image; overrides the synthetic target.
    pub target_image: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            identities: 16,
            per_identity: 4,
            target_identity: 0,
            seed: 1,
            source_dir: None,
            reference_dir: None,
            target_image: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworksConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub regularizer: RegularizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrConfig {
    /// Architecture/initialisation seeds of the surrogate ensemble.
    pub ensemble: Vec<u64>,
    /// Seed of the held-out model used only for evaluation.
    pub holdout: u64,
    /// Identities `0..identities` the embedders are trained on.
    pub identities: usize,
    pub per_identity: usize,
    pub heldout_per_identity: usize,
    pub train: FrTrainConfig,
}

impl Default for FrConfig {
    fn default() -> Self {
        Self {
            ensemble: vec![1, 2],
            holdout: 3,
            identities: 40,
            per_identity: 8,
            heldout_per_identity: 3,
            train: FrTrainConfig::default(),
        }
    }
}

impl FrConfig {
    pub fn model_id(seed: u64) -> String {
        format!("fr-{seed}")
    }

    pub fn ensemble_ids(&self) -> Vec<String> {
        self.ensemble.iter().map(|&s| Self::model_id(s)).collect()
    }

    pub fn holdout_id(&self) -> String {
        Self::model_id(self.holdout)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// An epoch is `ceil(sources / batch_size)` steps.
    pub epochs: usize,
    /// Optional hard cap on the number of steps.
    pub max_steps: Option<u64>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    /// Train with the regularizer `H`; `false` gives the ablation where `H`
    /// is the identity and the cycle loss is the plain one.
    pub regularizer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            max_steps: None,
            batch_size: 8,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            seed: 0,
            checkpoint_every: 100,
            regularizer: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub far: f64,
    /// Unseen identities whose source faces are protected at test time.
    pub test_identities: usize,
    pub test_per_identity: usize,
    /// Unseen identities whose different-identity pairs set thresholds.
    pub calibration_identities: usize,
    pub calibration_per_identity: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            far: 0.01,
            test_identities: 25,
            test_per_identity: 2,
            calibration_identities: 60,
            calibration_per_identity: 5,
            seed: 2,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub networks: NetworksConfig,
    pub fr: FrConfig,
    pub loss: LossWeights,
    pub diversity: DiversityConfig,
    pub training: TrainConfig,
    pub evaluation: EvalConfig,
    pub attack: AttackConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    /// Applies `key.path=value` overrides. Values are parsed as TOML
    /// literals, falling back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_literal(raw.trim());
            let mut node = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let map = node.as_object_mut().ok_or_else(|| {
                    Error::Config(format!("`{key}` does not name a config table"))
                })?;
                let child = map
                    .get_mut(*part)
                    .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
                if i + 1 == parts.len() {
                    *child = value.clone();
                    break;
                }
                node = child;
            }
        }
        let cfg: Self = serde_json::from_value(doc)
            .map_err(|e| Error::Config(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let t = &self.training;
        if !(t.learning_rate >= 0.0 && t.learning_rate.is_finite()) {
            return bad(format!(
                "training.learning_rate must be >= 0, got {}",
                t.learning_rate
            ));
        }
        for (name, b) in [("adam_beta1", t.adam_beta1), ("adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("training.{name} must lie in [0, 1), got {b}"));
            }
        }
        if t.batch_size == 0 {
            return bad("training.batch_size must be >= 1".into());
        }
        if t.checkpoint_every == 0 {
            return bad("training.checkpoint_every must be >= 1".into());
        }
        let d = &self.data;
        if d.resolution < 16 || !d.resolution.is_multiple_of(4) {
            return bad(format!(
                "data.resolution must be a multiple of 4 and >= 16, got {}",
                d.resolution
            ));
        }
        if d.identities == 0 || d.per_identity == 0 {
            return bad("data.identities and data.per_identity must be >= 1".into());
        }
        if (1..=d.identities).contains(&d.target_identity) {
            return bad(format!(
                "data.target_identity {} collides with the training identities 1..={}",
                d.target_identity, d.identities
            ));
        }
        let f = &self.fr;
        if f.ensemble.is_empty() {
            return bad("fr.ensemble needs at least one model".into());
        }
        if f.ensemble.contains(&f.holdout) {
            return bad(format!("fr.holdout {} is also in the ensemble", f.holdout));
        }
        let mut seen = f.ensemble.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != f.ensemble.len() {
            return bad("fr.ensemble lists a model twice".into());
        }
        f.train.augment.validate()?;
        let e = &self.evaluation;
        if !(0.0..=1.0).contains(&e.far) {
            return bad(format!("evaluation.far must lie in [0, 1], got {}", e.far));
        }
        if e.test_identities == 0 || e.test_per_identity == 0 {
            return bad("evaluation needs at least one test image".into());
        }
        self.loss.validate()?;
        self.diversity.validate()?;
        self.attack.validate()
    }

    /// Canonical JSON: keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        serde_json::to_value(self)
            .expect("config serialises")
            .to_string()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: serde_json::to_value(self).expect("config serialises"),
            config_hash: self.hash(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.training.seed,
        }
    }
}

fn parse_literal(raw: &str) -> serde_json::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => serde_json::to_value(w.v).unwrap_or(serde_json::Value::String(raw.into())),
        Err(_) => serde_json::Value::String(raw.into()),
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to reproduce a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: serde_json::Value,
    pub config_hash: String,
    pub tool_version: String,
    pub seed: u64,
}
