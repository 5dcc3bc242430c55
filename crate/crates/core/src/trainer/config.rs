use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::energy::{BaselineMode, SelectionConfig};
use crate::error::{Error, Result};

use super::schedule::Schedule;

/// Which pseudo-label gate the unlabeled branch uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    #[default]
    Energy,
    Confidence,
}

/// Every training hyperparameter. Serialized as a flat JSON object; unknown
/// keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Applied to weight tensors only, not biases.
    pub weight_decay: f64,
    pub iterations: u64,
    pub batch_labeled: usize,
    pub mu: usize,
    pub gate: GateKind,
    /// Energy threshold; `None` picks the class-count default.
    pub tau_e: Option<f64>,
    /// Energy temperature; `None` picks the class-count default.
    pub temperature: Option<f64>,
    pub tau_c: f64,
    pub lambda_margin: f64,
    pub delta_prior: f64,
    pub triplet_margin: f64,
    pub normalize_embeddings: bool,
    pub lambda_u: f64,
    pub lambda_ahtl: f64,
    pub delta_model: f64,
    pub schedule: Schedule,
    pub seed: u64,
    pub eval_interval: u64,
    pub channels: Vec<usize>,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            iterations: 4000,
            batch_labeled: 16,
            mu: 7,
            gate: GateKind::Energy,
            tau_e: None,
            temperature: None,
            tau_c: 0.95,
            lambda_margin: 0.5,
            delta_prior: 0.99,
            triplet_margin: 0.3,
            normalize_embeddings: true,
            lambda_u: 1.0,
            lambda_ahtl: 1.5,
            delta_model: 0.999,
            schedule: Schedule::Cosine,
            seed: 0,
            eval_interval: 200,
            channels: vec![32, 64, 128],
            augment: AugmentConfig::default(),
        }
    }
}

/// Energy threshold default: -9.5 for ten or more classes, -9 below.
pub fn default_tau_e(classes: usize) -> f64 {
    if classes >= 10 {
        -9.5
    } else {
        -9.0
    }
}

/// Temperature default: 1 for ten or more classes, 0.5 below.
pub fn default_temperature(classes: usize) -> f64 {
    if classes >= 10 {
        1.0
    } else {
        0.5
    }
}

impl TrainConfig {
    /// The confidence-threshold baseline: confidence gate, plain
    /// cross-entropy on strong views, no triplet term.
    pub fn baseline() -> Self {
        TrainConfig { gate: GateKind::Confidence, lambda_margin: 0.0, lambda_ahtl: 0.0, ..Default::default() }
    }

    pub fn tau_e_for(&self, classes: usize) -> f64 {
        self.tau_e.unwrap_or_else(|| default_tau_e(classes))
    }

    pub fn temperature_for(&self, classes: usize) -> f64 {
        self.temperature.unwrap_or_else(|| default_temperature(classes))
    }

    pub fn selection(&self, classes: usize) -> SelectionConfig {
        SelectionConfig {
            tau_e: self.tau_e_for(classes),
            temperature: self.temperature_for(classes),
            baseline: match self.gate {
                GateKind::Energy => BaselineMode::Off,
                GateKind::Confidence => BaselineMode::Confidence { tau_c: self.tau_c },
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("triplet_margin", self.triplet_margin),
            ("delta_model", self.delta_model),
            ("delta_prior", self.delta_prior),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("lr", self.lr),
            ("weight_decay", self.weight_decay),
            ("lambda_margin", self.lambda_margin),
            ("lambda_u", self.lambda_u),
            ("lambda_ahtl", self.lambda_ahtl),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.delta_model > 1.0 || self.delta_prior > 1.0 {
            return Err(Error::config("EMA decays must not exceed 1"));
        }
        if self.batch_labeled == 0 || self.mu == 0 {
            return Err(Error::config("batch sizes must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval must be positive"));
        }
        if self.channels.contains(&0) {
            return Err(Error::config("channel counts must be positive"));
        }
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("temperature must be positive, got {t}")));
            }
        }
        if let Some(t) = self.tau_e {
            if !t.is_finite() {
                return Err(Error::config("tau_e must be finite"));
            }
        }
        self.selection(2).validate()?;
        self.augment.validate()
    }

    /// Non-fatal concerns about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.triplet_margin > 0.5 {
            w.push(format!("triplet_margin {} exceeds 0.5; training may fail to converge", self.triplet_margin));
        }
        w
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        Ok(cfg)
    }

    /// Overrides one top-level key. The value is parsed as JSON, falling back
    /// to a plain string (`gate=confidence`).
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut doc = serde_json::to_value(&*self)?;
        let obj = doc.as_object_mut().expect("config is an object");
        if !obj.contains_key(key) {
            return Err(Error::config(format!("unknown config key `{key}`")));
        }
        let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        obj.insert(key.to_string(), value);
        *self = serde_json::from_value(doc).map_err(|e| Error::config(format!("{key}={raw}: {e}")))?;
        Ok(())
    }
}
