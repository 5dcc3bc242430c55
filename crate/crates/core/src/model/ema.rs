use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::params::ModelParams;

/// Shadow copy of the model parameters, blended after every optimizer step
/// and used for all test-time evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaParams {
    shadow: ModelParams,
    decay: f64,
}

impl EmaParams {
    pub fn new(initial: &ModelParams, decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::config(format!("model EMA decay must lie in (0, 1], got {decay}")));
        }
        Ok(EmaParams { shadow: initial.clone(), decay })
    }

    /// Builds from a restored shadow without resetting it.
    pub fn from_shadow(shadow: ModelParams, decay: f64) -> Result<Self> {
        EmaParams::new(&shadow, decay)
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn params(&self) -> &ModelParams {
        &self.shadow
    }

    /// `ema = decay * ema + (1 - decay) * params`, elementwise.
    pub fn update(&mut self, params: &ModelParams) -> Result<()> {
        self.shadow.check_shapes(params, "EMA update")?;
        blend(&mut self.shadow, params, self.decay);
        Ok(())
    }
}

/// Elementwise blend shared by [`EmaParams`]; also usable with `decay = 0`.
pub fn blend(shadow: &mut ModelParams, live: &ModelParams, decay: f64) {
    let keep = 1.0 - decay;
    for (s, p) in shadow.tensors_mut().iter_mut().zip(live.tensors()) {
        for (x, &y) in s.data_mut().iter_mut().zip(p.data()) {
            *x = decay * *x + keep * y;
        }
    }
}
