//! Exponential-moving-average correction of the teacher from the student.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParameterSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmaConfig {
    /// Decay rate: weight kept on the current teacher value.
    pub decay: f64,
    /// Apply the update after every `every` optimizer steps.
    pub every: usize,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self {
            decay: 0.999,
            every: 1,
        }
    }
}

impl EmaConfig {
    pub fn validate(&self) -> Result<()> {
        check_decay(self.decay)?;
        if self.every == 0 {
            return Err(Error::invalid("ema cadence must be >= 1"));
        }
        Ok(())
    }
}

fn check_decay(decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid(format!("ema decay {decay} must lie in [0, 1]")));
    }
    Ok(())
}

/// Returns `decay * source + (1 - decay) * target`, entry by entry.
pub fn ema_step(source: &ParameterSet, target: &ParameterSet, decay: f64) -> Result<ParameterSet> {
    check_decay(decay)?;
    source.ensure_congruent(target)?;
    let keep = 1.0 - decay;
    let mut out = source.clone();
    for (name, t) in out.iter_mut() {
        let s = target.get(name).expect("congruent");
        for (a, b) in t.data_mut().iter_mut().zip(s.data()) {
            *a = decay * *a + keep * b;
        }
    }
    Ok(out)
}
