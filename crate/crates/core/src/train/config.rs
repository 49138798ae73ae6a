use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ema::EmaConfig;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::masking::MaskStrategy;

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("adam epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("pretraining epochs and batch size must be >= 1"));
        }
        self.optimizer.validate()
    }
}

/// Rows of the component ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    A,
    B,
    C,
    D,
    E,
    #[default]
    #[serde(rename = "ours")]
    Ours,
}

/// Where distillation targets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherMode {
    /// No distillation terms at all.
    None,
    /// The pretrained model, never updated.
    Frozen,
    /// The pretrained model corrected by an average of the student.
    Ema,
}

/// Which loss terms and mechanisms a variant switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Wiring {
    pub fine: bool,
    pub coarse: bool,
    pub feature: bool,
    /// Masked copies and the consistency term.
    pub masked_consistency: bool,
    pub teacher: TeacherMode,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::A, Variant::B, Variant::C, Variant::D, Variant::E, Variant::Ours];

    pub fn name(&self) -> &'static str {
        match self {
            Variant::A => "A",
            Variant::B => "B",
            Variant::C => "C",
            Variant::D => "D",
            Variant::E => "E",
            Variant::Ours => "ours",
        }
    }

    /// The partial match term is active in every variant.
    pub fn wiring(&self) -> Wiring {
        let w = |fine, coarse, feature, masked_consistency, teacher| Wiring {
            fine,
            coarse,
            feature,
            masked_consistency,
            teacher,
        };
        match self {
            Variant::A => w(true, false, false, false, TeacherMode::Frozen),
            Variant::B => w(true, true, false, false, TeacherMode::Frozen),
            Variant::C => w(false, false, false, true, TeacherMode::None),
            Variant::D => w(true, false, true, true, TeacherMode::Ema),
            Variant::E => w(true, true, false, false, TeacherMode::Ema),
            Variant::Ours => w(true, true, false, true, TeacherMode::Ema),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}; expected A-E or ours")))
    }
}

/// Which adapted model [`crate::train::adapt`] hands back as `selected`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selection {
    /// The student after the last step.
    Final,
    /// The epoch checkpoint with the lowest unsupervised proxy
    /// (partial match plus consistency) on held-out target partials.
    #[default]
    Proxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub variant: Variant,
    /// Number of masked copies per input.
    pub k: usize,
    pub mask: MaskStrategy,
    pub weights: LossWeights,
    /// Points sampled from the teacher's fine output for the fine term.
    pub fps_n: usize,
    pub ema: EmaConfig,
    pub optimizer: AdamConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub selection: Selection,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Ours,
            k: 1,
            mask: MaskStrategy::partition(),
            weights: LossWeights::default(),
            fps_n: 256,
            ema: EmaConfig::default(),
            optimizer: AdamConfig::default(),
            steps: 3000,
            batch_size: 8,
            selection: Selection::Proxy,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    /// Shorter schedule for the single-core benchmark: 1000 steps of 4 clouds.
    pub fn desk() -> Self {
        Self {
            steps: 1000,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("adaptation batch size must be >= 1"));
        }
        if self.fps_n == 0 {
            return Err(Error::invalid("fps_n must be >= 1"));
        }
        if self.variant.wiring().masked_consistency && self.k == 0 {
            return Err(Error::invalid(format!(
                "variant {} trains with masked copies and needs k >= 1",
                self.variant
            )));
        }
        self.mask.validate()?;
        self.weights.validate()?;
        self.ema.validate()?;
        self.optimizer.validate()
    }

    /// Masked copies actually built per input under the variant wiring.
    pub fn effective_k(&self) -> usize {
        if self.variant.wiring().masked_consistency {
            self.k
        } else {
            0
        }
    }
}

/// Short stable digest of a serializable configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configs serialize");
    hex::encode(&Sha256::digest(json)[..8])
}
