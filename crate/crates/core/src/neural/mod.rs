//! Differentiable compute substrate shared by the unit language model and the
//! acoustic encoder: a pre-norm transformer encoder with optional bottleneck
//! adapters, masked cross-entropy, Adam, and finite-difference gradient
//! verification. Everything runs in double precision.

mod encoder;
mod gradcheck;
mod loss;
mod ops;
mod optim;
mod params;


pub use encoder::{adapter_forward, AdapterWeights, EncoderInput, ForwardOutput};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, REL_FLOOR};
pub use loss::{argmax, loss_and_grads, loss_only, probabilities, Example, LossOutput};
pub use optim::{optimizer_step, AdamConfig, LrSchedule};
pub use params::{EncoderParams, Grads, Param};

use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InputKind {
    /// Token embedding table of `vocab` rows.
    Tokens { vocab: usize },
    /// Linear projection of `dim`-dimensional feature frames.
    Features { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub input: InputKind,
    pub vocab_out: usize,
}

impl EncoderConfig {
    /// Six layers as in the distilled BERT the unit LM is modelled on; width
    /// and heads are free choices.
    pub fn unit_lm(units: usize) -> Self {
        Self {
            layers: 6,
            model_dim: 64,
            heads: 4,
            ffn_dim: 256,
            max_len: 512,
            dropout: 0.1,
            input: InputKind::Tokens { vocab: units + 1 },
            vocab_out: units,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0
            || self.heads == 0
            || self.ffn_dim == 0
            || self.max_len == 0
            || self.vocab_out == 0
        {
            bail!(Neural, "encoder dimensions must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            bail!(
                Neural,
                "model_dim {} is not divisible by {} heads",
                self.model_dim,
                self.heads
            );
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Neural, "dropout {} outside [0, 1)", self.dropout);
        }
        match self.input {
            InputKind::Tokens { vocab: 0 } => bail!(Neural, "empty input vocabulary"),
            InputKind::Features { dim: 0 } => bail!(Neural, "zero feature dimension"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdapterConfig {
    pub bottleneck: usize,
}

impl AdapterConfig {
    pub const FULL_SCALE_BOTTLENECK: usize = 1024;

    pub fn validate(&self) -> Result<()> {
        if self.bottleneck == 0 {
            bail!(Neural, "adapter bottleneck must be at least 1");
        }
        Ok(())
    }

    /// Trainable parameters of one adapter block: down and up projections
    /// with biases plus the layer-norm gain and bias.
    pub fn params_per_adapter(&self, model_dim: usize) -> usize {
        2 * model_dim * self.bottleneck + self.bottleneck + model_dim + 2 * model_dim
    }

    /// Two placements (after attention, after FFN) per layer.
    pub fn params_total(&self, model_dim: usize, layers: usize) -> usize {
        self.params_per_adapter(model_dim) * 2 * layers
    }
}
