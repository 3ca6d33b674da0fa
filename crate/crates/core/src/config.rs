use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity of the feature-extraction stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
}

impl Activation {
    pub fn code(self) -> u32 {
        match self {
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Which items are excluded when drawing a user's negatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeRule {
    /// Exclude only the user's target-behavior items.
    TargetOnly,
    /// Exclude every item the user touched under any behavior.
    AnyBehavior,
}

impl NegativeRule {
    pub fn code(self) -> u32 {
        match self {
            NegativeRule::TargetOnly => 0,
            NegativeRule::AnyBehavior => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(NegativeRule::TargetOnly),
            1 => Some(NegativeRule::AnyBehavior),
            _ => None,
        }
    }
}

/// Component switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Skip the behavior self-attention (`Ỹ = X̃`).
    pub disable_transformer: bool,
    /// Skip the memory recalibration (`Z = Ỹ`).
    pub disable_memory: bool,
    /// Replace the learned gate with uniform `1/L` weights.
    pub mean_pool_gate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden dimension `d`.
    pub dim: usize,
    pub heads: usize,
    pub memories: usize,
    /// Depth of the residual feed-forward stack.
    pub ff_depth: usize,
    /// Positive/negative pairs per user per step.
    pub samples: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    /// L2 weight `λ` on every parameter.
    pub reg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub activation: Activation,
    pub seed: u64,
    pub ablation: Ablation,
    /// Weight attention values with the unnormalized logits instead of the
    /// softmax output.
    pub raw_attn_weights: bool,
    /// Divide each projected behavior vector by its event count.
    pub mean_project: bool,
    pub train_negatives: NegativeRule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 16,
            heads: 2,
            memories: 8,
            ff_depth: 3,
            samples: 1,
            lr: 1e-3,
            lr_decay: 0.96,
            reg: 0.01,
            batch_size: 32,
            epochs: 100,
            activation: Activation::Relu,
            seed: 0,
            ablation: Ablation::default(),
            raw_attn_weights: false,
            mean_project: false,
            train_negatives: NegativeRule::TargetOnly,
        }
    }
}

impl TrainConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("dim", self.dim),
            ("heads", self.heads),
            ("memories", self.memories),
            ("ff_depth", self.ff_depth),
            ("samples", self.samples),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must be in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return Err(Error::Config(format!("reg must be nonnegative, got {}", self.reg)));
        }
        Ok(())
    }

    /// Learning rate in effect during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.head_dim(), 8);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            TrainConfig {
                heads: 3,
                ..Default::default()
            },
            TrainConfig {
                memories: 0,
                ..Default::default()
            },
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lr_decay: 1.5,
                ..Default::default()
            },
            TrainConfig {
                lr_decay: 0.0,
                ..Default::default()
            },
            TrainConfig {
                reg: -0.1,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        for e in 0..50 {
            assert!((c.lr_at(e) - 1e-3 * 0.96f64.powi(e as i32)).abs() < 1e-12);
        }
    }
}
