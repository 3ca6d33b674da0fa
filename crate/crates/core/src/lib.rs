//! Memory-augmented transformer networks for multi-behavior recommendation.
//!
//! The crate covers the whole pipeline: TSV ingestion and leave-one-out
//! splitting ([`data`]), the model with its exact backward pass ([`model`]),
//! pairwise hinge training with Adam ([`train`]), ranking evaluation
//! ([`eval`]), a BiasMF baseline ([`biasmf`]), a funnel data generator
//! ([`synth`]) and a binary checkpoint format ([`checkpoint`]).

#![allow(clippy::needless_range_loop)]

pub mod biasmf;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod inspect;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod parallel;
pub mod params;
pub mod synth;
pub mod train;

pub use config::{Ablation, Activation, NegativeRule, TrainConfig};
pub use data::{BehaviorSchema, EvalSplit, InteractionTensor};
pub use error::{Error, Result};
pub use model::ModelParams;
