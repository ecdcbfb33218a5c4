//! Reference-free preference optimization at desk scale.
//!
//! The crate implements a three-part alignment objective (chosen-likelihood
//! anchoring, a softplus-power floor on rejected-token probabilities and a
//! dual hard/soft margin loss on the length-normalized log-probability gap),
//! its closed-form gradients, the DPO and SimPO baselines, and a small
//! autoregressive policy with hand-written backpropagation that can be
//! trained end to end with AdamW.
//!
//! Everything here is `no_std` + `alloc`: file formats, configuration and
//! the command-line runner live in the `slime-cli` crate.
#![no_std]

extern crate alloc;

pub mod ablation;
pub mod error;
pub mod gradient;
pub mod logprob;
pub mod math;
pub mod objective;
pub mod policy;
pub mod prefdata;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use gradient::{GradcheckReport, GradientBundle};
pub use logprob::{LogProbBatch, PairLogProbs, SequenceLogProbs};
pub use objective::{BaselineHyperParams, LossBreakdown, Objective, SlimeHyperParams};
pub use policy::{ParamSet, ParameterGradients, PolicyDims, PolicyModel};
pub use prefdata::{CorpusSplit, PreferencePair, SyntheticSpec, TokenSequence};
pub use trainer::{AdamWConfig, MetricsRow, OptimizerState, TrainConfig, TrainOutcome};
