//! Gloss-to-text translation stack: a small dense-tensor autodiff kernel,
//! a transformer encoder/decoder, a frozen instruction teacher with tunable
//! fusion, corpus tooling with multi-level augmentation, and the metrics,
//! training, and experiment plumbing that tie them together.
//!
//! Everything is generic over the scalar type: training runs in `f32`,
//! gradient verification in `f64`. The aliases below fix the two concrete
//! instantiations used throughout the workspace.

pub mod augment;
pub mod backbone;
pub mod beam;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod instruction;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod teacher;
pub mod train;
pub mod tensor;
pub mod vocab;
pub mod weights;

pub use backbone::ModelConfig;
pub use beam::{beam_search, greedy_decode, DecodeResult, ModelScorer, SequenceScorer};
pub use error::{Error, Result};
pub use experiment::{ablate, sweep, AblationReport, SweepParam, SweepReport};
pub use instruction::{alpha_value, AlphaConfig, AlphaStrategy, InstructionConfig};
pub use optim::{grad_check, inverse_sqrt_lr, Adam, AdamConfig};
pub use model::TranslationModel;
pub use params::{ParamId, ParamStore};
pub use scalar::{Dtype, Scalar};
pub use tape::{Tape, Var};
pub use teacher::{PretrainConfig, Teacher, TeacherConfig};
pub use train::{evaluate_model, split_corpus, train, TrainConfig, TrainLog};
pub use tensor::Tensor;
pub use weights::{load_weights, save_weights, weights_fingerprint};

/// Training-precision tensor.
pub type Tensor32 = Tensor<f32>;
/// Verification-precision tensor.
pub type Tensor64 = Tensor<f64>;
pub type ParamStore32 = ParamStore<f32>;
pub type ParamStore64 = ParamStore<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
