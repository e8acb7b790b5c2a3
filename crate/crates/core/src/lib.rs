//! Few-shot molecular property prediction.
//!
//! SMILES strings become molecular graphs ([`smiles`]), a message-passing
//! encoder ([`encoder`]) embeds them, and [`meta`] trains the encoder across
//! many small property-prediction tasks so it adapts to a new one from a
//! handful of labeled molecules. Two self-supervised losses ([`losses`]) and
//! an attention weighting over tasks shape the shared parameters.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below name the common concrete types.

pub mod autodiff;
pub mod benchmark;
pub mod data;
pub mod diagnostics;
pub mod encoder;
pub mod losses;
pub mod meta;
pub mod metrics;
pub mod molgraph;
pub mod scalar;
pub mod smiles;

pub type Tensor64 = autodiff::Tensor<f64>;
pub type Tensor32 = autodiff::Tensor<f32>;
pub type ParameterSet64 = autodiff::ParameterSet<f64>;
pub type ParameterSet32 = autodiff::ParameterSet<f32>;
pub type Tape64 = autodiff::Tape<f64>;
pub type Tape32 = autodiff::Tape<f32>;
pub type Checkpoint64 = data::Checkpoint<f64>;
pub type Checkpoint32 = data::Checkpoint<f32>;
pub type LossBreakdown64 = losses::LossBreakdown<f64>;
pub type EmbeddingTables64 = molgraph::EmbeddingTables<f64>;
