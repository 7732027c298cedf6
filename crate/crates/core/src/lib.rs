//! Tabular-guided contrastive representation learning.
//!
//! Tabular attributes are never fed to a model. They only decide which
//! images in a batch count as positives for one another:
//!
//! 1. [`tabular`] encodes records and builds the batch similarity matrix,
//! 2. [`pairing`] thresholds each row of it into a positive set,
//! 3. [`loss`] scores projected embeddings with a multi-positive
//!    contrastive objective and returns its exact gradient,
//! 4. [`encoder`] is a small MLP backbone plus projection head with
//!    analytic backpropagation,
//! 5. [`trainer`] runs the pretraining loop,
//! 6. [`zeroshot`] predicts attributes by k-NN over encoder embeddings.
//!
//! [`eval`] holds the downstream metrics and heads, [`synthdata`] a
//! latent-factor generator for paired image/tabular data, [`protocol`] the
//! pretrain-then-evaluate experiment steps, and [`io`] the on-disk formats.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below fix the precision.

// Range checks are written `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod optim;
pub mod pairing;
pub mod protocol;
pub mod scalar;
pub mod synthdata;
pub mod tabular;
pub mod trainer;
pub mod zeroshot;

pub use error::{Result, TgvError};
pub use scalar::Scalar;

pub type Encoder64 = encoder::Encoder<f64>;
pub type Encoder32 = encoder::Encoder<f32>;
pub type SimilarityMatrix64 = tabular::SimilarityMatrix<f64>;
pub type SimilarityMatrix32 = tabular::SimilarityMatrix<f32>;
pub type TabularBatch64 = tabular::TabularBatch<f64>;
pub type TabularBatch32 = tabular::TabularBatch<f32>;
pub type PairAssignment64 = pairing::PairAssignment<f64>;
pub type PairAssignment32 = pairing::PairAssignment<f32>;
pub type ReferenceSet64 = zeroshot::ReferenceSet<f64>;
pub type ReferenceSet32 = zeroshot::ReferenceSet<f32>;
pub type TrainReport64 = trainer::TrainReport<f64>;
pub type TrainReport32 = trainer::TrainReport<f32>;
