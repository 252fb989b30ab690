//! Vision-transformer training lab for studying patch-representation
//! collapse and three auxiliary losses that counter it.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autograd`]: a small dense tensor type and a reverse-mode
//!   tape covering the operations the model and losses need.
//! - [`gradcheck`]: central finite-difference oracle and the gradient suite.
//! - [`vit`]: pre-LN vision transformer that records per-layer tokens.
//! - [`mixing`]: patch-level mixing of two images with per-patch labels.
//! - [`metrics`]: patch-wise absolute cosine similarity and layer profiles.
//! - [`losses`]: cosine, contrastive and mixing regularizers.
//! - [`data`]: synthetic grating dataset, IDX reader, batching.
//! - [`train`]: configuration, AdamW, schedules, training and ablation.

pub mod autograd;
mod binio;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mixing;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vit;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
