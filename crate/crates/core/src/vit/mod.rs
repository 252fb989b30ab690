//! Minimal pre-LN vision transformer.

pub mod checkpoint;
mod config;
mod model;
mod params;

pub use config::{drop_path_rates, ModelConfig};
pub use model::{
    argmax_rows, forward, patchify, unpatchify, ActivationStack, ForwardOutput, Inference, Mode,
    LN_EPS,
};
pub use params::{param_count, param_layout, BoundParams, Init, ParamSpec, ViTParams};
