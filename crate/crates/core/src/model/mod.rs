//! The sleep-staging network: configuration, parameters, and the forward and
//! backward passes.

mod config;
mod network;
mod params;

pub use config::ModelConfig;
pub use network::{
    backward, classify, encoder_forward, forward, forward_traced, mtcl_branch_forward, mtcl_forward,
    pcc_fuse_forward, spatial_forward, Pass, ShapeChain, Trace,
};
pub use params::{param_count, ConvParams, EncoderLayerParams, ModelParams, ParamKind};

use crate::error::Result;

/// Allocates seeded parameters for `cfg` after validating it.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    ModelParams::init(cfg, seed)
}
