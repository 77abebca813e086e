//! Swin-VFI: a multi-stage, multi-scale transformer that interpolates the
//! middle frame of six polarized (or conventional) video frames.
//!
//! The building block is windowed self-attention over non-overlapping
//! t x h x w cubes of the spatio-temporal lattice, alternated with a
//! half-cube cyclic shift whose attention mask keeps wrapped-together
//! regions apart. Stages cascade; each stage runs an encoder/decoder over
//! spatial scales with skip connections. A long identity mapping anchors
//! the untrained network to the plain average of the two center frames.

pub mod attention;
pub mod checkpoint;
mod config;
pub mod cost;
pub mod losses;
mod network;
mod params;

pub use attention::{
    unshift_lattice,
    cube_msa, msa_flops, partition, shift_lattice, swin_block, unpartition, AttentionWeights,
    CubePartition, MaskCache, SubBlockWeights, SwinBlockWeights,
};
pub use config::{AttentionConfig, LossWeights, ModelConfig};
pub use network::Model;
pub use params::{count_params, param_specs, ModelParams, ParamSpec};

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] pvfi_tensor::TensorError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: String, msg: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn cfg_err(msg: impl Into<String>) -> NetError {
    NetError::Config(msg.into())
}
