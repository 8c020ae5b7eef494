//! Primitive encoding and the cross-attention used for grounding.
//!
//! A primitive's path parameters are Fourier-encoded, each appearance token is
//! embedded by a [`TextEncoder`], and the two are concatenated per token and
//! passed through a small [`FusionNetwork`]. The fused rows become the keys and
//! values of a cross-attention whose output is masked to the primitive's polygon.

mod attention;
mod fourier;
mod fusion;
pub(crate) use fusion::{FusionCache, FusionGrads};
mod text;

use thiserror::Error;

pub use attention::{
    attend_row, compose_scene_attention, cross_attention, masked_cross_attention, AttentionInputs, TokenGroup,
};
pub use fourier::{fourier_encode, PathEmbedding};
pub use fusion::{fuse_embeddings, Activation, FusedEmbedding, FusionNetwork};
pub use text::{AppearanceEmbedding, HashTextEncoder, TextEncoder, NULL_TOKEN};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weights file: {0}")]
    WeightsFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
