//! Semantic bases from primitive-generation features, structure coordinates,
//! guidance energies and the guided sampling loop.

mod basis;
mod energy;
mod sample;

use thiserror::Error;

pub use basis::{compute_semantic_basis, project_features, semantic_basis_from_maps, RankRule, SemanticBasis, StructureCoordinates};
pub use energy::{
    appearance_energy, appearance_stats, channel_thresholds, energy_gradient, guided_score, structure_energy_bg,
    structure_energy_fg, ClosureEnergy, EnergyFn, EnergyKind, FeatureEnergy, GradientMode, StepTargets,
};
pub use sample::{guided_sample, GuidanceConfig, GuidanceContext, GuidedRun, StepLog};

pub use crate::diffusion::cfg_combine;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("rank {r} exceeds the available {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("energy is not finite")]
    NonFiniteEnergy,
    #[error("no feature runs supplied")]
    EmptyRuns,
    #[error("no features recorded at t = {0}")]
    MissingFeatures(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
}
