//! Noise schedules, deterministic DDIM sampling and inversion, and the
//! denoisers they drive: an exact Gaussian oracle and a small trained network.

mod ddim;
mod denoiser;
mod gaussian;
mod schedule;
mod tensor;
pub mod dataset;
pub mod toynet;
pub mod train;

use thiserror::Error;

pub use ddim::{
    ddim_invert, ddim_inverse_step, ddim_sample, ddim_step, timesteps, InversionConfig, Trajectory, TrajectoryStep,
};
pub use denoiser::{cfg_combine, CfgDenoiser, Conditioning, Denoiser, DifferentiableDenoiser, FeatureMap, Prediction};
pub use gaussian::GaussianDenoiser;
pub use schedule::NoiseSchedule;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("step order violation: t = {t}, next = {next}")]
    StepOrderViolation { t: usize, next: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid step count {steps} for a schedule of length {t_max}")]
    BadStepCount { steps: usize, t_max: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("variance at index {0} is not positive")]
    NonPositiveVariance(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("conditioning: {0}")]
    Conditioning(String),
    #[error("weights: {0}")]
    Weights(String),
    #[error(transparent)]
    Grounding(#[from] crate::grounding::GroundingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
