//! Polygon layout primitives, grounded attention, DDIM sampling and
//! structure-guided generation on a small pixel-space diffusion model.

pub mod config;
pub mod css;
pub mod diffusion;
pub mod eval;
pub mod fit;
pub mod geometry;
pub mod grounding;
pub mod guidance;
pub mod image;
pub mod linalg;
pub mod mask;
pub mod palette;
pub mod pipeline;
pub mod planner;
pub mod pnm;
pub mod scene;
