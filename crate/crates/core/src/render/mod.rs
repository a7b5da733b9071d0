//! Forward Gaussian-splatting rasterizer.

mod project;
mod raster;
pub mod sh;

use thiserror::Error;

pub use project::{
    clamp_eigenvalues, project_covariance, project_gaussian, Splat2D, FOOTPRINT_SIGMAS, MIN_COV_EIGENVALUE,
};
pub use raster::{project_all, rasterize, render, render_with, RenderOutput, RenderSettings};
pub use sh::{eval_sh, ShError};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("invalid render settings: {0}")]
    Settings(String),
    #[error("resource exhausted: {0}")]
    Resource(String),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
    #[error(transparent)]
    Sh(#[from] ShError),
}
