//! Synthetic pose-dataset generation from Gaussian-splat avatars.
//!
//! Canonical avatars ([`assets`]) are posed by forward kinematics and linear
//! blend skinning ([`kinematics`]), splatted through a pinhole [`camera`]
//! ([`render`]), composited over backgrounds with projected keypoints
//! ([`composition`]) and written as COCO-style datasets ([`dataset`]).
//! [`pipeline`] drives whole runs and [`evaluation`] scores results.

pub mod assets;
pub mod camera;
pub mod composition;
pub mod dataset;
pub mod demo;
pub mod evaluation;
pub mod kinematics;
pub mod pipeline;
pub mod render;
pub mod rng;
