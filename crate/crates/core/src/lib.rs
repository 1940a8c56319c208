//! puzzlecloud: joint supervised + self-supervised learning for 3D point
//! clouds.
//!
//! A PointNet-style encoder is trained simultaneously on a main task (shape
//! classification or part segmentation) and a self-supervised 3D puzzle:
//! clouds are scaled to the unit cube, split into `l^3` voxels, the voxels are
//! randomly displaced, and a per-point head predicts each point's original
//! voxel. The crate provides the autodiff engine, data model, puzzle
//! transform, model, training loop, experiment scenarios (SD/FS/SS/TL/DG/DA),
//! evaluation metrics and a procedural dataset generator. Everything is
//! deterministic given a seed.

pub mod datagen;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pointcloud;
pub mod puzzle;
pub mod rng;
pub mod settings;
pub mod training;

pub use error::{Error, Result};
