//! Synthetic colonoscopy data and the joint translation/segmentation objective.
//!
//! The crate covers the whole pipeline: procedural colon and polyp meshes,
//! a software renderer producing image/mask/depth frames, the dataset
//! builder with its polyp-area filter, segmentation metrics, a small
//! reverse-mode autodiff engine, the adversarial/contrastive/segmentation
//! losses, and a desk-scale joint training loop.

pub mod dataset;
pub mod geometry;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod render;
pub mod seed;
pub mod tensor;
pub mod toy;
