//! Desk-scale joint translation and segmentation training on toy domains.

pub mod domains;
pub mod nets;
mod train;

pub use domains::{make_toy_domains, make_toy_sample, Style, ToyDomains, ToyImage, ToySample, ToyScene};
pub use train::*;
