//! Software rasterizer producing color, polyp mask and depth frames.

mod camera;
mod light;
mod material;
mod obj;
mod raster;

pub use camera::Camera;
pub use light::{Light, LightKind, LightRig};
pub use material::{jitter_material, Material};
pub use obj::{export_obj, parse_obj, write_obj, ObjObject};
pub use raster::{rasterize, render, render_from_buffer, FrameSet, GeometryBuffer, RenderOptions, NO_HIT};

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("resolution {width}x{height} is below 16x16")]
    InvalidResolution { width: usize, height: usize },
}
