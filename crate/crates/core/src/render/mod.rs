//! Forward physically based rendering of Gaussian-point scenes.

mod illumination;
mod shading;
mod splat;

pub use illumination::{sample_illumination_sweep, DirectionalLight, IlluminationCondition, IlluminationSweep, SweepRanges};
pub use shading::{shade_point, ShadingOptions};
pub use splat::{render_points, render_scene, render_scene_multi, RenderOptions};

use serde::{Deserialize, Serialize};

use crate::raster::{self, DepthImage, GrayImage, RgbImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error("scene has no points")]
    EmptyScene,
    #[error("invalid illumination: {0}")]
    InvalidIllumination(String),
    #[error("bad sweep range: {0}")]
    BadRange(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RenderWarning {
    /// Every point was behind the camera; the output is the background.
    NoVisiblePoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Tone-mapped color in [0,1].
    pub rgb: RgbImage,
    /// Composited radiance before tone mapping.
    pub linear_rgb: RgbImage,
    /// Alpha-weighted expected depth; 0 marks background.
    pub depth: DepthImage,
    pub warning: Option<RenderWarning>,
}

impl RenderOutput {
    pub fn rgb8(&self) -> Vec<u8> {
        raster::to_rgb8(&self.linear_rgb)
    }

    /// Grayscale network input, derived through the stored 8-bit encoding.
    pub fn gray(&self) -> GrayImage {
        raster::gray_from_rgb8(self.linear_rgb.width, self.linear_rgb.height, &self.rgb8())
    }
}

pub fn tonemap(linear: &RgbImage) -> RgbImage {
    linear.map(|p| p.map(raster::encode_gamma))
}
