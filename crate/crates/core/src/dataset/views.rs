//! Camera poses around a scene.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{CameraView, Intrinsics};

/// Look-at poses on a sphere around the target, up = +z.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewConfig {
    /// Camera distance as a multiple of the distance at which the bounding
    /// sphere exactly fills the narrower field of view.
    pub distance_factor: (f64, f64),
    pub elevation_deg: (f64, f64),
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self { distance_factor: (1.0, 1.3), elevation_deg: (10.0, 60.0) }
    }
}

pub fn sample_views(
    center: &Vector3<f64>,
    radius: f64,
    k: &Intrinsics,
    n: usize,
    seed: u64,
    cfg: &ViewConfig,
) -> Result<Vec<CameraView>, DatasetError> {
    let (d0, d1) = cfg.distance_factor;
    let (e0, e1) = cfg.elevation_deg;
    if !(d0 > 0.0 && d0 <= d1 && e0 <= e1 && e0 > -90.0 && e1 < 90.0 && radius > 0.0) {
        return Err(DatasetError::InvalidConfig(format!("bad view sampling {cfg:?} for radius {radius}")));
    }
    let half_fov = (0.5 * k.width as f64 / k.fx).atan().min((0.5 * k.height as f64 / k.fy).atan());
    let fit = radius / half_fov.sin();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let az = rng.gen_range(0.0..std::f64::consts::TAU);
            let el = rng.gen_range(e0..=e1).to_radians();
            let dist = fit * rng.gen_range(d0..=d1);
            let dir = Vector3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            Ok(CameraView::look_at(&(center + dir * dist), center, &Vector3::z())?)
        })
        .collect()
}
