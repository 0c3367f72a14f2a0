//! Keypoint projection into rendered views and 8×8-cell heatmap labels.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::geometry::{project, CameraView, Intrinsics};
use crate::raster::DepthImage;

/// Channel index of an empty cell.
pub const DUSTBIN: u8 = 64;
pub const CELL: usize = 8;

/// A feature visible in a view: continuous pixel and camera depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedKeypoint {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Per-cell target channel in `[0, 64]`, row-major over the coarse grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeatmapLabel {
    pub hc: usize,
    pub wc: usize,
    pub cells: Vec<u8>,
}

impl HeatmapLabel {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.wc + col]
    }

    pub fn n_keypoints(&self) -> usize {
        self.cells.iter().filter(|&&c| c != DUSTBIN).count()
    }
}

/// Rounds half up to the nearest integer pixel.
fn round_pixel(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Encodes keypoints into cell labels. When several keypoints share a cell one
/// is kept, chosen uniformly at random from `seed`.
pub fn encode_heatmap_label(
    keypoints: &[Vector2<f64>],
    height: usize,
    width: usize,
    seed: u64,
) -> Result<HeatmapLabel, DatasetError> {
    if height % CELL != 0 || width % CELL != 0 || height == 0 || width == 0 {
        return Err(DatasetError::InvalidConfig(format!("image size {width}×{height} not divisible by {CELL}")));
    }
    let (hc, wc) = (height / CELL, width / CELL);
    let mut cells = vec![DUSTBIN; hc * wc];
    let mut seen = vec![0u32; hc * wc];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in keypoints {
        let (x, y) = (round_pixel(p.x), round_pixel(p.y));
        if !(x >= 0.0 && y >= 0.0 && x < width as f64 && y < height as f64) {
            return Err(DatasetError::OutOfBounds { x: p.x, y: p.y, width, height });
        }
        let (x, y) = (x as usize, y as usize);
        let i = (y / CELL) * wc + x / CELL;
        seen[i] += 1;
        // reservoir sampling keeps each candidate with probability 1/count
        if seen[i] == 1 || rng.gen_range(0..seen[i]) == 0 {
            cells[i] = ((y % CELL) * CELL + x % CELL) as u8;
        }
    }
    Ok(HeatmapLabel { hc, wc, cells })
}

/// Integer pixel of every non-dustbin cell, row-major.
pub fn decode_heatmap_label(label: &HeatmapLabel) -> Vec<Vector2<f64>> {
    let mut out = Vec::new();
    for r in 0..label.hc {
        for c in 0..label.wc {
            let ch = label.get(r, c) as usize;
            if ch < DUSTBIN as usize {
                out.push(Vector2::new((c * CELL + ch % CELL) as f64, (r * CELL + ch / CELL) as f64));
            }
        }
    }
    out
}

/// Projects world-frame features into a rendered view, keeping those inside
/// the image whose depth agrees with the rendered depth to within
/// `tolerance · z`. Background pixels (depth 0) never agree.
pub fn project_feature_set(
    features: &[Vector3<f64>],
    view: &CameraView,
    k: &Intrinsics,
    depth: &DepthImage,
    tolerance: f64,
) -> Vec<ProjectedKeypoint> {
    features
        .iter()
        .filter_map(|f| {
            let pr = project(f, view, k).ok()?;
            let (x, y) = (round_pixel(pr.pixel.x), round_pixel(pr.pixel.y));
            if !(x >= 0.0 && y >= 0.0 && x < depth.width as f64 && y < depth.height as f64) {
                return None;
            }
            let d = depth.get(x as usize, y as usize) as f64;
            ((pr.depth - d).abs() < tolerance * pr.depth).then_some(ProjectedKeypoint { pixel: pr.pixel, depth: pr.depth })
        })
        .collect()
}
