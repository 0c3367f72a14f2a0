//! Homography adaptation: detector responses aggregated over random
//! projective warps of each image.

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::detector::{detect_from_response, quantile, Keypoint2d, PointDetector};
use super::DatasetError;
use crate::geometry::Homography;
use crate::raster::{GrayImage, Raster};

/// Bounds for random warps. The first warp of every adaptation run is the identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomographySampler {
    pub max_rotation_deg: f64,
    pub scale: (f64, f64),
    /// Corner displacement bound as a fraction of `min(width, height)`.
    pub max_perspective: f64,
    pub identity_only: bool,
}

impl Default for HomographySampler {
    fn default() -> Self {
        Self { max_rotation_deg: 25.0, scale: (0.8, 1.25), max_perspective: 0.1, identity_only: false }
    }
}

impl HomographySampler {
    /// Warp `index` of a run seeded with `seed`. Index 0 is always the identity,
    /// and warps are independent of how many are requested.
    pub fn sample(&self, width: usize, height: usize, seed: u64, index: usize) -> Homography {
        if index == 0 || self.identity_only {
            return Homography::identity();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
        let center = Vector2::new(w * 0.5, h * 0.5);
        let corners = [Vector2::new(0.0, 0.0), Vector2::new(w, 0.0), Vector2::new(w, h), Vector2::new(0.0, h)];
        for _ in 0..32 {
            let angle = rng.gen_range(-self.max_rotation_deg..=self.max_rotation_deg).to_radians();
            let s = rng.gen_range(self.scale.0.ln()..=self.scale.1.ln()).exp();
            let (sn, cs) = angle.sin_cos();
            let rs = Matrix2::new(cs, -sn, sn, cs) * s;
            let pmax = self.max_perspective * width.min(height) as f64;
            let dst: Vec<Vector2<f64>> = corners
                .iter()
                .map(|c| {
                    let jitter = Vector2::new(rng.gen_range(-pmax..=pmax), rng.gen_range(-pmax..=pmax));
                    center + rs * (c - center) + jitter
                })
                .collect();
            if let Ok(hm) = Homography::fit(&corners, &dst) {
                return hm;
            }
        }
        Homography::identity()
    }
}

/// Warps `img` by `h` (`out(p') = img(h⁻¹ p')`), bilinear; outside samples are 0.
pub fn warp_image(img: &GrayImage, h: &Homography) -> Result<GrayImage, DatasetError> {
    let inv = h.inverse()?;
    Ok(Raster::from_fn(img.width, img.height, |x, y| {
        inv.warp(&Vector2::new(x as f64, y as f64))
            .ok()
            .and_then(|p| img.sample_bilinear(p.x, p.y))
            .unwrap_or(0.0)
    }))
}

fn is_identity(h: &Homography) -> bool {
    h.matrix == nalgebra::Matrix3::identity()
}

/// Sum of unwarped detector responses over `homographies` and per-pixel
/// number of contributing warps.
///
/// A warped response contributes to pixel `p` only if `h·p` lands at least
/// `margin` pixels inside the image, away from the artificial borders the warp creates.
pub fn accumulate_response(
    img: &GrayImage,
    detector: &dyn PointDetector,
    homographies: &[Homography],
    margin: f64,
) -> Result<(GrayImage, Raster<u32>), DatasetError> {
    let (w, h) = (img.width, img.height);
    let mut sum = Raster::filled(w, h, 0.0f32);
    let mut count = Raster::filled(w, h, 0u32);
    for hm in homographies {
        if is_identity(hm) {
            let r = detector.response(img)?;
            check_shape(img, &r)?;
            sum.data.iter_mut().zip(&r.data).for_each(|(s, v)| *s += v);
            count.data.iter_mut().for_each(|c| *c += 1);
            continue;
        }
        let warped = warp_image(img, hm)?;
        let r = detector.response(&warped)?;
        check_shape(img, &r)?;
        let (lo_x, lo_y, hi_x, hi_y) = (margin, margin, w as f64 - 1.0 - margin, h as f64 - 1.0 - margin);
        for y in 0..h {
            for x in 0..w {
                let Ok(q) = hm.warp(&Vector2::new(x as f64, y as f64)) else { continue };
                if q.x < lo_x || q.y < lo_y || q.x > hi_x || q.y > hi_y {
                    continue;
                }
                if let Some(v) = r.sample_bilinear(q.x, q.y) {
                    let i = y * w + x;
                    sum.data[i] += v;
                    count.data[i] += 1;
                }
            }
        }
    }
    Ok((sum, count))
}

fn check_shape(img: &GrayImage, r: &GrayImage) -> Result<(), DatasetError> {
    if !img.same_shape(r) {
        return Err(DatasetError::DetectorFailure(format!(
            "detector returned {}×{} for a {}×{} image",
            r.width, r.height, img.width, img.height
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationConfig {
    pub sampler: HomographySampler,
    /// Responses at or below this quantile of the averaged map are discarded.
    pub threshold_quantile: f64,
    /// Absolute floor on the threshold, so flat images yield nothing.
    pub min_response: f32,
    pub nms_radius: f64,
    pub margin: f64,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            sampler: HomographySampler::default(),
            threshold_quantile: 0.95,
            min_response: 1e-5,
            nms_radius: 4.0,
            margin: 4.0,
        }
    }
}

/// Keypoint superset of every image: averaged adapted response,
/// thresholded and non-maximum suppressed.
pub fn build_feature_superset(
    images: &[GrayImage],
    detector: &dyn PointDetector,
    n_homographies: usize,
    seed: u64,
    config: &AdaptationConfig,
) -> Result<Vec<Vec<Keypoint2d>>, DatasetError> {
    if n_homographies == 0 {
        return Err(DatasetError::InvalidConfig("n_homographies must be ≥ 1".into()));
    }
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let img_seed = seed.wrapping_add((i as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
            let homs: Vec<Homography> =
                (0..n_homographies).map(|k| config.sampler.sample(img.width, img.height, img_seed, k)).collect();
            let (sum, count) = accumulate_response(img, detector, &homs, config.margin)?;
            let avg = Raster {
                width: sum.width,
                height: sum.height,
                data: sum.data.iter().zip(&count.data).map(|(s, &c)| if c > 0 { s / c as f32 } else { 0.0 }).collect(),
            };
            let thr = quantile(&avg.data, config.threshold_quantile).max(config.min_response);
            Ok(detect_from_response(&avg, thr, config.nms_radius))
        })
        .collect()
}
