use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::raster::{GrayImage, Raster};

/// Dense per-pixel corner response; larger means more corner-like.
pub trait PointDetector: Sync {
    fn response(&self, image: &GrayImage) -> Result<GrayImage, DatasetError>;
}

/// 2D detection with a response score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2d {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

/// Shi-Tomasi response: the smaller eigenvalue of the Gaussian-weighted
/// gradient structure tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureTensorDetector {
    pub window_sigma: f64,
    /// Pixels this close to the border get zero response.
    pub border: usize,
}

impl Default for StructureTensorDetector {
    fn default() -> Self {
        Self { window_sigma: 1.0, border: 4 }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f32> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp() as f32).collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable convolution with clamped borders.
fn blur(img: &Raster<f32>, kernel: &[f32]) -> Raster<f32> {
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);
    let tmp = Raster::from_fn(img.width, img.height, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, kv)| kv * img.get((x as i64 + i as i64 - r).clamp(0, w - 1) as usize, y))
            .sum::<f32>()
    });
    Raster::from_fn(img.width, img.height, |x, y| {
        kernel
            .iter()
            .enumerate()
            .map(|(i, kv)| kv * tmp.get(x, (y as i64 + i as i64 - r).clamp(0, h - 1) as usize))
            .sum::<f32>()
    })
}

impl PointDetector for StructureTensorDetector {
    fn response(&self, img: &GrayImage) -> Result<GrayImage, DatasetError> {
        let (w, h) = (img.width, img.height);
        if w < 3 || h < 3 {
            return Err(DatasetError::DetectorFailure(format!("image too small: {w}×{h}")));
        }
        let at = |x: i64, y: i64| img.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize);
        let mut ixx = Raster::filled(w, h, 0.0f32);
        let mut iyy = Raster::filled(w, h, 0.0f32);
        let mut ixy = Raster::filled(w, h, 0.0f32);
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                // Sobel, normalized to unit gain
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2.0 * at(x - 1, y)
                    - at(x - 1, y + 1))
                    / 8.0;
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1)
                    - at(x - 1, y - 1)
                    - 2.0 * at(x, y - 1)
                    - at(x + 1, y - 1))
                    / 8.0;
                let i = y as usize * w + x as usize;
                ixx.data[i] = gx * gx;
                iyy.data[i] = gy * gy;
                ixy.data[i] = gx * gy;
            }
        }
        let k = gaussian_kernel(self.window_sigma);
        let (a, c, b) = (blur(&ixx, &k), blur(&iyy, &k), blur(&ixy, &k));
        let mut out = Raster::filled(w, h, 0.0f32);
        for y in self.border..h.saturating_sub(self.border) {
            for x in self.border..w.saturating_sub(self.border) {
                let i = y * w + x;
                let (a, b, c) = (a.data[i], b.data[i], c.data[i]);
                let half_tr = 0.5 * (a + c);
                let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
                out.data[i] = (half_tr - disc).max(0.0);
            }
        }
        if out.data.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::DetectorFailure("non-finite response".into()));
        }
        Ok(out)
    }
}

/// Value at the given quantile (`q` in [0,1]) of all entries.
pub fn quantile(values: &[f32], q: f64) -> f32 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    let idx = ((v.len() - 1) as f64 * q.clamp(0.0, 1.0)).round() as usize;
    let (_, nth, _) = v.select_nth_unstable_by(idx, |a, b| a.total_cmp(b));
    *nth
}

/// Greedy radius non-maximum suppression over candidates, strongest first.
/// No two survivors are within `radius` (Euclidean) of each other.
pub fn nms_points(mut candidates: Vec<Keypoint2d>, radius: f64, max_points: usize) -> Vec<Keypoint2d> {
    candidates.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then(a.y.total_cmp(&b.y)).then(a.x.total_cmp(&b.x))
    });
    let r2 = radius * radius;
    let cell = radius.max(1.0);
    let mut grid: std::collections::HashMap<(i64, i64), Vec<(f64, f64)>> = std::collections::HashMap::new();
    let mut kept = Vec::new();
    for c in candidates {
        if kept.len() >= max_points {
            break;
        }
        let (gx, gy) = ((c.x / cell).floor() as i64, (c.y / cell).floor() as i64);
        let mut suppressed = false;
        'scan: for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = grid.get(&(gx + dx, gy + dy)) {
                    if list.iter().any(|&(x, y)| (x - c.x).powi(2) + (y - c.y).powi(2) <= r2) {
                        suppressed = true;
                        break 'scan;
                    }
                }
            }
        }
        if !suppressed {
            grid.entry((gx, gy)).or_default().push((c.x, c.y));
            kept.push(c);
        }
    }
    kept
}

/// Pixels strictly above `threshold`, NMS'd.
pub fn detect_from_response(response: &GrayImage, threshold: f32, nms_radius: f64) -> Vec<Keypoint2d> {
    let candidates = response
        .data
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > threshold)
        .map(|(i, &v)| Keypoint2d { x: (i % response.width) as f64, y: (i / response.width) as f64, score: v as f64 })
        .collect();
    nms_points(candidates, nms_radius, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn corner_image(w: usize, h: usize, cx: usize, cy: usize) -> GrayImage {
        Raster::from_fn(w, h, |x, y| if x >= cx && y >= cy { 0.9 } else { 0.1 })
    }

    #[test]
    fn corner_peak_near_corner() {
        let img = corner_image(48, 40, 20, 17);
        let r = StructureTensorDetector::default().response(&img).unwrap();
        let (i, _) = r.data.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        let (x, y) = ((i % 48) as f64, (i / 48) as f64);
        // the ideal corner sits between pixels 19/20 and 16/17
        assert!((x - 19.5).abs() <= 1.5 && (y - 16.5).abs() <= 1.5, "peak at {x},{y}");
    }

    #[test]
    fn flat_image_has_no_response() {
        let img = Raster::filled(32, 32, 0.5f32);
        let r = StructureTensorDetector::default().response(&img).unwrap();
        assert!(r.data.iter().all(|&v| v == 0.0));
        assert!(detect_from_response(&r, quantile(&r.data, 0.95), 4.0).is_empty());
    }

    #[test]
    fn nms_keeps_stronger_neighbor() {
        let pts = vec![
            Keypoint2d { x: 10.0, y: 10.0, score: 0.5 },
            Keypoint2d { x: 11.0, y: 10.0, score: 0.9 },
            Keypoint2d { x: 30.0, y: 10.0, score: 0.1 },
        ];
        let kept = nms_points(pts, 4.0, 100);
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].x, 11.0);
        assert_eq!(kept[1].x, 30.0);
    }

    #[test]
    fn quantile_basics() {
        let v: Vec<f32> = (0..101).map(|i| i as f32).collect();
        assert_eq!(quantile(&v, 0.95), 95.0);
        assert_eq!(quantile(&v, 0.0), 0.0);
        assert_eq!(quantile(&[], 0.5), 0.0);
    }
}
