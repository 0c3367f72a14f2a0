use std::path::Path;

use nalgebra::{Matrix3, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::Homography;
use crate::model::{FeatureExtraction, FeatureExtractor};
use crate::raster::{gray_from_rgb8, read_png_rgb8, GrayImage, Raster};

/// Image `a`, image `b`, and the ground-truth warp taking pixels of `a` to `b`.
#[derive(Debug, Clone)]
pub struct HomographyPair {
    pub image_a: GrayImage,
    pub image_b: GrayImage,
    pub h_ab: Homography,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HomographyConfig {
    /// Mean corner error (px) at or below which an estimate is correct.
    pub epsilon: f64,
    pub inlier_threshold: f64,
    pub ransac_iterations: usize,
    /// Lowe ratio for both matching directions; `None` is plain mutual NN.
    pub ratio: Option<f64>,
    pub seed: u64,
}

impl Default for HomographyConfig {
    fn default() -> Self {
        Self { epsilon: 3.0, inlier_threshold: 3.0, ransac_iterations: 2000, ratio: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyReport {
    pub correctness: f64,
    pub epsilon: f64,
    /// Mean corner error per pair; `None` when no homography could be estimated.
    pub errors: Vec<Option<f64>>,
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

/// Best and second-best neighbor of every row of `from` in `to`.
fn nearest_two(from: &[Vec<f32>], to: &[Vec<f32>]) -> Vec<(usize, f64, f64)> {
    from.iter()
        .map(|d| {
            let (mut bi, mut b1, mut b2) = (usize::MAX, f64::INFINITY, f64::INFINITY);
            for (j, e) in to.iter().enumerate() {
                let v = dist2(d, e);
                if v < b1 {
                    (b2, b1, bi) = (b1, v, j);
                } else if v < b2 {
                    b2 = v;
                }
            }
            (bi, b1, b2)
        })
        .collect()
}

/// Index pairs `(i, j)` where `a[i]` and `b[j]` are each other's nearest
/// descriptor. With `ratio`, both directions must also pass the ratio test.
pub fn mutual_nn_matches(a: &[Vec<f32>], b: &[Vec<f32>], ratio: Option<f64>) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let ab = nearest_two(a, b);
    let ba = nearest_two(b, a);
    let passes = |(_, d1, d2): (usize, f64, f64)| match ratio {
        Some(r) => d1.sqrt() < r * d2.sqrt(),
        None => true,
    };
    ab.iter()
        .enumerate()
        .filter(|&(i, &m)| ba[m.0].0 == i && passes(m) && passes(ba[m.0]))
        .map(|(i, m)| (i, m.0))
        .collect()
}

fn sym_error(h: &Homography, hinv: &Homography, p: &Vector2<f64>, q: &Vector2<f64>) -> f64 {
    match (h.warp(p), hinv.warp(q)) {
        (Ok(hp), Ok(hq)) => (hp - q).norm().max((hq - p).norm()),
        _ => f64::INFINITY,
    }
}

/// Randomized-consensus homography fit with a final least-squares refit on
/// the inliers. Correspondences are processed in a canonical order so
/// swapping the roles of `src` and `dst` draws the same samples.
pub fn estimate_homography(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
    threshold: f64,
    iterations: usize,
    seed: u64,
) -> Option<Homography> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return None;
    }
    let key = |i: usize| {
        let (a, b) = ((src[i].x, src[i].y), (dst[i].x, dst[i].y));
        if a.partial_cmp(&b) == Some(std::cmp::Ordering::Greater) {
            (b, a)
        } else {
            (a, b)
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| key(i).partial_cmp(&key(j)).unwrap_or(std::cmp::Ordering::Equal));
    let src: Vec<_> = order.iter().map(|&i| src[i]).collect();
    let dst: Vec<_> = order.iter().map(|&i| dst[i]).collect();

    let inliers_of = |h: &Homography| -> Option<Vec<usize>> {
        let hinv = h.inverse().ok()?;
        Some((0..n).filter(|&i| sym_error(h, &hinv, &src[i], &dst[i]) <= threshold).collect())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Vec<usize> = Vec::new();
    let trials = if n == 4 { 1 } else { iterations.max(1) };
    for _ in 0..trials {
        let idx = sample(&mut rng, n, 4).into_vec();
        let s: Vec<_> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<_> = idx.iter().map(|&i| dst[i]).collect();
        let Ok(h) = Homography::fit(&s, &d) else { continue };
        if let Some(inl) = inliers_of(&h) {
            if inl.len() > best.len() {
                best = inl;
                if best.len() == n {
                    break;
                }
            }
        }
    }
    if best.len() < 4 {
        return None;
    }
    let s: Vec<_> = best.iter().map(|&i| src[i]).collect();
    let d: Vec<_> = best.iter().map(|&i| dst[i]).collect();
    Homography::fit(&s, &d).ok()
}

/// Mean distance between the four image corners mapped by `estimated` and by `truth`.
pub fn corner_error(estimated: &Homography, truth: &Homography, width: usize, height: usize) -> f64 {
    let (w, h) = (width as f64 - 1.0, height as f64 - 1.0);
    let corners = [Vector2::new(0.0, 0.0), Vector2::new(w, 0.0), Vector2::new(0.0, h), Vector2::new(w, h)];
    corners
        .iter()
        .map(|c| match (estimated.warp(c), truth.warp(c)) {
            (Ok(a), Ok(b)) => (a - b).norm(),
            _ => f64::INFINITY,
        })
        .sum::<f64>()
        / 4.0
}

/// Corner error of the homography estimated from matched features, or `None`
/// when fewer than four consistent matches exist.
pub fn pair_corner_error(
    a: &FeatureExtraction,
    b: &FeatureExtraction,
    truth: &Homography,
    width: usize,
    height: usize,
    cfg: &HomographyConfig,
) -> Option<f64> {
    let matches = mutual_nn_matches(&a.descriptors, &b.descriptors, cfg.ratio);
    let src: Vec<_> = matches.iter().map(|&(i, _)| Vector2::new(a.keypoints[i].x, a.keypoints[i].y)).collect();
    let dst: Vec<_> = matches.iter().map(|&(_, j)| Vector2::new(b.keypoints[j].x, b.keypoints[j].y)).collect();
    let h = estimate_homography(&src, &dst, cfg.inlier_threshold, cfg.ransac_iterations, cfg.seed)?;
    let e = corner_error(&h, truth, width, height);
    e.is_finite().then_some(e)
}

/// Fraction of pairs whose estimated homography has mean corner error ≤ ε.
pub fn homography_correctness(
    pairs: &[HomographyPair],
    extractor: &dyn FeatureExtractor,
    cfg: &HomographyConfig,
) -> Result<HomographyReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidInput("no image pairs".into()));
    }
    let errors: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|p| -> Result<_, EvalError> {
            let a = extractor.extract(&p.image_a)?;
            let b = extractor.extract(&p.image_b)?;
            Ok(pair_corner_error(&a, &b, &p.h_ab, p.image_a.width, p.image_a.height, cfg))
        })
        .collect::<Result<_, _>>()?;
    let correct = errors.iter().filter(|e| e.is_some_and(|v| v <= cfg.epsilon)).count();
    Ok(HomographyReport { correctness: correct as f64 / pairs.len() as f64, epsilon: cfg.epsilon, errors })
}

fn read_gray(dir: &Path, stem: &str) -> Result<Option<GrayImage>, EvalError> {
    for ext in ["png", "ppm", "pgm"] {
        let p = dir.join(format!("{stem}.{ext}"));
        if p.exists() {
            let (w, h, rgb) = read_png_rgb8(&p).map_err(|e| EvalError::InvalidInput(e.to_string()))?;
            return Ok(Some(gray_from_rgb8(w, h, &rgb)));
        }
    }
    Ok(None)
}

fn crop_to_cells(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width / 8 * 8, img.height / 8 * 8);
    Raster::from_fn(w, h, |x, y| img.get(x, y))
}

/// Reads an HPatches-style sequence: reference `1.*`, targets `2.*`…, and
/// whitespace-separated 3×3 matrices in `H_1_k`. Images are cropped at the
/// bottom/right to multiples of 8, which leaves the homographies unchanged.
pub fn load_sequence_dir(dir: &Path) -> Result<Vec<HomographyPair>, EvalError> {
    let reference = read_gray(dir, "1")?
        .ok_or_else(|| EvalError::InvalidInput(format!("{}: missing reference image", dir.display())))?;
    let reference = crop_to_cells(&reference);
    let mut pairs = Vec::new();
    for k in 2.. {
        let Some(img) = read_gray(dir, &k.to_string())? else { break };
        let hp = dir.join(format!("H_1_{k}"));
        let text = std::fs::read_to_string(&hp).map_err(|e| EvalError::InvalidInput(format!("{}: {e}", hp.display())))?;
        let v: Vec<f64> = text
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| EvalError::InvalidInput(format!("{}: {e}", hp.display())))?;
        if v.len() != 9 {
            return Err(EvalError::InvalidInput(format!("{}: expected 9 numbers", hp.display())));
        }
        let h = Homography::new(Matrix3::from_row_slice(&v)).map_err(|e| EvalError::InvalidInput(e.to_string()))?;
        pairs.push(HomographyPair { image_a: reference.clone(), image_b: crop_to_cells(&img), h_ab: h });
    }
    Ok(pairs)
}
