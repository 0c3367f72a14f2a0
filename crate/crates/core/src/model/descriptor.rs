//! Coarse descriptor grid → per-pixel unit descriptors.
//!
//! Upsampling is bilinear with half-pixel centers: full-resolution pixel `x`
//! reads coarse coordinate `(x + 0.5) / 8 − 0.5`, clamped to the grid.

use super::conv::Chw;
use crate::tensor::Hwc;

pub const CELL: usize = 8;
const NORM_EPS: f64 = 1e-12;

/// Two (index, weight) taps along one axis.
fn taps(x: f64, n: usize) -> [(usize, f64); 2] {
    let s = ((x + 0.5) / CELL as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    let f = s - i0 as f64;
    [(i0, 1.0 - f), (i1, f)]
}

fn raw_at(coarse: &Chw, x: f64, y: f64) -> (Vec<f64>, [(usize, f64); 4]) {
    let [(x0, wx0), (x1, wx1)] = taps(x, coarse.w);
    let [(y0, wy0), (y1, wy1)] = taps(y, coarse.h);
    let cells = [(y0 * coarse.w + x0, wy0 * wx0), (y0 * coarse.w + x1, wy0 * wx1), (y1 * coarse.w + x0, wy1 * wx0), (y1 * coarse.w + x1, wy1 * wx1)];
    let n = coarse.h * coarse.w;
    let v = (0..coarse.c)
        .map(|d| cells.iter().map(|&(i, wt)| wt * coarse.data[d * n + i] as f64).sum())
        .collect();
    (v, cells)
}

/// Unit vector and norm of `v`. A zero vector maps to the constant unit
/// vector `1/√D`, so every output descriptor has unit norm.
pub fn normalize(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n <= NORM_EPS {
        let u = 1.0 / (v.len() as f64).sqrt();
        return (vec![u; v.len()], 0.0);
    }
    (v.iter().map(|a| a / n).collect(), n)
}

/// Gradient through `y = v / |v|`: `(dy − y·(y·dy)) / |v|`; zero at `v = 0`.
pub fn normalize_backward(y: &[f64], norm: f64, dy: &[f64]) -> Vec<f64> {
    if norm <= NORM_EPS {
        return vec![0.0; y.len()];
    }
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    y.iter().zip(dy).map(|(yi, di)| (di - yi * dot) / norm).collect()
}

/// Unit descriptor at continuous pixel `(x, y)`.
pub fn sample_descriptor(coarse: &Chw, x: f64, y: f64) -> Vec<f64> {
    normalize(&raw_at(coarse, x, y).0).0
}

/// Accumulates into `d_coarse` the gradient of a loss whose gradient w.r.t.
/// `sample_descriptor(coarse, x, y)` is `dy`.
pub fn sample_descriptor_backward(coarse: &Chw, x: f64, y: f64, dy: &[f64], d_coarse: &mut [f64]) {
    let (raw, cells) = raw_at(coarse, x, y);
    let (unit, norm) = normalize(&raw);
    let dv = normalize_backward(&unit, norm, dy);
    let n = coarse.h * coarse.w;
    for (d, g) in dv.iter().enumerate() {
        for &(i, wt) in &cells {
            d_coarse[d * n + i] += wt * g;
        }
    }
}

/// Full `h × w × D` unit-descriptor map.
pub fn upsample_normalize(coarse: &Chw, h: usize, w: usize) -> Hwc<f32> {
    let mut out = Hwc::zeros(h, w, coarse.c);
    for y in 0..h {
        for x in 0..w {
            let v = sample_descriptor(coarse, x as f64, y as f64);
            out.pixel_mut(y, x).iter_mut().zip(&v).for_each(|(o, v)| *o = *v as f32);
        }
    }
    out
}

/// Gradient of a loss on `upsample_normalize(coarse)` back to the coarse grid.
pub fn upsample_normalize_backward(coarse: &Chw, d_full: &Hwc<f64>) -> Vec<f64> {
    let mut d = vec![0.0; coarse.data.len()];
    for y in 0..d_full.h {
        for x in 0..d_full.w {
            sample_descriptor_backward(coarse, x as f64, y as f64, d_full.pixel(y, x), &mut d);
        }
    }
    d
}

/// Per-cell unit descriptors on the coarse grid itself.
pub fn normalize_coarse(coarse: &Chw) -> Hwc<f64> {
    let n = coarse.h * coarse.w;
    let mut out = Hwc::zeros(coarse.h, coarse.w, coarse.c);
    for i in 0..n {
        let v: Vec<f64> = (0..coarse.c).map(|d| coarse.data[d * n + i] as f64).collect();
        let (u, _) = normalize(&v);
        out.data[i * coarse.c..(i + 1) * coarse.c].copy_from_slice(&u);
    }
    out
}

pub fn normalize_coarse_backward(coarse: &Chw, d_unit: &Hwc<f64>) -> Vec<f64> {
    let n = coarse.h * coarse.w;
    let mut d = vec![0.0; coarse.data.len()];
    for i in 0..n {
        let v: Vec<f64> = (0..coarse.c).map(|k| coarse.data[k * n + i] as f64).collect();
        let (u, norm) = normalize(&v);
        let g = normalize_backward(&u, norm, &d_unit.data[i * coarse.c..(i + 1) * coarse.c]);
        for (k, gk) in g.iter().enumerate() {
            d[k * n + i] = *gk;
        }
    }
    d
}
