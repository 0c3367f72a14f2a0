use nalgebra::{Matrix2, Matrix2x3, Vector3};
use rayon::prelude::*;

use super::{shade_point, tonemap, IlluminationCondition, RenderError, RenderOutput, RenderWarning, ShadingOptions};
use crate::geometry::{CameraView, Intrinsics};
use crate::raster::Raster;
use crate::scene::{GaussianPoint, Scene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub shading: ShadingOptions,
    /// Footprint cutoff in standard deviations.
    pub sigma_cutoff: f64,
    /// Variance added to every projected footprint so no splat is narrower than this.
    pub min_radius_px: f64,
    pub alpha_min: f64,
    pub transmittance_min: f64,
    /// Pixels with less accumulated alpha are background (depth 0).
    pub depth_alpha_min: f64,
    pub near: f64,
    pub tile: usize,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            shading: ShadingOptions::default(),
            sigma_cutoff: 3.0,
            min_radius_px: 0.5,
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            depth_alpha_min: 0.5,
            near: 1e-2,
            tile: 16,
        }
    }
}

struct Splat {
    index: usize,
    mean: (f64, f64),
    /// Inverse 2D covariance (a, b, c) for `[[a, b], [b, c]]`.
    conic: (f64, f64, f64),
    depth: f64,
    opacity: f64,
    bbox: (i64, i64, i64, i64),
}

fn project_splats(points: &[GaussianPoint], view: &CameraView, k: &Intrinsics, opt: &RenderOptions) -> Vec<Splat> {
    let (w, h) = (k.width as i64, k.height as i64);
    let mut splats: Vec<Splat> = points
        .iter()
        .enumerate()
        .filter_map(|(index, g)| {
            let pc = view.to_camera(&g.position);
            if pc.z <= opt.near {
                return None;
            }
            let iz = 1.0 / pc.z;
            let jac = Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * pc.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * pc.y * iz * iz,
            );
            let cov_cam = view.rotation * g.covariance * view.rotation.transpose();
            let cov2 = jac * cov_cam * jac.transpose() + Matrix2::identity() * (opt.min_radius_px * opt.min_radius_px);
            let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
            if !(det > 0.0) {
                return None;
            }
            let conic = (cov2[(1, 1)] / det, -0.5 * (cov2[(0, 1)] + cov2[(1, 0)]) / det, cov2[(0, 0)] / det);
            let mid = 0.5 * (cov2[(0, 0)] + cov2[(1, 1)]);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            let radius = (opt.sigma_cutoff * lambda_max.sqrt()).ceil() as i64;
            let mx = k.fx * pc.x * iz + k.cx;
            let my = k.fy * pc.y * iz + k.cy;
            let bbox = (
                (mx.round() as i64 - radius).max(0),
                (my.round() as i64 - radius).max(0),
                (mx.round() as i64 + radius).min(w - 1),
                (my.round() as i64 + radius).min(h - 1),
            );
            if bbox.0 > bbox.2 || bbox.1 > bbox.3 {
                return None;
            }
            Some(Splat { index, mean: (mx, my), conic, depth: pc.z, opacity: g.opacity, bbox })
        })
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

/// Renders a scene under one illumination condition.
pub fn render_scene(
    scene: &Scene,
    view: &CameraView,
    k: &Intrinsics,
    illum: &IlluminationCondition,
    opt: &RenderOptions,
) -> Result<RenderOutput, RenderError> {
    Ok(render_scene_multi(scene, view, k, std::slice::from_ref(illum), opt)?.pop().expect("one output"))
}

/// Renders one view under several conditions, sharing the geometry pass so
/// compositing weights and depth are identical across conditions.
pub fn render_scene_multi(
    scene: &Scene,
    view: &CameraView,
    k: &Intrinsics,
    illums: &[IlluminationCondition],
    opt: &RenderOptions,
) -> Result<Vec<RenderOutput>, RenderError> {
    render_points(&scene.points, view, k, illums, opt)
}

pub fn render_points(
    points: &[GaussianPoint],
    view: &CameraView,
    k: &Intrinsics,
    illums: &[IlluminationCondition],
    opt: &RenderOptions,
) -> Result<Vec<RenderOutput>, RenderError> {
    if points.is_empty() {
        return Err(RenderError::EmptyScene);
    }
    k.validate()?;
    for il in illums {
        il.validate()?;
    }
    let (w, h) = (k.width as usize, k.height as usize);
    let n_il = illums.len();
    let any_in_front = points.iter().any(|g| view.to_camera(&g.position).z > opt.near);
    let splats = project_splats(points, view, k, opt);

    // per-splat radiance for every condition: colors[s * n_il + i]
    let center = view.center();
    let colors: Vec<Vector3<f64>> = splats
        .par_iter()
        .flat_map_iter(|s| {
            let g = &points[s.index];
            let v = (center - g.position).try_normalize(1e-12).unwrap_or_else(Vector3::z);
            illums.iter().map(move |il| shade_point(g, il, &v, &opt.shading))
        })
        .collect();

    let tile = opt.tile.max(1);
    let (tx, ty) = (w.div_ceil(tile), h.div_ceil(tile));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tx * ty];
    for (si, s) in splats.iter().enumerate() {
        let (x0, y0, x1, y1) = s.bbox;
        for by in (y0 as usize / tile)..=(y1 as usize / tile) {
            for bx in (x0 as usize / tile)..=(x1 as usize / tile) {
                bins[by * tx + bx].push(si as u32);
            }
        }
    }

    let cutoff2 = opt.sigma_cutoff * opt.sigma_cutoff;
    // (pixel index, per-condition color, depth)
    let tiles: Vec<Vec<(usize, Vec<[f32; 3]>, f32)>> = bins
        .par_iter()
        .enumerate()
        .map(|(b, list)| {
            let (bx, by) = (b % tx, b / tx);
            let mut out = Vec::with_capacity(tile * tile);
            for y in by * tile..((by + 1) * tile).min(h) {
                for x in bx * tile..((bx + 1) * tile).min(w) {
                    let mut acc = vec![Vector3::<f64>::zeros(); n_il];
                    let (mut t, mut dsum, mut asum) = (1.0f64, 0.0f64, 0.0f64);
                    for &si in list {
                        let s = &splats[si as usize];
                        let (dx, dy) = (x as f64 - s.mean.0, y as f64 - s.mean.1);
                        let m = s.conic.0 * dx * dx + 2.0 * s.conic.1 * dx * dy + s.conic.2 * dy * dy;
                        if m > cutoff2 {
                            continue;
                        }
                        let alpha = (s.opacity * (-0.5 * m).exp()).min(1.0);
                        if alpha < opt.alpha_min {
                            continue;
                        }
                        let wgt = alpha * t;
                        let base = si as usize * n_il;
                        for (i, a) in acc.iter_mut().enumerate() {
                            *a += colors[base + i] * wgt;
                        }
                        dsum += wgt * s.depth;
                        asum += wgt;
                        t *= 1.0 - alpha;
                        if t < opt.transmittance_min {
                            break;
                        }
                    }
                    let depth = if asum >= opt.depth_alpha_min { (dsum / asum) as f32 } else { 0.0 };
                    let cols = acc.iter().map(|c| [c.x as f32, c.y as f32, c.z as f32]).collect();
                    out.push((y * w + x, cols, depth));
                }
            }
            out
        })
        .collect();

    let mut linear: Vec<Raster<[f32; 3]>> = (0..n_il).map(|_| Raster::filled(w, h, [0.0; 3])).collect();
    let mut depth = Raster::filled(w, h, 0.0f32);
    for (idx, cols, d) in tiles.into_iter().flatten() {
        depth.data[idx] = d;
        for (i, c) in cols.into_iter().enumerate() {
            linear[i].data[idx] = c;
        }
    }
    let warning = if any_in_front { None } else { Some(RenderWarning::NoVisiblePoints) };
    if warning.is_some() {
        log::warn!("no point in front of the camera; returning background");
    }
    Ok(linear
        .into_iter()
        .map(|lin| RenderOutput { rgb: tonemap(&lin), linear_rgb: lin, depth: depth.clone(), warning })
        .collect())
}
