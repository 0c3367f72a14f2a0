use std::f64::consts::PI;

use nalgebra::Vector3;

use super::IlluminationCondition;
use crate::scene::GaussianPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingOptions {
    pub specular: bool,
}

impl Default for ShadingOptions {
    fn default() -> Self {
        Self { specular: true }
    }
}

/// GGX / Trowbridge-Reitz normal distribution with `alpha = roughness²`.
fn ggx_distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

/// Smith-Schlick geometry term for direct lighting, `k = (r + 1)² / 8`.
fn smith_g1(n_dot_x: f64, roughness: f64) -> f64 {
    let k = (roughness + 1.0) * (roughness + 1.0) / 8.0;
    n_dot_x / (n_dot_x * (1.0 - k) + k)
}

fn fresnel_schlick(f0: Vector3<f64>, v_dot_h: f64) -> Vector3<f64> {
    let w = (1.0 - v_dot_h).clamp(0.0, 1.0).powi(5);
    f0 + (Vector3::repeat(1.0) - f0) * w
}

/// Linear RGB leaving the point towards the viewer: Lambert diffuse
/// `(1−metallic)·base/π`, Cook–Torrance GGX specular with Fresnel-Schlick
/// (`F0 = mix(0.04, base, metallic)`), plus `ambient·base`.
///
/// `view_dir` points from the surface towards the camera. Splats are
/// two-sided: the normal is flipped to face the viewer.
pub fn shade_point(
    g: &GaussianPoint,
    illum: &IlluminationCondition,
    view_dir: &Vector3<f64>,
    options: &ShadingOptions,
) -> Vector3<f64> {
    let mut n = g.normal;
    if n.dot(view_dir) < 0.0 {
        n = -n;
    }
    let base = g.base_color;
    let n_dot_v = n.dot(view_dir).max(1e-4);
    let alpha = (g.roughness * g.roughness).max(1e-4);
    let f0 = Vector3::repeat(0.04) * (1.0 - g.metallic) + base * g.metallic;
    let kd = (1.0 - g.metallic) / PI;

    let mut out = base.component_mul(&Vector3::from(illum.ambient));
    for light in &illum.directional_lights {
        let n_dot_l = n.dot(&light.direction);
        if n_dot_l <= 0.0 {
            continue;
        }
        let radiance = Vector3::from(light.radiance);
        let mut brdf = base * kd;
        if options.specular {
            let h = (light.direction + view_dir).try_normalize(1e-12).unwrap_or(n);
            let d = ggx_distribution(n.dot(&h).max(0.0), alpha);
            let geo = smith_g1(n_dot_l, g.roughness) * smith_g1(n_dot_v, g.roughness);
            let f = fresnel_schlick(f0, view_dir.dot(&h).max(0.0));
            brdf += f * (d * geo / (4.0 * n_dot_l * n_dot_v));
        }
        out += brdf.component_mul(&radiance) * n_dot_l;
    }
    out.map(|v| v.max(0.0))
}
