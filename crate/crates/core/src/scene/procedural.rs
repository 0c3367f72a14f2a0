use std::f64::consts::{PI, TAU};
use std::str::FromStr;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GaussianPoint, RelightableObject, SceneError};

pub const MIN_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Plane,
    Cube,
    Sphere,
    Cylinder,
}

impl FromStr for ShapeKind {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plane" => Ok(Self::Plane),
            "cube" => Ok(Self::Cube),
            "sphere" => Ok(Self::Sphere),
            "cylinder" => Ok(Self::Cylinder),
            other => Err(SceneError::UnsupportedShapeKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    Checker,
    Voronoi,
    NoiseGradient,
}

impl FromStr for TextureKind {
    type Err = SceneError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "checker" => Ok(Self::Checker),
            "voronoi" => Ok(Self::Voronoi),
            "noise_gradient" => Ok(Self::NoiseGradient),
            other => Err(SceneError::UnsupportedTextureKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub object_id: String,
    pub shape: ShapeKind,
    pub texture: TextureKind,
    /// Edge length (plane, cube), diameter (sphere) or diameter = height (cylinder).
    pub size: f64,
    pub n_points: usize,
    pub seed: u64,
    /// Texture features per object edge (checker squares, stripe periods).
    pub texture_cells: u32,
}

impl ObjectSpec {
    pub fn new(
        object_id: impl Into<String>,
        shape: ShapeKind,
        texture: TextureKind,
        size: f64,
        n_points: usize,
        seed: u64,
    ) -> Self {
        Self { object_id: object_id.into(), shape, texture, size, n_points, seed, texture_cells: 4 }
    }
}

struct SurfaceSample {
    position: Vector3<f64>,
    normal: Vector3<f64>,
}

/// Low-discrepancy 2D sequence (R2 / plastic-number recurrence).
fn r2(i: usize, offset: Vector2<f64>) -> Vector2<f64> {
    const G: f64 = 1.324_717_957_244_746;
    let a1 = 1.0 / G;
    let a2 = 1.0 / (G * G);
    Vector2::new((offset.x + a1 * i as f64).fract(), (offset.y + a2 * i as f64).fract())
}

/// Splits `n` across parts proportionally to `weights`; remainders go to the first parts.
fn split_counts(n: usize, weights: &[f64]) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights.iter().map(|w| (n as f64 * w / total).floor() as usize).collect();
    let mut rest = n - counts.iter().sum::<usize>();
    let mut i = 0;
    while rest > 0 {
        let len = counts.len();
        counts[i % len] += 1;
        rest -= 1;
        i += 1;
    }
    counts
}

fn sample_surface(shape: ShapeKind, size: f64, n: usize, offset: Vector2<f64>) -> (Vec<SurfaceSample>, f64) {
    let h = size * 0.5;
    let mut out = Vec::with_capacity(n);
    let area = match shape {
        ShapeKind::Plane => {
            for i in 0..n {
                let uv = r2(i, offset);
                out.push(SurfaceSample {
                    position: Vector3::new((uv.x - 0.5) * size, (uv.y - 0.5) * size, 0.0),
                    normal: Vector3::z(),
                });
            }
            size * size
        }
        ShapeKind::Cube => {
            let counts = split_counts(n, &[1.0; 6]);
            for (face, &count) in counts.iter().enumerate() {
                let axis = face / 2;
                let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
                let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
                for i in 0..count {
                    let uv = r2(i, offset);
                    let mut p = Vector3::zeros();
                    p[axis] = sign * h;
                    p[a] = (uv.x - 0.5) * size;
                    p[b] = (uv.y - 0.5) * size;
                    let mut nrm = Vector3::zeros();
                    nrm[axis] = sign;
                    out.push(SurfaceSample { position: p, normal: nrm });
                }
            }
            6.0 * size * size
        }
        ShapeKind::Sphere => {
            for i in 0..n {
                let uv = r2(i, offset);
                let z = 1.0 - 2.0 * uv.x;
                let rxy = (1.0 - z * z).max(0.0).sqrt();
                let phi = TAU * uv.y;
                let nrm = Vector3::new(rxy * phi.cos(), rxy * phi.sin(), z).normalize();
                out.push(SurfaceSample { position: nrm * h, normal: nrm });
            }
            4.0 * PI * h * h
        }
        ShapeKind::Cylinder => {
            let side = TAU * h * size;
            let cap = PI * h * h;
            let counts = split_counts(n, &[side, cap, cap]);
            for i in 0..counts[0] {
                let uv = r2(i, offset);
                let phi = TAU * uv.x;
                let nrm = Vector3::new(phi.cos(), phi.sin(), 0.0);
                out.push(SurfaceSample {
                    position: Vector3::new(h * nrm.x, h * nrm.y, (uv.y - 0.5) * size),
                    normal: nrm,
                });
            }
            for (cap_idx, sign) in [(1usize, 1.0f64), (2, -1.0)] {
                for i in 0..counts[cap_idx] {
                    let uv = r2(i, offset);
                    let rr = h * uv.x.sqrt();
                    let phi = TAU * uv.y;
                    out.push(SurfaceSample {
                        position: Vector3::new(rr * phi.cos(), rr * phi.sin(), sign * h),
                        normal: Vector3::new(0.0, 0.0, sign),
                    });
                }
            }
            side + 2.0 * cap
        }
    };
    (out, area)
}

fn hsv(h: f64, s: f64, v: f64) -> Vector3<f64> {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    Vector3::new(r + m, g + m, b + m)
}

fn hash3(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [ix, iy, iz] {
        h ^= (v as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = h.rotate_left(27).wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    h ^= h >> 31;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Trilinear value noise in [0, 1).
fn value_noise(p: Vector3<f64>, seed: u64) -> f64 {
    let f = p.map(f64::floor);
    let t = (p - f).map(|v| v * v * (3.0 - 2.0 * v));
    let (ix, iy, iz) = (f.x as i64, f.y as i64, f.z as i64);
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = (if dx == 1 { t.x } else { 1.0 - t.x })
                    * (if dy == 1 { t.y } else { 1.0 - t.y })
                    * (if dz == 1 { t.z } else { 1.0 - t.z });
                acc += w * hash3(ix + dx, iy + dy, iz + dz, seed);
            }
        }
    }
    acc
}

enum Texture {
    Checker { cell: f64, offset: Vector3<f64>, light: Vector3<f64>, dark: Vector3<f64> },
    Voronoi { sites: Vec<Vector3<f64>>, colors: Vec<Vector3<f64>> },
    NoiseGradient { dir: Vector3<f64>, period: f64, noise_scale: f64, seed: u64, a: Vector3<f64>, b: Vector3<f64> },
}

impl Texture {
    fn build(kind: TextureKind, size: f64, cells: u32, rng: &mut ChaCha8Rng) -> Self {
        let cells = cells.max(1) as f64;
        let light = hsv(rng.gen(), rng.gen_range(0.0..0.6), rng.gen_range(0.75..1.0));
        let dark = hsv(rng.gen(), rng.gen_range(0.0..0.8), rng.gen_range(0.05..0.3));
        match kind {
            TextureKind::Checker => Texture::Checker {
                cell: size / cells,
                offset: Vector3::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)),
                light,
                dark,
            },
            TextureKind::Voronoi => {
                let n = (cells * cells * 1.5) as usize;
                let h = size * 0.6;
                let sites = (0..n)
                    .map(|_| Vector3::new(rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)))
                    .collect();
                // alternate bright/dark cells so adjacent regions usually contrast
                let colors = (0..n)
                    .map(|i| {
                        let v = if i % 2 == 0 { rng.gen_range(0.6..1.0) } else { rng.gen_range(0.05..0.35) };
                        hsv(rng.gen(), rng.gen_range(0.0..0.7), v)
                    })
                    .collect();
                Texture::Voronoi { sites, colors }
            }
            TextureKind::NoiseGradient => {
                let dir = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    .try_normalize(1e-9)
                    .unwrap_or_else(Vector3::x);
                Texture::NoiseGradient {
                    dir,
                    period: size / cells,
                    noise_scale: cells / size,
                    seed: rng.gen(),
                    a: light,
                    b: dark,
                }
            }
        }
    }

    fn color(&self, p: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Texture::Checker { cell, offset, light, dark } => {
                let q = p / *cell + offset;
                let parity = (q.x.floor() as i64 + q.y.floor() as i64 + q.z.floor() as i64).rem_euclid(2);
                if parity == 0 { *light } else { *dark }
            }
            Texture::Voronoi { sites, colors } => {
                let (best, _) = sites
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, (s - p).norm_squared()))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("voronoi sites");
                colors[best]
            }
            Texture::NoiseGradient { dir, period, noise_scale, seed, a, b } => {
                let n = value_noise(p * *noise_scale, *seed);
                let phase = (dir.dot(p) / period + 0.8 * n).rem_euclid(1.0);
                // two-level stripes with a smooth ramp inside each band
                let t = if phase < 0.5 { 0.15 + 0.3 * phase } else { 0.75 + 0.3 * (phase - 0.5) };
                a * t + b * (1.0 - t)
            }
        }
    }
}

fn tangent_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Round-trips a value through f32 so stored objects reload bit-identically.
fn q(v: f64) -> f64 {
    v as f32 as f64
}

/// Deterministic procedural object: surface-sampled thin-disk Gaussians with a
/// spatially varying base color.
pub fn make_procedural_object(spec: &ObjectSpec) -> Result<RelightableObject, SceneError> {
    if spec.n_points < MIN_POINTS {
        return Err(SceneError::TooFewPoints { min: MIN_POINTS, got: spec.n_points });
    }
    if !(spec.size > 0.0) {
        return Err(SceneError::InvalidObject(format!("size must be positive, got {}", spec.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offset = Vector2::new(rng.gen(), rng.gen());
    let texture = Texture::build(spec.texture, spec.size, spec.texture_cells, &mut rng);
    let roughness = rng.gen_range(0.35..0.9);
    let metallic = if rng.gen_bool(0.3) { rng.gen_range(0.0..0.4) } else { 0.0 };

    let (samples, area) = sample_surface(spec.shape, spec.size, spec.n_points, offset);
    let spacing = (area / spec.n_points as f64).sqrt();
    let sigma_t = 0.6 * spacing;
    let sigma_n = 0.05 * sigma_t;

    let mut points = Vec::with_capacity(samples.len());
    for s in samples {
        let normal = s.normal.normalize().map(q);
        let (t1, t2) = tangent_frame(&normal);
        let cov: Matrix3<f64> = sigma_t * sigma_t * (t1 * t1.transpose() + t2 * t2.transpose())
            + sigma_n * sigma_n * (normal * normal.transpose());
        let cov = ((cov + cov.transpose()) * 0.5).map(q);
        let position = s.position.map(q);
        points.push(GaussianPoint {
            position,
            covariance: cov,
            opacity: q(0.95),
            base_color: texture.color(&s.position).map(|c| q(c.clamp(0.0, 1.0))),
            roughness: q(roughness),
            metallic: q(metallic),
            normal,
        });
    }
    let bounding_radius = points.iter().map(|p| p.position.norm()).fold(0.0, f64::max);
    Ok(RelightableObject { object_id: spec.object_id.clone(), points, bounding_radius, seed: spec.seed })
}
