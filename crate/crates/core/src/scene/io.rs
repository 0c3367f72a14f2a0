//! Object container format.
//!
//! `<id>.bin` holds, after a 12-byte header (`b"RLOB"`, `u32` version, `u32` N),
//! little-endian f32 arrays in this order:
//!
//! | array      | shape | notes                                  |
//! |------------|-------|----------------------------------------|
//! | positions  | N×3   |                                        |
//! | covariance | N×6   | packed upper triangle xx xy xz yy yz zz |
//! | opacity    | N     |                                        |
//! | base_color | N×3   |                                        |
//! | roughness  | N     |                                        |
//! | metallic   | N     |                                        |
//! | normals    | N×3   |                                        |
//!
//! `<id>.json` is the sidecar with the object id, bounding radius and seed.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{FeatureSet, GaussianPoint, ObjectSpec, RelightableObject};

const MAGIC: &[u8; 4] = b"RLOB";
const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ObjectIoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed object container {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error("json error on {path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSidecar {
    pub object_id: String,
    pub bounding_radius: f64,
    pub seed: u64,
    pub n_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<ObjectSpec>,
}

pub fn encode_points(object: &RelightableObject) -> Vec<u8> {
    let n = object.points.len();
    let mut buf = Vec::with_capacity(12 + n * 18 * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    let mut put = |v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
    let pts = &object.points;
    pts.iter().for_each(|p| p.position.iter().for_each(|&v| put(v)));
    for p in pts {
        let c = &p.covariance;
        for (i, j) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
            put(c[(i, j)]);
        }
    }
    pts.iter().for_each(|p| put(p.opacity));
    pts.iter().for_each(|p| p.base_color.iter().for_each(|&v| put(v)));
    pts.iter().for_each(|p| put(p.roughness));
    pts.iter().for_each(|p| put(p.metallic));
    pts.iter().for_each(|p| p.normal.iter().for_each(|&v| put(v)));
    buf
}

pub fn decode_points(bytes: &[u8], path: &str) -> Result<Vec<GaussianPoint>, ObjectIoError> {
    let bad = |reason: &str| ObjectIoError::Malformed { path: path.to_string(), reason: reason.to_string() };
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad("unsupported version"));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + n * 18 * 4 {
        return Err(bad("length does not match point count"));
    }
    let vals: Vec<f64> = bytes[12..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    let (pos, rest) = vals.split_at(3 * n);
    let (cov, rest) = rest.split_at(6 * n);
    let (opa, rest) = rest.split_at(n);
    let (col, rest) = rest.split_at(3 * n);
    let (rough, rest) = rest.split_at(n);
    let (metal, nrm) = rest.split_at(n);
    Ok((0..n)
        .map(|i| {
            let c = &cov[6 * i..6 * i + 6];
            GaussianPoint {
                position: Vector3::from_column_slice(&pos[3 * i..3 * i + 3]),
                covariance: Matrix3::new(c[0], c[1], c[2], c[1], c[3], c[4], c[2], c[4], c[5]),
                opacity: opa[i],
                base_color: Vector3::from_column_slice(&col[3 * i..3 * i + 3]),
                roughness: rough[i],
                metallic: metal[i],
                normal: Vector3::from_column_slice(&nrm[3 * i..3 * i + 3]),
            }
        })
        .collect())
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ObjectIoError + '_ {
    move |source| ObjectIoError::Io { path: path.display().to_string(), source }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ObjectIoError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io(path))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|source| ObjectIoError::Json { path: path.display().to_string(), source })?;
    std::fs::write(path, text).map_err(io(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ObjectIoError> {
    let text = std::fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| ObjectIoError::Json { path: path.display().to_string(), source })
}

/// Writes `<dir>/<id>.bin` and `<dir>/<id>.json`.
pub fn write_object(dir: &Path, object: &RelightableObject, spec: Option<&ObjectSpec>) -> Result<(), ObjectIoError> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let bin = dir.join(format!("{}.bin", object.object_id));
    std::fs::write(&bin, encode_points(object)).map_err(io(&bin))?;
    let sidecar = ObjectSidecar {
        object_id: object.object_id.clone(),
        bounding_radius: object.bounding_radius,
        seed: object.seed,
        n_points: object.points.len(),
        spec: spec.cloned(),
    };
    write_json(&dir.join(format!("{}.json", object.object_id)), &sidecar)
}

pub fn read_object(dir: &Path, object_id: &str) -> Result<RelightableObject, ObjectIoError> {
    let sidecar: ObjectSidecar = read_json(&dir.join(format!("{object_id}.json")))?;
    let bin = dir.join(format!("{object_id}.bin"));
    let bytes = std::fs::read(&bin).map_err(io(&bin))?;
    let points = decode_points(&bytes, &bin.display().to_string())?;
    Ok(RelightableObject {
        object_id: sidecar.object_id,
        points,
        bounding_radius: sidecar.bounding_radius,
        seed: sidecar.seed,
    })
}

pub fn write_features(path: &Path, features: &FeatureSet) -> Result<(), ObjectIoError> {
    write_json(path, features)
}

pub fn read_features(path: &Path) -> Result<FeatureSet, ObjectIoError> {
    read_json(path)
}
