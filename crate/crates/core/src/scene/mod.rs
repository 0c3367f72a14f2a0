//! Relightable Gaussian-point objects, their feature sets, and composed scenes.

mod compose;
pub mod io;
mod procedural;

pub use compose::{compose_scene, compose_scene_with, generate_scenes, PlacementConfig, SceneDescription};
pub use procedural::{make_procedural_object, ObjectSpec, ShapeKind, TextureKind};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("unsupported shape kind `{0}`")]
    UnsupportedShapeKind(String),
    #[error("unsupported texture kind `{0}`")]
    UnsupportedTextureKind(String),
    #[error("object needs at least {min} points, got {got}")]
    TooFewPoints { min: usize, got: usize },
    #[error("scene composition needs at least one feature/object pair")]
    EmptyPairList,
    #[error("unknown pair `{0}` referenced by scene")]
    UnknownPair(String),
    #[error("invalid object: {0}")]
    InvalidObject(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

/// A surface-aligned 3D Gaussian extended with BRDF attributes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPoint {
    pub position: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub opacity: f64,
    pub base_color: Vector3<f64>,
    pub roughness: f64,
    pub metallic: f64,
    pub normal: Vector3<f64>,
}

impl GaussianPoint {
    /// Rigidly moves the point: position `R·p + t`, normal `R·n`, covariance `R·Σ·Rᵀ`.
    pub fn transformed(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> Self {
        let cov = r * self.covariance * r.transpose();
        Self {
            position: r * self.position + t,
            // re-symmetrize: the product accumulates asymmetric rounding
            covariance: (cov + cov.transpose()) * 0.5,
            normal: r * self.normal,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::InvalidObject(m.to_string()));
        let c = &self.covariance;
        if (c - c.transpose()).abs().max() > 1e-12 * c.abs().max().max(1.0) {
            return bad("covariance not symmetric");
        }
        let eig = c.symmetric_eigenvalues();
        if eig.iter().any(|&e| !(e > 1e-12)) {
            return bad("covariance not positive definite");
        }
        if (self.normal.norm() - 1.0).abs() > 1e-6 {
            return bad("normal not unit length");
        }
        if !(0.0..=1.0).contains(&self.opacity) || !(0.0..=1.0).contains(&self.metallic) {
            return bad("opacity/metallic outside [0,1]");
        }
        if !(self.roughness > 0.0 && self.roughness <= 1.0) {
            return bad("roughness outside (0,1]");
        }
        if self.base_color.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return bad("base color outside [0,1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelightableObject {
    pub object_id: String,
    pub points: Vec<GaussianPoint>,
    /// All positions lie within this distance of the object origin.
    pub bounding_radius: f64,
    pub seed: u64,
}

impl RelightableObject {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.points.is_empty() {
            return Err(SceneError::InvalidObject("object has no points".into()));
        }
        for p in &self.points {
            p.validate()?;
            if p.position.norm() > self.bounding_radius * (1.0 + 1e-9) {
                return Err(SceneError::InvalidObject("point outside bounding radius".into()));
            }
        }
        Ok(())
    }
}

/// 3D coordinates of feature keypoints in the object's frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub points3d: Vec<Vector3<f64>>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.points3d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points3d.is_empty()
    }

    /// Every feature must sit within `1.1 ×` the object's bounding radius.
    pub fn within_bounds(&self, bounding_radius: f64) -> bool {
        self.points3d.iter().all(|p| p.norm() <= bounding_radius * 1.1)
    }
}

/// Feature set and object expressed in one shared frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureObjectPair {
    pub pair_id: String,
    pub features: FeatureSet,
    pub object: RelightableObject,
}

impl FeatureObjectPair {
    /// `n_P`: Gaussian points plus feature points.
    pub fn point_count(&self) -> usize {
        self.object.points.len() + self.features.len()
    }
}

/// Unites a feature set with its object. Synthetic objects are generated in the
/// same frame their features are lifted in, so the union applies the identity.
pub fn align_pair(features: FeatureSet, object: RelightableObject) -> FeatureObjectPair {
    FeatureObjectPair { pair_id: object.object_id.clone(), features, object }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub pair_id: String,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Composed scene with all placements resolved into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub seed: u64,
    pub placements: Vec<Placement>,
    /// World-frame Gaussians of all placed objects, in placement order.
    pub points: Vec<GaussianPoint>,
    /// World-frame features, one list per placement.
    pub features: Vec<Vec<Vector3<f64>>>,
    /// `n_P` of each placed pair.
    pub pair_point_counts: Vec<usize>,
    /// World-frame bounding spheres `(center, radius)` per placement.
    pub bounds: Vec<(Vector3<f64>, f64)>,
}

impl Scene {
    pub fn resolved_point_count(&self) -> usize {
        self.points.len() + self.features.iter().map(Vec::len).sum::<usize>()
    }

    pub fn all_features(&self) -> Vec<Vector3<f64>> {
        self.features.iter().flatten().copied().collect()
    }

    /// Sphere enclosing every placed object.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        if self.bounds.is_empty() {
            return (Vector3::zeros(), 0.0);
        }
        let c = self.bounds.iter().fold(Vector3::zeros(), |a, (p, _)| a + p) / self.bounds.len() as f64;
        let r = self.bounds.iter().map(|(p, r)| (p - c).norm() + r).fold(0.0, f64::max);
        (c, r)
    }

    pub fn description(&self) -> SceneDescription {
        SceneDescription { scene_id: self.scene_id.clone(), seed: self.seed, placements: self.placements.clone() }
    }
}
