//! Lifting 2D detections into object-frame 3D feature sets.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::adaptation::{build_feature_superset, AdaptationConfig};
use super::detector::{Keypoint2d, PointDetector};
use super::views::{sample_views, ViewConfig};
use super::DatasetError;
use crate::geometry::{back_project, CameraView, Intrinsics};
use crate::raster::DepthImage;
use crate::render::{render_points, IlluminationCondition, RenderOptions};
use crate::scene::{FeatureSet, RelightableObject};

/// Greedy centroid merge: each point joins the first cluster whose current
/// centroid lies within `radius`, otherwise it starts a new cluster.
pub fn merge_points(points: &[Vector3<f64>], radius: f64) -> Vec<Vector3<f64>> {
    let mut sums: Vec<(Vector3<f64>, usize)> = Vec::new();
    for p in points {
        match sums.iter_mut().find(|(s, n)| (s / *n as f64 - p).norm() <= radius) {
            Some((s, n)) => {
                *s += p;
                *n += 1;
            }
            None => sums.push((*p, 1)),
        }
    }
    sums.into_iter().map(|(s, n)| s / n as f64).collect()
}

/// Back-projects each keypoint with the depth at its nearest pixel.
/// Keypoints on background (depth 0) or outside the depth map are dropped.
pub fn lift_keypoints_to_3d(
    keypoints: &[Vector2<f64>],
    depth: &DepthImage,
    view: &CameraView,
    k: &Intrinsics,
    merge_radius: f64,
) -> FeatureSet {
    let lifted: Vec<Vector3<f64>> = keypoints
        .iter()
        .filter_map(|p| {
            let (x, y) = ((p.x + 0.5).floor(), (p.y + 0.5).floor());
            if x < 0.0 || y < 0.0 || x >= depth.width as f64 || y >= depth.height as f64 {
                return None;
            }
            let z = depth.get(x as usize, y as usize) as f64;
            back_project(p, z, view, k).ok()
        })
        .collect();
    FeatureSet { points3d: merge_points(&lifted, merge_radius) }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureBuildConfig {
    pub n_views: usize,
    pub intrinsics: Intrinsics,
    pub views: ViewConfig,
    pub n_homographies: usize,
    pub adaptation: AdaptationConfig,
    pub merge_radius: f64,
}

impl Default for FeatureBuildConfig {
    fn default() -> Self {
        Self {
            n_views: 8,
            intrinsics: Intrinsics::from_fov(160, 120, 60.0).expect("valid default intrinsics"),
            views: ViewConfig::default(),
            n_homographies: 8,
            adaptation: AdaptationConfig::default(),
            merge_radius: 0.01,
        }
    }
}

/// Feature set of a single object: renders it alone under the reference light
/// from several views, detects with homography adaptation, lifts and merges.
/// Points farther than `1.1 ×` the bounding radius from the origin are dropped.
pub fn build_object_feature_set(
    object: &RelightableObject,
    detector: &dyn PointDetector,
    config: &FeatureBuildConfig,
    seed: u64,
) -> Result<FeatureSet, DatasetError> {
    let views = sample_views(&Vector3::zeros(), object.bounding_radius, &config.intrinsics, config.n_views, seed, &config.views)?;
    let reference = [IlluminationCondition::reference()];
    let mut images = Vec::with_capacity(views.len());
    let mut depths = Vec::with_capacity(views.len());
    for v in &views {
        let out = render_points(&object.points, v, &config.intrinsics, &reference, &RenderOptions::default())?
            .pop()
            .expect("one condition");
        images.push(out.gray());
        depths.push(out.depth);
    }
    let supersets = build_feature_superset(&images, detector, config.n_homographies, seed, &config.adaptation)?;
    let mut lifted = Vec::new();
    for ((kps, depth), view) in supersets.iter().zip(&depths).zip(&views) {
        let px: Vec<Vector2<f64>> = kps.iter().map(|k: &Keypoint2d| Vector2::new(k.x, k.y)).collect();
        lifted.extend(lift_keypoints_to_3d(&px, depth, view, &config.intrinsics, config.merge_radius).points3d);
    }
    let limit = object.bounding_radius * 1.1;
    let points3d = merge_points(&lifted, config.merge_radius).into_iter().filter(|p| p.norm() <= limit).collect();
    Ok(FeatureSet { points3d })
}
