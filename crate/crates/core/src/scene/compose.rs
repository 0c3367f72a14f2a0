use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureObjectPair, Placement, Scene, SceneError};
use crate::geometry::{check_rotation, random_rotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementConfig {
    /// Translations are drawn uniformly from `[-half_extent, half_extent]³`.
    pub half_extent: f64,
    /// Maximum tolerated overlap of two bounding spheres, as a fraction of the
    /// smaller diameter.
    pub max_overlap: f64,
    pub max_attempts: usize,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self { half_extent: 2.0, max_overlap: 0.5, max_attempts: 200 }
    }
}

/// Serializable scene: placements reference pairs by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub scene_id: String,
    pub seed: u64,
    pub placements: Vec<Placement>,
}

impl SceneDescription {
    pub fn resolve(&self, pairs: &[FeatureObjectPair]) -> Result<Scene, SceneError> {
        let by_id: HashMap<&str, &FeatureObjectPair> = pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect();
        let selected = self
            .placements
            .iter()
            .map(|pl| by_id.get(pl.pair_id.as_str()).copied().ok_or_else(|| SceneError::UnknownPair(pl.pair_id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let rigid: Vec<_> = self.placements.iter().map(|p| (p.rotation, p.translation)).collect();
        let mut scene = compose_scene_with(&selected, &rigid)?;
        scene.scene_id = self.scene_id.clone();
        scene.seed = self.seed;
        Ok(scene)
    }
}

fn overlap_fraction(c1: &Vector3<f64>, r1: f64, c2: &Vector3<f64>, r2: f64) -> f64 {
    let d = (c1 - c2).norm();
    let depth = (r1 + r2 - d).max(0.0);
    depth / (2.0 * r1.min(r2)).max(1e-12)
}

/// Places every pair under an independent random rigid transform: rotation
/// uniform over SO(3), translation uniform in the configured box. Placements
/// whose bounding spheres overlap too much are re-drawn; after
/// `max_attempts` the least-overlapping candidate is kept.
pub fn compose_scene(
    pairs: &[&FeatureObjectPair],
    seed: u64,
    config: &PlacementConfig,
) -> Result<Scene, SceneError> {
    if pairs.is_empty() {
        return Err(SceneError::EmptyPairList);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rigid: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(pairs.len());
    let mut placed: Vec<(Vector3<f64>, f64)> = Vec::new();
    let e = config.half_extent;
    for pair in pairs {
        let r_obj = pair.object.bounding_radius;
        let mut best: Option<(f64, Matrix3<f64>, Vector3<f64>)> = None;
        for _ in 0..config.max_attempts.max(1) {
            let rot = random_rotation(&mut rng);
            let t = if e > 0.0 {
                Vector3::new(rng.gen_range(-e..=e), rng.gen_range(-e..=e), rng.gen_range(-e..=e))
            } else {
                Vector3::zeros()
            };
            let worst = placed.iter().map(|(c, r)| overlap_fraction(&t, r_obj, c, *r)).fold(0.0, f64::max);
            if best.as_ref().map_or(true, |b| worst < b.0) {
                best = Some((worst, rot, t));
            }
            if worst <= config.max_overlap {
                break;
            }
        }
        let (_, rot, t) = best.expect("at least one attempt");
        placed.push((t, r_obj));
        rigid.push((rot, t));
    }
    let mut scene = compose_scene_with(pairs, &rigid)?;
    scene.seed = seed;
    scene.scene_id = format!("scene_{seed:016x}");
    Ok(scene)
}

/// Composition with explicit rigid transforms, one per pair.
pub fn compose_scene_with(
    pairs: &[&FeatureObjectPair],
    rigid: &[(Matrix3<f64>, Vector3<f64>)],
) -> Result<Scene, SceneError> {
    if pairs.is_empty() {
        return Err(SceneError::EmptyPairList);
    }
    assert_eq!(pairs.len(), rigid.len(), "one rigid transform per pair");
    let mut scene = Scene {
        scene_id: String::new(),
        seed: 0,
        placements: Vec::with_capacity(pairs.len()),
        points: Vec::with_capacity(pairs.iter().map(|p| p.object.points.len()).sum()),
        features: Vec::with_capacity(pairs.len()),
        pair_point_counts: Vec::with_capacity(pairs.len()),
        bounds: Vec::with_capacity(pairs.len()),
    };
    for (pair, (r, t)) in pairs.iter().zip(rigid) {
        check_rotation(r)?;
        scene.points.extend(pair.object.points.iter().map(|g| g.transformed(r, t)));
        scene.features.push(pair.features.points3d.iter().map(|p| r * p + t).collect());
        scene.pair_point_counts.push(pair.point_count());
        scene.bounds.push((*t, pair.object.bounding_radius));
        scene.placements.push(Placement { pair_id: pair.pair_id.clone(), rotation: *r, translation: *t });
    }
    Ok(scene)
}

/// Draws `n_scenes` scenes, each from a random subset of `pairs` with a size
/// in `objects_per_scene` (inclusive).
pub fn generate_scenes(
    pairs: &[FeatureObjectPair],
    n_scenes: usize,
    objects_per_scene: (usize, usize),
    seed: u64,
    config: &PlacementConfig,
) -> Result<Vec<Scene>, SceneError> {
    if pairs.is_empty() {
        return Err(SceneError::EmptyPairList);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = objects_per_scene.0.max(1).min(pairs.len());
    let hi = objects_per_scene.1.max(lo).min(pairs.len());
    (0..n_scenes)
        .map(|i| {
            let k = rng.gen_range(lo..=hi);
            let mut chosen: Vec<&FeatureObjectPair> = pairs.choose_multiple(&mut rng, k).collect();
            chosen.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
            let scene_seed: u64 = rng.gen();
            let mut scene = compose_scene(&chosen, scene_seed, config)?;
            scene.scene_id = format!("scene_{i:03}");
            Ok(scene)
        })
        .collect()
}
