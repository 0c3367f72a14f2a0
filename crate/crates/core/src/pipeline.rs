//! End-to-end configuration and in-memory stage drivers, from procedural
//! objects to illumination groups.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{build_groups, build_object_feature_set, AugmentConfig, DatasetError, FeatureBuildConfig, ImageGroup, StructureTensorDetector};
use crate::eval::{EvalConfig, HomographyConfig};
use crate::model::ExtractConfig;
use crate::render::IlluminationSweep;
use crate::scene::{
    align_pair, generate_scenes, make_procedural_object, FeatureObjectPair, ObjectSpec, PlacementConfig,
    RelightableObject, Scene, SceneError, ShapeKind, TextureKind,
};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectsConfig {
    pub count: usize,
    /// Object `i` uses `shapes[i % len]` and `textures[(i / shapes.len()) % len]`.
    pub shapes: Vec<ShapeKind>,
    pub textures: Vec<TextureKind>,
    pub size: f64,
    pub n_points: usize,
    pub texture_cells: u32,
}

impl Default for ObjectsConfig {
    fn default() -> Self {
        Self {
            count: 6,
            shapes: vec![ShapeKind::Cube, ShapeKind::Plane, ShapeKind::Cylinder],
            textures: vec![TextureKind::Checker, TextureKind::Voronoi, TextureKind::NoiseGradient],
            size: 1.0,
            n_points: 6000,
            texture_cells: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenesConfig {
    pub count: usize,
    pub objects_per_scene: (usize, usize),
    pub placement: PlacementConfig,
}

impl Default for ScenesConfig {
    fn default() -> Self {
        Self {
            count: 4,
            objects_per_scene: (2, 3),
            placement: PlacementConfig { half_extent: 0.9, max_overlap: 0.3, max_attempts: 500 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub metrics: EvalConfig,
    pub extract: ExtractConfig,
    /// Illumination seed of the held-out evaluation sweep.
    pub heldout_illum_seed: u64,
    /// View seed of the held-out evaluation renders.
    pub heldout_view_seed: u64,
    pub heldout_views: usize,
    pub homography: HomographyConfig,
    pub homography_pairs: usize,
    pub bench_frames: usize,
    pub bench_warmup: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            metrics: EvalConfig::default(),
            extract: ExtractConfig::default(),
            heldout_illum_seed: 1002,
            heldout_view_seed: 1001,
            heldout_views: 3,
            homography: HomographyConfig::default(),
            homography_pairs: 20,
            bench_frames: 100,
            bench_warmup: 10,
        }
    }
}

/// Checkpoint and snapshot cadence of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSchedule {
    pub checkpoint_every: usize,
    /// Evaluate on the first `snapshot_groups` training groups this often (0 = never).
    pub snapshot_every: usize,
    pub snapshot_groups: usize,
}

impl Default for RunSchedule {
    fn default() -> Self {
        Self { checkpoint_every: 100, snapshot_every: 100, snapshot_groups: 4 }
    }
}

/// Every stage's settings plus the global seed all stage seeds derive from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub objects: ObjectsConfig,
    pub features: FeatureBuildConfig,
    pub scenes: ScenesConfig,
    pub dataset: AugmentConfig,
    pub train: TrainConfig,
    pub schedule: RunSchedule,
    pub eval: EvalSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            objects: ObjectsConfig::default(),
            features: FeatureBuildConfig::default(),
            scenes: ScenesConfig::default(),
            dataset: AugmentConfig::default(),
            train: TrainConfig::default(),
            schedule: RunSchedule::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Seed of a named stage: the first 8 bytes of `sha256(seed ‖ stage)`.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl PipelineConfig {
    /// Config with every per-stage seed replaced by one derived from `seed`.
    pub fn with_derived_seeds(&self) -> Self {
        let mut c = self.clone();
        c.dataset.view_seed = stage_seed(self.seed, "views");
        c.dataset.illum_seed = stage_seed(self.seed, "illumination");
        c.dataset.label_seed = stage_seed(self.seed, "labels");
        c.eval.heldout_view_seed = stage_seed(self.seed, "heldout_views");
        c.eval.heldout_illum_seed = stage_seed(self.seed, "heldout_illumination");
        c.eval.homography.seed = stage_seed(self.seed, "ransac");
        c.train.seed = stage_seed(self.seed, "train");
        c
    }

    /// Render settings for the held-out evaluation set: a different
    /// illumination sweep (and view draw) over the same scenes.
    pub fn heldout_dataset(&self) -> AugmentConfig {
        AugmentConfig {
            n_views: self.eval.heldout_views,
            view_seed: self.eval.heldout_view_seed,
            illum_seed: self.eval.heldout_illum_seed,
            ..self.dataset.clone()
        }
    }
}

pub fn object_specs(cfg: &ObjectsConfig, seed: u64) -> Result<Vec<ObjectSpec>, SceneError> {
    if cfg.shapes.is_empty() || cfg.textures.is_empty() {
        return Err(SceneError::InvalidObject("need at least one shape and one texture".into()));
    }
    Ok((0..cfg.count)
        .map(|i| {
            let shape = cfg.shapes[i % cfg.shapes.len()];
            let texture = cfg.textures[(i / cfg.shapes.len()) % cfg.textures.len()];
            let mut s = ObjectSpec::new(format!("obj_{i:03}"), shape, texture, cfg.size, cfg.n_points, stage_seed(seed, &format!("object{i}")));
            s.texture_cells = cfg.texture_cells;
            s
        })
        .collect())
}

pub fn generate_objects(cfg: &ObjectsConfig, seed: u64) -> Result<Vec<(ObjectSpec, RelightableObject)>, SceneError> {
    object_specs(cfg, seed)?
        .into_par_iter()
        .map(|s| make_procedural_object(&s).map(|o| (s, o)))
        .collect()
}

/// Feature sets for every object, each aligned with its object.
pub fn build_pairs(objects: &[RelightableObject], cfg: &FeatureBuildConfig, seed: u64) -> Result<Vec<FeatureObjectPair>, DatasetError> {
    let detector = StructureTensorDetector::default();
    objects
        .par_iter()
        .map(|o| {
            let f = build_object_feature_set(o, &detector, cfg, stage_seed(seed, &o.object_id))?;
            Ok(align_pair(f, o.clone()))
        })
        .collect()
}

/// Training scenes, training groups, and held-out groups under a different illumination sweep.
pub struct Corpus {
    pub scenes: Vec<Scene>,
    pub sweep: IlluminationSweep,
    pub groups: Vec<ImageGroup>,
    pub heldout_sweep: IlluminationSweep,
    pub heldout: Vec<ImageGroup>,
}

/// Runs objects → features → scenes → renders entirely in memory.
pub fn build_corpus(cfg: &PipelineConfig) -> Result<Corpus, DatasetError> {
    let objects: Vec<RelightableObject> =
        generate_objects(&cfg.objects, stage_seed(cfg.seed, "objects"))?.into_iter().map(|(_, o)| o).collect();
    let pairs = build_pairs(&objects, &cfg.features, stage_seed(cfg.seed, "features"))?;
    let scenes = generate_scenes(&pairs, cfg.scenes.count, cfg.scenes.objects_per_scene, stage_seed(cfg.seed, "scenes"), &cfg.scenes.placement)?;
    let (sweep, groups) = build_groups(&scenes, &cfg.dataset)?;
    let (heldout_sweep, heldout) = build_groups(&scenes, &cfg.heldout_dataset())?;
    Ok(Corpus { scenes, sweep, groups, heldout_sweep, heldout })
}
