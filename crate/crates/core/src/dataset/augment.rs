//! Illumination-swept render groups and the on-disk dataset.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! renders/<scene>/<view>/<illum>.png
//! depth/<scene>/<view>.f32
//! labels/<scene>/<view>.json
//! ```

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::labels::{encode_heatmap_label, project_feature_set, HeatmapLabel, ProjectedKeypoint};
use super::views::{sample_views, ViewConfig};
use super::DatasetError;
use crate::geometry::{CameraView, Intrinsics};
use crate::raster::{self, DepthImage, GrayImage};
use crate::render::{render_scene_multi, sample_illumination_sweep, IlluminationSweep, RenderOptions, SweepRanges};
use crate::scene::{Scene, SceneDescription};

/// Views per scene used for the original full-scale corpus.
pub const FULL_SCALE_VIEWS: usize = 300;
/// Illumination conditions per view used for the original full-scale corpus.
pub const FULL_SCALE_ILLUM: usize = 13;

const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub intrinsics: Intrinsics,
    pub n_views: usize,
    pub views: ViewConfig,
    pub n_illum: usize,
    pub sweep: SweepRanges,
    /// Relative depth disagreement above which a feature counts as occluded.
    pub occlusion_tolerance: f64,
    pub view_seed: u64,
    pub illum_seed: u64,
    pub label_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::from_fov(160, 120, 60.0).expect("valid default intrinsics"),
            n_views: 10,
            views: ViewConfig::default(),
            n_illum: 5,
            sweep: SweepRanges::default(),
            occlusion_tolerance: 0.01,
            view_seed: 1,
            illum_seed: 2,
            label_seed: 3,
        }
    }
}

impl AugmentConfig {
    fn validate(&self) -> Result<(), DatasetError> {
        self.intrinsics.validate()?;
        if self.n_views == 0 || self.n_illum < 2 {
            return Err(DatasetError::InvalidConfig("need ≥1 view and ≥2 illumination conditions".into()));
        }
        if self.intrinsics.width % 8 != 0 || self.intrinsics.height % 8 != 0 {
            return Err(DatasetError::InvalidConfig("image size must be divisible by 8".into()));
        }
        Ok(())
    }
}

/// One (scene, view) with its renders under every illumination condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGroup {
    pub scene_id: String,
    pub view_id: String,
    pub view: CameraView,
    pub images: Vec<GrayImage>,
    pub condition_ids: Vec<String>,
    /// Index of the brightest condition in `images`.
    pub brightest: usize,
    pub depth: DepthImage,
    pub keypoints: Vec<ProjectedKeypoint>,
    pub label: HeatmapLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub scene_id: String,
    pub view_id: String,
    pub view: CameraView,
    /// Paths relative to the dataset root, one per condition.
    pub images: Vec<String>,
    pub depth: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_scenes: usize,
    pub n_views: usize,
    pub n_illum: usize,
    pub full_scale_views: usize,
    pub full_scale_illum: usize,
    pub config: AugmentConfig,
    pub scenes: Vec<SceneDescription>,
    pub illumination: IlluminationSweep,
    pub groups: Vec<GroupEntry>,
    pub config_hash: String,
    pub renderer_hash: String,
    pub complete: bool,
    pub labels_complete: bool,
    pub failures: Vec<String>,
}

impl DatasetManifest {
    /// Cardinality checks that need nothing but the manifest.
    pub fn check_counts(&self) -> Result<(), DatasetError> {
        if self.groups.len() != self.n_scenes * self.n_views {
            return Err(DatasetError::Incomplete(format!(
                "{} groups, expected {}",
                self.groups.len(),
                self.n_scenes * self.n_views
            )));
        }
        if let Some(g) = self.groups.iter().find(|g| g.images.len() != self.n_illum) {
            return Err(DatasetError::Incomplete(format!("group {}/{} lists {} images", g.scene_id, g.view_id, g.images.len())));
        }
        Ok(())
    }

    pub fn read(root: &Path) -> Result<Self, DatasetError> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| DatasetError::io(&path, e))
    }

    fn write(&self, root: &Path) -> Result<(), DatasetError> {
        let path = root.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(|e| DatasetError::io(&path, e))?;
        std::fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelFile {
    scene_id: String,
    view_id: String,
    keypoints: Vec<ProjectedKeypoint>,
    heatmap: HeatmapLabel,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn mix(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn renderer_hash() -> String {
    sha256_hex(format!("{}:{:?}", env!("CARGO_PKG_VERSION"), RenderOptions::default()).as_bytes())
}

fn config_hash(cfg: &AugmentConfig, scenes: &[SceneDescription]) -> String {
    let json = serde_json::to_vec(&(cfg, scenes)).expect("config serializes");
    sha256_hex(&json)
}

fn views_for(scene: &Scene, index: usize, cfg: &AugmentConfig) -> Result<Vec<CameraView>, DatasetError> {
    let (c, r) = scene.bounding_sphere();
    sample_views(&c, r, &cfg.intrinsics, cfg.n_views, mix(cfg.view_seed, index), &cfg.views)
}

fn view_id(i: usize) -> String {
    format!("view_{i:03}")
}

fn label_group(
    scene: &Scene,
    view: &CameraView,
    depth: &DepthImage,
    group_index: usize,
    cfg: &AugmentConfig,
) -> Result<(Vec<ProjectedKeypoint>, HeatmapLabel), DatasetError> {
    let k = &cfg.intrinsics;
    let kps = project_feature_set(&scene.all_features(), view, k, depth, cfg.occlusion_tolerance);
    let px: Vec<_> = kps.iter().map(|p| p.pixel).collect();
    let label = encode_heatmap_label(&px, k.height as usize, k.width as usize, mix(cfg.label_seed, group_index))?;
    Ok((kps, label))
}

/// Builds every group in memory. Produces exactly what [`load_groups`] reads
/// back from a dataset written by [`augment_dataset`] with the same inputs.
pub fn build_groups(scenes: &[Scene], cfg: &AugmentConfig) -> Result<(IlluminationSweep, Vec<ImageGroup>), DatasetError> {
    cfg.validate()?;
    let sweep = sample_illumination_sweep(cfg.n_illum, cfg.illum_seed, &cfg.sweep)?;
    let jobs = jobs(scenes, cfg)?;
    let groups = jobs
        .par_iter()
        .enumerate()
        .map(|(gi, (si, vi, view))| {
            let scene = &scenes[*si];
            let outs = render_scene_multi(scene, view, &cfg.intrinsics, &sweep.conditions, &RenderOptions::default())?;
            let depth = outs[0].depth.clone();
            let (keypoints, label) = label_group(scene, view, &depth, gi, cfg)?;
            Ok(ImageGroup {
                scene_id: scene.scene_id.clone(),
                view_id: view_id(*vi),
                view: *view,
                images: outs.iter().map(|o| o.gray()).collect(),
                condition_ids: sweep.conditions.iter().map(|c| c.condition_id.clone()).collect(),
                brightest: sweep.brightest,
                depth,
                keypoints,
                label,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok((sweep, groups))
}

fn jobs(scenes: &[Scene], cfg: &AugmentConfig) -> Result<Vec<(usize, usize, CameraView)>, DatasetError> {
    if scenes.is_empty() {
        return Err(DatasetError::InvalidConfig("no scenes".into()));
    }
    let mut jobs = Vec::new();
    for (si, s) in scenes.iter().enumerate() {
        for (vi, v) in views_for(s, si, cfg)?.into_iter().enumerate() {
            jobs.push((si, vi, v));
        }
    }
    Ok(jobs)
}

fn create_parent(path: &Path) -> Result<(), DatasetError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| DatasetError::io(p, e))?;
    }
    Ok(())
}

/// Renders every (scene, view, condition) and writes images and depth maps.
/// The manifest is written last; failed groups are listed and the manifest is
/// marked incomplete.
pub fn render_stage(scenes: &[Scene], cfg: &AugmentConfig, root: &Path) -> Result<DatasetManifest, DatasetError> {
    cfg.validate()?;
    let sweep = sample_illumination_sweep(cfg.n_illum, cfg.illum_seed, &cfg.sweep)?;
    let jobs = jobs(scenes, cfg)?;
    std::fs::create_dir_all(root).map_err(|e| DatasetError::io(root, e))?;
    let results: Vec<Result<GroupEntry, String>> = jobs
        .par_iter()
        .map(|(si, vi, view)| {
            let scene = &scenes[*si];
            let vid = view_id(*vi);
            let run = || -> Result<GroupEntry, DatasetError> {
                let outs = render_scene_multi(scene, view, &cfg.intrinsics, &sweep.conditions, &RenderOptions::default())?;
                let mut images = Vec::with_capacity(outs.len());
                for (o, c) in outs.iter().zip(&sweep.conditions) {
                    let rel = format!("renders/{}/{}/{}.png", scene.scene_id, vid, c.condition_id);
                    let path = root.join(&rel);
                    create_parent(&path)?;
                    raster::write_png_rgb8(&path, o.rgb.width, o.rgb.height, &o.rgb8())
                        .map_err(|e| DatasetError::io(&path, e))?;
                    images.push(rel);
                }
                let depth = format!("depth/{}/{}.f32", scene.scene_id, vid);
                let dpath = root.join(&depth);
                create_parent(&dpath)?;
                raster::write_depth(&dpath, &outs[0].depth).map_err(|e| DatasetError::io(&dpath, e))?;
                Ok(GroupEntry {
                    scene_id: scene.scene_id.clone(),
                    view_id: vid.clone(),
                    view: *view,
                    images,
                    depth,
                    label: format!("labels/{}/{}.json", scene.scene_id, vid),
                })
            };
            run().map_err(|e| format!("{}/{}: {e}", scene.scene_id, vid))
        })
        .collect();
    let mut groups = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(g) => groups.push(g),
            Err(e) => failures.push(e),
        }
    }
    let descriptions: Vec<SceneDescription> = scenes.iter().map(Scene::description).collect();
    let manifest = DatasetManifest {
        n_scenes: scenes.len(),
        n_views: cfg.n_views,
        n_illum: cfg.n_illum,
        full_scale_views: FULL_SCALE_VIEWS,
        full_scale_illum: FULL_SCALE_ILLUM,
        config: cfg.clone(),
        config_hash: config_hash(cfg, &descriptions),
        scenes: descriptions,
        illumination: sweep,
        groups,
        renderer_hash: renderer_hash(),
        complete: failures.is_empty(),
        labels_complete: false,
        failures,
    };
    manifest.write(root)?;
    if !manifest.complete {
        return Err(DatasetError::Incomplete(root.display().to_string()));
    }
    Ok(manifest)
}

/// Projects scene features into every rendered view and writes label files.
/// Requires a complete render stage; rewrites the manifest last.
pub fn label_stage(scenes: &[Scene], root: &Path) -> Result<DatasetManifest, DatasetError> {
    let mut manifest = DatasetManifest::read(root)?;
    if !manifest.complete {
        return Err(DatasetError::Incomplete(root.display().to_string()));
    }
    let cfg = manifest.config.clone();
    let results: Vec<Result<(), String>> = manifest
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let run = || -> Result<(), DatasetError> {
                let scene = scenes
                    .iter()
                    .find(|s| s.scene_id == g.scene_id)
                    .ok_or_else(|| DatasetError::InvalidConfig(format!("scene {} not supplied", g.scene_id)))?;
                let dpath = root.join(&g.depth);
                let depth = raster::read_depth(&dpath).map_err(|e| DatasetError::io(&dpath, e))?;
                let (keypoints, heatmap) = label_group(scene, &g.view, &depth, gi, &cfg)?;
                let file = LabelFile { scene_id: g.scene_id.clone(), view_id: g.view_id.clone(), keypoints, heatmap };
                let lpath = root.join(&g.label);
                create_parent(&lpath)?;
                let text = serde_json::to_string(&file).map_err(|e| DatasetError::io(&lpath, e))?;
                std::fs::write(&lpath, text).map_err(|e| DatasetError::io(&lpath, e))
            };
            run().map_err(|e| format!("{}/{}: {e}", g.scene_id, g.view_id))
        })
        .collect();
    let failures: Vec<String> = results.into_iter().filter_map(Result::err).collect();
    manifest.labels_complete = failures.is_empty();
    manifest.failures = failures;
    manifest.write(root)?;
    if !manifest.labels_complete {
        return Err(DatasetError::Incomplete(root.display().to_string()));
    }
    Ok(manifest)
}

/// Render stage followed by the label stage.
pub fn augment_dataset(scenes: &[Scene], cfg: &AugmentConfig, root: &Path) -> Result<DatasetManifest, DatasetError> {
    render_stage(scenes, cfg, root)?;
    label_stage(scenes, root)
}

/// Reads every group of a complete dataset.
pub fn load_groups(root: &Path) -> Result<(DatasetManifest, Vec<ImageGroup>), DatasetError> {
    let manifest = DatasetManifest::read(root)?;
    if !manifest.complete || !manifest.labels_complete {
        return Err(DatasetError::Incomplete(root.display().to_string()));
    }
    manifest.check_counts()?;
    let sweep = &manifest.illumination;
    let groups = manifest
        .groups
        .par_iter()
        .map(|g| {
            let images = g
                .images
                .iter()
                .map(|rel| {
                    let p: PathBuf = root.join(rel);
                    let (w, h, rgb) = raster::read_png_rgb8(&p).map_err(|e| DatasetError::io(&p, e))?;
                    Ok(raster::gray_from_rgb8(w, h, &rgb))
                })
                .collect::<Result<Vec<_>, DatasetError>>()?;
            let dpath = root.join(&g.depth);
            let depth = raster::read_depth(&dpath).map_err(|e| DatasetError::io(&dpath, e))?;
            let lpath = root.join(&g.label);
            let text = std::fs::read_to_string(&lpath).map_err(|e| DatasetError::io(&lpath, e))?;
            let label: LabelFile = serde_json::from_str(&text).map_err(|e| DatasetError::io(&lpath, e))?;
            Ok(ImageGroup {
                scene_id: g.scene_id.clone(),
                view_id: g.view_id.clone(),
                view: g.view,
                images,
                condition_ids: sweep.conditions.iter().map(|c| c.condition_id.clone()).collect(),
                brightest: sweep.brightest,
                depth,
                keypoints: label.keypoints,
                label: label.heatmap,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok((manifest, groups))
}
