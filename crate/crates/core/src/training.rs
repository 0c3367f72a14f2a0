//! Self-supervised training over illumination groups.
//!
//! One step forwards every (or a subsample of the) illumination images of a
//! group, scores all logit maps against the group's shared label, pulls the
//! descriptor maps of the conditions together, pushes descriptors at distinct
//! label keypoints apart, and applies one Adam update.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{decode_heatmap_label, load_groups, DatasetError, ImageGroup};
use crate::eval::{evaluate_groups, EvalConfig, EvalError};
use crate::losses::{
    disparity_loss_grad, repeatability_loss_grad, similarity_loss_grad, total_loss, total_loss_partials, LossError,
    LossWeights,
};
use crate::model::descriptor::{
    normalize_coarse, normalize_coarse_backward, sample_descriptor, sample_descriptor_backward,
    upsample_normalize_backward,
};
use crate::model::conv::Chw;
use crate::model::{
    hwc_to_chw, Checkpoint, ExtractConfig, ExtractorNetwork, ModelError, NamedTensor, NetworkConfig,
    NetworkExtractor,
};
use crate::tensor::Hwc;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step}; diagnostics in {dump}")]
    NonFiniteLoss { step: usize, dump: String },
    #[error("io failure at {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl TrainError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), reason: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    NoSimilarity,
    NoDisparity,
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "no_similarity" => Ok(Self::NoSimilarity),
            "no_disparity" => Ok(Self::NoDisparity),
            _ => Err(format!("unknown ablation {s:?} (expected full, no_similarity or no_disparity)")),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::NoSimilarity => "no_similarity",
            Self::NoDisparity => "no_disparity",
        })
    }
}

/// Resolution at which descriptor maps are compared across conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityResolution {
    /// Bilinearly upsampled full-resolution unit maps.
    Full,
    /// Unit descriptors on the 1/8 cell grid.
    Coarse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub weights: LossWeights,
    pub steps: usize,
    /// Groups whose gradients are averaged per update.
    pub batch_groups: usize,
    pub learning_rate: f64,
    /// Cosine decay floor as a fraction of `learning_rate`.
    pub min_lr_fraction: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Groups with more conditions than this are subsampled.
    pub subsample_above: usize,
    /// Conditions per step after subsampling, brightest included.
    pub subsample_count: usize,
    pub similarity_resolution: SimilarityResolution,
    /// Cap on label keypoints per image entering the disparity loss.
    pub disparity_max_keypoints: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            weights: LossWeights::default(),
            steps: 2000,
            batch_groups: 1,
            learning_rate: 1e-3,
            min_lr_fraction: 0.05,
            warmup_steps: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            ablation: Ablation::Full,
            subsample_above: 6,
            subsample_count: 4,
            similarity_resolution: SimilarityResolution::Full,
            disparity_max_keypoints: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights.validate()?;
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.steps == 0 {
            return bad("steps must be > 0");
        }
        if self.batch_groups == 0 {
            return bad("batch_groups must be > 0");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) || !(0.0..=1.0).contains(&self.min_lr_fraction) {
            return bad("learning rate must be finite and ≥ 0, min_lr_fraction in [0,1]");
        }
        if self.subsample_count < 2 {
            return bad("subsample_count must be ≥ 2");
        }
        if self.disparity_max_keypoints < 2 {
            return bad("disparity_max_keypoints must be ≥ 2");
        }
        Ok(())
    }

    /// Weights after the ablation switches.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        match self.ablation {
            Ablation::Full => {}
            Ablation::NoSimilarity => w.lambda2 = 0.0,
            Ablation::NoDisparity => w.lambda3 = 0.0,
        }
        w
    }

    /// Learning rate at `step` (0-based): linear warmup, then cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.learning_rate * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let t = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = self.learning_rate * self.min_lr_fraction;
        floor + 0.5 * (self.learning_rate - floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Adam moments kept in f32 so a checkpoint captures the state exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
    pub t: u64,
}

impl Adam {
    pub fn new(network: &ExtractorNetwork) -> Self {
        Self { m: network.zero_grads(), v: network.zero_grads(), t: 0 }
    }

    pub fn update(&mut self, params: Vec<&mut [f32]>, grads: &[Vec<f32>], lr: f64, cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] as f64;
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.adam_eps);
                p[i] = (p[i] as f64 - step) as f32;
            }
        }
    }
}

/// Scalars logged for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub learning_rate: f64,
    pub repeatability_loss: f64,
    pub similarity_loss: f64,
    pub disparity_loss: f64,
    pub total: f64,
    /// Weights actually applied (ablations zero λ₂ or λ₃).
    pub weights: LossWeights,
    pub groups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: usize,
    pub repeatability: f64,
    pub location_error: f64,
    pub sp_mse: f64,
    pub sp_cs: f64,
    pub dp_mse: f64,
    pub dp_cs: f64,
}

/// One line of the JSON-lines training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Step(StepRecord),
    Eval(EvalSnapshot),
}

/// Loss values and parameter gradients for one group.
#[derive(Debug, Clone)]
pub struct GroupLoss {
    pub repeatability: f64,
    pub similarity: f64,
    pub disparity: f64,
    pub total: f64,
    pub grads: Vec<Vec<f32>>,
}

fn mix(seed: u64, a: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Group order for `epoch`: a pure function of `(seed, epoch, n)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64)));
    order
}

fn chw_to_hwc64(x: &Chw) -> Hwc<f64> {
    let n = x.h * x.w;
    let mut out = Hwc::zeros(x.h, x.w, x.c);
    for c in 0..x.c {
        for i in 0..n {
            out.data[i * x.c + c] = x.data[c * n + i] as f64;
        }
    }
    out
}

fn full_unit_map(coarse: &Chw, h: usize, w: usize) -> Hwc<f64> {
    let mut out = Hwc::zeros(h, w, coarse.c);
    for y in 0..h {
        for x in 0..w {
            out.pixel_mut(y, x).copy_from_slice(&sample_descriptor(coarse, x as f64, y as f64));
        }
    }
    out
}

fn to_chw(c: usize, h: usize, w: usize, d: Vec<f64>) -> Chw {
    Chw { c, h, w, data: d.into_iter().map(|v| v as f32).collect() }
}

/// Conditions used this step: all of them, or the brightest plus a random
/// subset when the group exceeds `subsample_above`.
pub fn select_conditions(group: &ImageGroup, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = group.images.len();
    if n <= cfg.subsample_above || n <= cfg.subsample_count {
        return (0..n).collect();
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| i != group.brightest).collect();
    rest.shuffle(rng);
    let mut chosen = vec![group.brightest];
    chosen.extend_from_slice(&rest[..cfg.subsample_count - 1]);
    chosen.sort_unstable();
    chosen
}

/// Forward, losses and backward for one group under `weights`.
pub fn group_loss(
    network: &ExtractorNetwork,
    group: &ImageGroup,
    cfg: &TrainConfig,
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<GroupLoss, TrainError> {
    let idx = select_conditions(group, cfg, rng);
    if idx.len() < 2 {
        return Err(TrainError::InvalidConfig(format!("group {}/{} has fewer than 2 images", group.scene_id, group.view_id)));
    }
    let outs: Vec<_> = idx
        .par_iter()
        .map(|&i| network.forward_raw(&group.images[i]))
        .collect::<Result<_, _>>()?;
    let (h, w) = (group.images[0].height, group.images[0].width);

    let logits: Vec<Hwc<f64>> = outs.iter().map(|(r, _)| chw_to_hwc64(&r.logits)).collect();
    let (lr, d_logits) = repeatability_loss_grad(&logits, &group.label)?;

    let coarse: Vec<&Chw> = outs.iter().map(|(r, _)| &r.coarse_descriptors).collect();
    let (c, hc, wc) = (coarse[0].c, coarse[0].h, coarse[0].w);
    let mut d_coarse: Vec<Vec<f64>> = coarse.iter().map(|x| vec![0.0; x.data.len()]).collect();

    let unit_maps: Vec<Hwc<f64>> = match cfg.similarity_resolution {
        SimilarityResolution::Coarse => coarse.iter().map(|x| normalize_coarse(x)).collect(),
        SimilarityResolution::Full => coarse.par_iter().map(|x| full_unit_map(x, h, w)).collect(),
    };
    let (li, d_unit) = similarity_loss_grad(&unit_maps)?;
    drop(unit_maps);
    if weights.lambda2 > 0.0 {
        let back: Vec<Vec<f64>> = coarse
            .par_iter()
            .zip(&d_unit)
            .map(|(x, g)| {
                let g = g.map(|v| v * weights.lambda2);
                match cfg.similarity_resolution {
                    SimilarityResolution::Coarse => normalize_coarse_backward(x, &g),
                    SimilarityResolution::Full => upsample_normalize_backward(x, &g),
                }
            })
            .collect();
        for (d, b) in d_coarse.iter_mut().zip(back) {
            d.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    let mut kps = decode_heatmap_label(&group.label);
    if kps.len() > cfg.disparity_max_keypoints {
        kps.shuffle(rng);
        kps.truncate(cfg.disparity_max_keypoints);
    }
    let descs: Vec<Vec<Vec<f64>>> =
        coarse.iter().map(|x| kps.iter().map(|p| sample_descriptor(x, p.x, p.y)).collect()).collect();
    let (ld, d_desc) = disparity_loss_grad(&descs);
    let (_, _, dld) = total_loss_partials(ld, weights);
    if weights.lambda3 > 0.0 && kps.len() >= 2 {
        for ((x, d), g) in coarse.iter().zip(&mut d_coarse).zip(&d_desc) {
            for (p, gk) in kps.iter().zip(g) {
                let scaled: Vec<f64> = gk.iter().map(|v| v * dld).collect();
                sample_descriptor_backward(x, p.x, p.y, &scaled, d);
            }
        }
    }

    let total = total_loss(lr, li, ld, weights);
    let per_image: Vec<Vec<Vec<f32>>> = outs
        .par_iter()
        .zip(d_logits.par_iter())
        .zip(d_coarse.into_par_iter())
        .map(|(((_, cache), dl), dc)| {
            let dl = hwc_to_chw(&dl.map(|v| v * weights.lambda1));
            network.backward(cache, dl, to_chw(c, hc, wc, dc))
        })
        .collect();
    let mut grads = network.zero_grads();
    for g in per_image {
        for (a, b) in grads.iter_mut().zip(g) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
    Ok(GroupLoss { repeatability: lr, similarity: li, disparity: ld, total, grads })
}

/// Network, optimizer state and step counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub network: ExtractorNetwork,
    pub adam: Adam,
    pub step: usize,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let network = ExtractorNetwork::new(config.network.clone(), mix(config.seed, 0x1717))?;
        Ok(Self::from_network(network, config))
    }

    pub fn from_network(network: ExtractorNetwork, config: TrainConfig) -> Self {
        let adam = Adam::new(&network);
        Self { network, adam, step: 0, config }
    }

    /// Groups visited by the step `step`, in training order.
    pub fn batch_indices(&self, step: usize, n_groups: usize) -> Vec<usize> {
        let b = self.config.batch_groups;
        (0..b)
            .map(|j| {
                let k = step * b + j;
                epoch_order(self.config.seed, k / n_groups, n_groups)[k % n_groups]
            })
            .collect()
    }

    /// One update on the given groups. On a non-finite loss or gradient the
    /// parameters are left untouched and a diagnostic dump is written to
    /// `dump_dir` (or the system temp dir).
    pub fn train_step(&mut self, groups: &[&ImageGroup], dump_dir: Option<&Path>) -> Result<StepRecord, TrainError> {
        let weights = self.config.effective_weights();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, 0x5EED_0000 + self.step as u64));
        let mut grads = self.network.zero_grads();
        let (mut lr, mut li, mut ld, mut total) = (0.0, 0.0, 0.0, 0.0);
        let nb = groups.len() as f64;
        for g in groups {
            let gl = group_loss(&self.network, g, &self.config, &weights, &mut rng)?;
            lr += gl.repeatability / nb;
            li += gl.similarity / nb;
            ld += gl.disparity / nb;
            total += gl.total / nb;
            for (a, b) in grads.iter_mut().zip(&gl.grads) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y / nb as f32);
            }
        }
        let ids: Vec<String> = groups.iter().map(|g| format!("{}/{}", g.scene_id, g.view_id)).collect();
        let finite = [lr, li, ld, total].iter().all(|v| v.is_finite()) && grads.iter().flatten().all(|v| v.is_finite());
        if !finite {
            let dir = dump_dir.map(Path::to_path_buf).unwrap_or_else(std::env::temp_dir);
            let path = dir.join(format!("nonfinite_step_{}.json", self.step));
            let grad_norm: f64 = grads.iter().flatten().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let dump = serde_json::json!({
                "step": self.step, "groups": ids, "repeatability_loss": lr.to_string(),
                "similarity_loss": li.to_string(), "disparity_loss": ld.to_string(), "total": total.to_string(),
                "grad_norm": grad_norm.to_string(), "params_finite": self.network.all_finite(),
            });
            std::fs::create_dir_all(&dir).map_err(|e| TrainError::io(&dir, e))?;
            std::fs::write(&path, serde_json::to_vec_pretty(&dump).expect("json"))
                .map_err(|e| TrainError::io(&path, e))?;
            return Err(TrainError::NonFiniteLoss { step: self.step, dump: path.display().to_string() });
        }
        let lr_now = self.config.lr_at(self.step);
        let cfg = self.config.clone();
        self.adam.update(self.network.params_mut(), &grads, lr_now, &cfg);
        let rec = StepRecord {
            step: self.step,
            learning_rate: lr_now,
            repeatability_loss: lr,
            similarity_loss: li,
            disparity_loss: ld,
            total,
            weights,
            groups: ids,
        };
        self.step += 1;
        Ok(rec)
    }

    /// Network parameters plus optimizer moments and step.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "step": self.step, "adam_t": self.adam.t, "train_config": self.config,
        });
        let mut ck = self.network.to_checkpoint(meta);
        let names = self.network.param_names();
        let shapes = self.network.param_shapes();
        for (kind, state) in [("m", &self.adam.m), ("v", &self.adam.v)] {
            for ((name, shape), data) in names.iter().zip(&shapes).zip(state) {
                ck.tensors.push(NamedTensor { name: format!("adam.{kind}.{name}"), shape: shape.clone(), data: data.clone() });
            }
        }
        ck
    }

    /// Restores a trainer written by [`Self::to_checkpoint`]. `config`
    /// replaces the stored one, so a run may be extended with more steps.
    pub fn from_checkpoint(ck: &Checkpoint, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let network = ExtractorNetwork::from_checkpoint(ck)?;
        if network.config != config.network {
            return Err(TrainError::InvalidConfig("checkpoint network differs from the configured one".into()));
        }
        let extra = &ck.metadata["extra"];
        let step = extra["step"].as_u64().ok_or_else(|| ModelError::Checkpoint("missing step".into()))? as usize;
        let t = extra["adam_t"].as_u64().ok_or_else(|| ModelError::Checkpoint("missing adam_t".into()))?;
        let mut adam = Adam::new(&network);
        for (kind, state) in [("m", &mut adam.m), ("v", &mut adam.v)] {
            for (name, dst) in network.param_names().iter().zip(state.iter_mut()) {
                let key = format!("adam.{kind}.{name}");
                let src = ck.get(&key).ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {key}")))?;
                if src.data.len() != dst.len() {
                    return Err(ModelError::Checkpoint(format!("tensor {key} has the wrong size")).into());
                }
                dst.copy_from_slice(&src.data);
            }
        }
        adam.t = t;
        Ok(Self { network, adam, step, config })
    }
}

/// Where and how often a training run writes its outputs.
#[derive(Debug, Clone, Default)]
pub struct LoopOptions<'a> {
    /// Receives `train_log.jsonl`, `checkpoint.rlck` and `final.rlck`.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint every this many steps (0 = final only).
    pub checkpoint_every: usize,
    /// Evaluate on `eval_groups` every this many steps (0 = never).
    pub eval_every: usize,
    pub eval_groups: &'a [ImageGroup],
    pub extract: ExtractConfig,
    pub eval: EvalConfig,
    /// Continue from this checkpoint instead of a fresh network.
    pub resume: Option<PathBuf>,
    /// Stop after this many steps in this call (for interruption tests).
    pub max_steps_this_call: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<EvalSnapshot>,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.rlck";
pub const FINAL_FILE: &str = "final.rlck";

/// Groups usable for training: at least two images and two labelled keypoints.
pub fn trainable(groups: &[ImageGroup]) -> Vec<&ImageGroup> {
    groups.iter().filter(|g| g.images.len() >= 2 && g.label.n_keypoints() >= 2).collect()
}

pub fn snapshot(network: &ExtractorNetwork, step: usize, groups: &[ImageGroup], opts: &LoopOptions) -> Result<EvalSnapshot, TrainError> {
    let ex = NetworkExtractor { network: network.clone(), config: opts.extract };
    let r = evaluate_groups(groups, &ex, &opts.eval)?;
    Ok(EvalSnapshot {
        step,
        repeatability: r.repeatability,
        location_error: r.location_error,
        sp_mse: r.similarity.sp_mse,
        sp_cs: r.similarity.sp_cs,
        dp_mse: r.similarity.dp_mse,
        dp_cs: r.similarity.dp_cs,
    })
}

fn read_log(path: &Path, before_step: usize) -> Result<Vec<RecordLine>, TrainError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let f = File::open(path).map_err(|e| TrainError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| TrainError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordLine = serde_json::from_str(&line).map_err(|e| TrainError::io(path, e))?;
        // step records are indexed before the update, snapshots after it
        let keep = match &rec {
            RecordLine::Step(r) => r.step < before_step,
            RecordLine::Eval(e) => e.step <= before_step,
        };
        if keep {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Trains on `groups` for `config.steps` updates. Group order per epoch is a
/// seeded shuffle, so a run is a pure function of config, data and seed.
pub fn train_loop(groups: &[ImageGroup], config: &TrainConfig, opts: &LoopOptions) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let usable = trainable(groups);
    if usable.is_empty() {
        return Err(TrainError::InvalidConfig("no group has ≥2 images and ≥2 labelled keypoints".into()));
    }
    let mut trainer = match &opts.resume {
        Some(p) => Trainer::from_checkpoint(&Checkpoint::read(p)?, config.clone())?,
        None => Trainer::new(config.clone())?,
    };
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut log = None;
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let path = dir.join(LOG_FILE);
        let kept = if opts.resume.is_some() { read_log(&path, trainer.step)? } else { Vec::new() };
        let mut w = BufWriter::new(File::create(&path).map_err(|e| TrainError::io(&path, e))?);
        for r in kept {
            match &r {
                RecordLine::Step(s) => records.push(s.clone()),
                RecordLine::Eval(e) => snapshots.push(e.clone()),
            }
            writeln!(w, "{}", serde_json::to_string(&r).expect("json")).map_err(|e| TrainError::io(&path, e))?;
        }
        log = Some((path, w));
    }
    let emit = |line: RecordLine, log: &mut Option<(PathBuf, BufWriter<File>)>| -> Result<(), TrainError> {
        if let Some((path, w)) = log {
            writeln!(w, "{}", serde_json::to_string(&line).expect("json")).map_err(|e| TrainError::io(path, e))?;
            w.flush().map_err(|e| TrainError::io(path, e))?;
        }
        Ok(())
    };
    let want_eval = opts.eval_every > 0 && !opts.eval_groups.is_empty();
    if want_eval && trainer.step == 0 && snapshots.is_empty() {
        let s = snapshot(&trainer.network, 0, opts.eval_groups, opts)?;
        emit(RecordLine::Eval(s.clone()), &mut log)?;
        snapshots.push(s);
    }
    let mut done_this_call = 0;
    while trainer.step < config.steps {
        if opts.max_steps_this_call.is_some_and(|m| done_this_call >= m) {
            break;
        }
        let batch: Vec<&ImageGroup> = trainer.batch_indices(trainer.step, usable.len()).into_iter().map(|i| usable[i]).collect();
        let rec = trainer.train_step(&batch, opts.out_dir.as_deref())?;
        log::debug!("step {} total {:.4}", rec.step, rec.total);
        emit(RecordLine::Step(rec.clone()), &mut log)?;
        records.push(rec);
        done_this_call += 1;
        let s = trainer.step;
        if want_eval && (s % opts.eval_every == 0 || s == config.steps) {
            let snap = snapshot(&trainer.network, s, opts.eval_groups, opts)?;
            emit(RecordLine::Eval(snap.clone()), &mut log)?;
            snapshots.push(snap);
        }
        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && s % opts.checkpoint_every == 0 {
                trainer.to_checkpoint().write(&dir.join(CHECKPOINT_FILE))?;
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        trainer.to_checkpoint().write(&dir.join(CHECKPOINT_FILE))?;
        if trainer.step >= config.steps {
            trainer.to_checkpoint().write(&dir.join(FINAL_FILE))?;
        }
    }
    Ok(TrainOutcome { trainer, records, snapshots })
}

/// Loads a complete, labelled dataset and trains on it.
pub fn train_from_dataset(root: &Path, config: &TrainConfig, opts: &LoopOptions) -> Result<TrainOutcome, TrainError> {
    let (manifest, groups) = load_groups(root)?;
    if !manifest.complete || !manifest.labels_complete {
        return Err(DatasetError::Incomplete(format!("{}: dataset is not complete", root.display())).into());
    }
    train_loop(&groups, config, opts)
}
