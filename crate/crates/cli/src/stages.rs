//! Stage commands. Each stage writes a stamp whose key hashes its config and
//! its upstream stamps; a matching stamp means the outputs are up to date.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use relite_core::dataset::{
    augment_dataset, label_stage, load_groups, render_stage, warp_image, HomographySampler, ImageGroup,
};
use relite_core::eval::{
    evaluate_groups, format_ablation_table, format_detection_table, homography_correctness, runtime_benchmark,
    EvalReport, HomographyPair, HomographyReport,
};
use relite_core::model::{Checkpoint, ExtractorNetwork, NetworkExtractor};
use relite_core::pipeline::{build_pairs, generate_objects, stage_seed, PipelineConfig};
use relite_core::scene::io::{read_features, read_json, read_object, write_features, write_json, write_object};
use relite_core::scene::{align_pair, generate_scenes, FeatureObjectPair, Scene, SceneDescription};
use relite_core::training::{train_loop, Ablation, LoopOptions, Trainer, CHECKPOINT_FILE, FINAL_FILE, LOG_FILE};

use crate::{plots, CliError};

pub const ABLATIONS: [Ablation; 3] = [Ablation::Full, Ablation::NoSimilarity, Ablation::NoDisparity];

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Outcome {
    pub stage: String,
    /// `done` or `up_to_date`.
    pub status: String,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stamp {
    stage: String,
    key: String,
}

fn hash_parts(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("json")
}

fn read_stamp(path: &Path) -> Option<Stamp> {
    read_json(path).ok()
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Self {
        Self { cfg: cfg.with_derived_seeds(), out }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn objects_dir(&self) -> PathBuf {
        self.dir("objects")
    }
    fn scenes_dir(&self) -> PathBuf {
        self.dir("scenes")
    }
    fn dataset_dir(&self) -> PathBuf {
        self.dir("dataset")
    }
    fn heldout_dir(&self) -> PathBuf {
        self.dir("heldout")
    }
    fn reports_dir(&self) -> PathBuf {
        self.dir("reports")
    }
    fn run_dir(&self, a: Ablation) -> PathBuf {
        self.dir("runs").join(a.to_string())
    }

    fn stamp_file(&self, stage: &str) -> PathBuf {
        self.dir("stamps").join(format!("{stage}.json"))
    }

    /// Key of an upstream stage, or a missing-upstream error.
    fn upstream(&self, stage: &str, needs: &str) -> Result<String, CliError> {
        read_stamp(&self.stamp_file(needs))
            .map(|s| s.key)
            .ok_or_else(|| CliError::MissingUpstream { stage: stage.into(), needs: needs.into() })
    }

    fn is_current(&self, stage: &str, key: &str) -> bool {
        read_stamp(&self.stamp_file(stage)).is_some_and(|s| s.key == key)
    }

    fn finish(&self, stage: &str, key: String, outputs: Vec<PathBuf>) -> Result<Outcome, CliError> {
        write_json(&self.stamp_file(stage), &Stamp { stage: stage.into(), key }).map_err(|e| CliError::stage(stage, e))?;
        Ok(Outcome { stage: stage.into(), status: "done".into(), outputs: outputs.iter().map(|p| p.display().to_string()).collect() })
    }
}

fn up_to_date(stage: &str) -> Outcome {
    log::info!("{stage}: outputs are up to date");
    Outcome { stage: stage.into(), status: "up_to_date".into(), outputs: Vec::new() }
}

fn objects_key(ctx: &Ctx) -> String {
    let c = &ctx.cfg;
    hash_parts(&["gen-objects".into(), c.seed.to_string(), json(&c.objects), json(&c.features)])
}

pub fn gen_objects(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "gen-objects";
    let key = objects_key(ctx);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE, e);
    let dir = ctx.objects_dir();
    let objs = generate_objects(&ctx.cfg.objects, stage_seed(ctx.cfg.seed, "objects")).map_err(|e| err(&e))?;
    for (spec, o) in &objs {
        write_object(&dir, o, Some(spec)).map_err(|e| err(&e))?;
    }
    let objects: Vec<_> = objs.into_iter().map(|(_, o)| o).collect();
    let pairs = build_pairs(&objects, &ctx.cfg.features, stage_seed(ctx.cfg.seed, "features")).map_err(|e| err(&e))?;
    for p in &pairs {
        write_features(&dir.join("features").join(format!("{}.json", p.pair_id)), &p.features).map_err(|e| err(&e))?;
        log::info!("{}: {} points, {} features", p.pair_id, p.object.points.len(), p.features.len());
    }
    let ids: Vec<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();
    write_json(&dir.join("index.json"), &ids).map_err(|e| err(&e))?;
    ctx.finish(STAGE, key, vec![dir])
}

fn load_pairs(ctx: &Ctx, stage: &str) -> Result<Vec<FeatureObjectPair>, CliError> {
    let dir = ctx.objects_dir();
    let ids: Vec<String> = read_json(&dir.join("index.json")).map_err(|e| CliError::stage(stage, e))?;
    ids.iter()
        .map(|id| {
            let o = read_object(&dir, id).map_err(|e| CliError::stage(stage, e))?;
            let f = read_features(&dir.join("features").join(format!("{id}.json"))).map_err(|e| CliError::stage(stage, e))?;
            Ok(align_pair(f, o))
        })
        .collect()
}

pub fn gen_scenes(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "gen-scenes";
    let up = ctx.upstream(STAGE, "gen-objects")?;
    let key = hash_parts(&[STAGE.into(), up, json(&ctx.cfg.scenes)]);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let pairs = load_pairs(ctx, STAGE)?;
    let s = &ctx.cfg.scenes;
    let scenes = generate_scenes(&pairs, s.count, s.objects_per_scene, stage_seed(ctx.cfg.seed, "scenes"), &s.placement)
        .map_err(|e| CliError::stage(STAGE, e))?;
    let dir = ctx.scenes_dir();
    let mut ids = Vec::new();
    for sc in &scenes {
        write_json(&dir.join(format!("{}.json", sc.scene_id)), &sc.description()).map_err(|e| CliError::stage(STAGE, e))?;
        ids.push(sc.scene_id.clone());
    }
    write_json(&dir.join("index.json"), &ids).map_err(|e| CliError::stage(STAGE, e))?;
    ctx.finish(STAGE, key, vec![dir])
}

fn load_scenes(ctx: &Ctx, stage: &str) -> Result<Vec<Scene>, CliError> {
    let pairs = load_pairs(ctx, stage)?;
    let dir = ctx.scenes_dir();
    let ids: Vec<String> = read_json(&dir.join("index.json")).map_err(|e| CliError::stage(stage, e))?;
    ids.iter()
        .map(|id| {
            let d: SceneDescription = read_json(&dir.join(format!("{id}.json"))).map_err(|e| CliError::stage(stage, e))?;
            d.resolve(&pairs).map_err(|e| CliError::stage(stage, e))
        })
        .collect()
}

pub fn render(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "render";
    let up = ctx.upstream(STAGE, "gen-scenes")?;
    let key = hash_parts(&[STAGE.into(), up, json(&ctx.cfg.dataset)]);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let scenes = load_scenes(ctx, STAGE)?;
    let m = render_stage(&scenes, &ctx.cfg.dataset, &ctx.dataset_dir()).map_err(|e| CliError::stage(STAGE, e))?;
    log::info!("rendered {} groups of {} images", m.groups.len(), m.n_illum);
    ctx.finish(STAGE, key, vec![ctx.dataset_dir().join("manifest.json")])
}

pub fn labels(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "labels";
    let up = ctx.upstream(STAGE, "render")?;
    let key = hash_parts(&[STAGE.into(), up]);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let scenes = load_scenes(ctx, STAGE)?;
    label_stage(&scenes, &ctx.dataset_dir()).map_err(|e| CliError::stage(STAGE, e))?;
    ctx.finish(STAGE, key, vec![ctx.dataset_dir().join("labels")])
}

fn train_key(ctx: &Ctx, up: String) -> String {
    hash_parts(&["train".into(), up, json(&ctx.cfg.train), json(&ctx.cfg.schedule), json(&ctx.cfg.eval.extract), json(&ctx.cfg.eval.metrics)])
}

pub fn train(ctx: &Ctx) -> Result<Outcome, CliError> {
    let ab = ctx.cfg.train.ablation;
    let stage = format!("train-{ab}");
    let up = ctx.upstream(&stage, "labels")?;
    let key = train_key(ctx, up);
    if ctx.is_current(&stage, &key) {
        return Ok(up_to_date(&stage));
    }
    let err = |e: &dyn std::fmt::Display| CliError::stage(&stage, e);
    let run = ctx.run_dir(ab);
    let pending = run.join("pending.json");
    // an interrupted run with the same key continues from its checkpoint
    let resume = match read_stamp(&pending) {
        Some(s) if s.key == key && run.join(CHECKPOINT_FILE).exists() => Some(run.join(CHECKPOINT_FILE)),
        _ => {
            if run.exists() {
                std::fs::remove_dir_all(&run).map_err(|e| err(&e))?;
            }
            None
        }
    };
    write_json(&pending, &Stamp { stage: stage.clone(), key: key.clone() }).map_err(|e| err(&e))?;
    let (_, groups) = load_groups(&ctx.dataset_dir()).map_err(|e| err(&e))?;
    let sched = &ctx.cfg.schedule;
    let snap: Vec<ImageGroup> = groups.iter().take(sched.snapshot_groups).cloned().collect();
    let opts = LoopOptions {
        out_dir: Some(run.clone()),
        checkpoint_every: sched.checkpoint_every,
        eval_every: sched.snapshot_every,
        eval_groups: &snap,
        extract: ctx.cfg.eval.extract,
        eval: ctx.cfg.eval.metrics,
        resume,
        max_steps_this_call: None,
    };
    let out = train_loop(&groups, &ctx.cfg.train, &opts).map_err(|e| err(&e))?;
    if let Some(last) = out.records.last() {
        log::info!("{stage}: {} steps, final total loss {:.4}", out.trainer.step, last.total);
    }
    std::fs::remove_file(&pending).map_err(|e| err(&e))?;
    ctx.finish(&stage, key, vec![run.join(FINAL_FILE), run.join(LOG_FILE)])
}

/// Trained variants with a current stamp, plus their keys.
fn trained_runs(ctx: &Ctx) -> Vec<(Ablation, String)> {
    ABLATIONS
        .iter()
        .filter_map(|&a| {
            let s = read_stamp(&ctx.stamp_file(&format!("train-{a}")))?;
            ctx.run_dir(a).join(FINAL_FILE).exists().then_some((a, s.key))
        })
        .collect()
}

fn load_network(ctx: &Ctx, a: Ablation, stage: &str) -> Result<ExtractorNetwork, CliError> {
    let ck = Checkpoint::read(&ctx.run_dir(a).join(FINAL_FILE)).map_err(|e| CliError::stage(stage, e))?;
    ExtractorNetwork::from_checkpoint(&ck).map_err(|e| CliError::stage(stage, e))
}

fn random_init(ctx: &Ctx, stage: &str) -> Result<ExtractorNetwork, CliError> {
    Ok(Trainer::new(ctx.cfg.train.clone()).map_err(|e| CliError::stage(stage, e))?.network)
}

/// Brightest image of a group against another condition warped by a sampled homography.
pub fn homography_pairs(groups: &[ImageGroup], n: usize, seed: u64) -> Result<Vec<HomographyPair>, CliError> {
    let sampler = HomographySampler::default();
    (0..n.min(groups.len() * 4))
        .map(|i| {
            let g = &groups[i % groups.len()];
            let other = (g.brightest + 1 + i / groups.len()) % g.images.len();
            let a = g.images[g.brightest].clone();
            let h = sampler.sample(a.width, a.height, seed, i + 1);
            let b = warp_image(&g.images[other], &h).map_err(|e| CliError::stage("eval", e))?;
            Ok(HomographyPair { image_a: a, image_b: b, h_ab: h })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub report: EvalReport,
    pub homography: HomographyReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalFile {
    pub condition_ids: Vec<String>,
    pub heldout_groups: usize,
    pub models: Vec<ModelReport>,
}

pub fn eval(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "eval";
    let scenes_key = ctx.upstream(STAGE, "gen-scenes")?;
    ctx.upstream(STAGE, "labels")?;
    let runs = trained_runs(ctx);
    if runs.is_empty() {
        return Err(CliError::MissingUpstream { stage: STAGE.into(), needs: "train".into() });
    }
    let heldout_cfg = ctx.cfg.heldout_dataset();
    let heldout_key = hash_parts(&["heldout".into(), scenes_key, json(&heldout_cfg)]);
    let mut parts = vec![STAGE.to_string(), heldout_key.clone(), json(&ctx.cfg.eval), json(&ctx.cfg.train)];
    parts.extend(runs.iter().map(|(a, k)| format!("{a}:{k}")));
    let key = hash_parts(&parts);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE, e);
    if !ctx.is_current("heldout", &heldout_key) {
        let scenes = load_scenes(ctx, STAGE)?;
        augment_dataset(&scenes, &heldout_cfg, &ctx.heldout_dir()).map_err(|e| err(&e))?;
        ctx.finish("heldout", heldout_key, vec![])?;
    }
    let (manifest, groups) = load_groups(&ctx.heldout_dir()).map_err(|e| err(&e))?;
    let pairs = homography_pairs(&groups, ctx.cfg.eval.homography_pairs, ctx.cfg.eval.homography.seed)?;
    let mut models = vec![("random_init".to_string(), random_init(ctx, STAGE)?)];
    for (a, _) in &runs {
        models.push((a.to_string(), load_network(ctx, *a, STAGE)?));
    }
    let mut reports = Vec::new();
    for (name, network) in models {
        let ex = NetworkExtractor { network, config: ctx.cfg.eval.extract };
        let report = evaluate_groups(&groups, &ex, &ctx.cfg.eval.metrics).map_err(|e| err(&e))?;
        let homography = homography_correctness(&pairs, &ex, &ctx.cfg.eval.homography).map_err(|e| err(&e))?;
        log::info!("{name}: repeatability {:.3}, homography correctness {:.3}", report.repeatability, homography.correctness);
        reports.push(ModelReport { name, report, homography });
    }
    let file = EvalFile {
        condition_ids: manifest.illumination.conditions.iter().map(|c| c.condition_id.clone()).collect(),
        heldout_groups: groups.len(),
        models: reports,
    };
    let dir = ctx.reports_dir();
    write_json(&dir.join("eval.json"), &file).map_err(|e| err(&e))?;
    let rows: Vec<(&str, &EvalReport)> = file.models.iter().map(|m| (m.name.as_str(), &m.report)).collect();
    let mut t1 = format_detection_table(&rows);
    t1 += &format!("\nrepeatability and location error at ε = {} px\n\nhomography correctness at ε = {} px:\n", ctx.cfg.eval.metrics.epsilon, ctx.cfg.eval.homography.epsilon);
    for m in &file.models {
        t1 += &format!("  {:<22} {:.3}\n", m.name, m.homography.correctness);
    }
    let trained: Vec<(&str, &EvalReport)> = rows.iter().filter(|(n, _)| *n != "random_init").copied().collect();
    let t2 = format_ablation_table(&trained);
    std::fs::write(dir.join("table1.txt"), &t1).map_err(|e| err(&e))?;
    std::fs::write(dir.join("table2.txt"), &t2).map_err(|e| err(&e))?;
    crate::out(&format!("{t1}\n{t2}"));
    ctx.finish(STAGE, key, vec![dir.join("eval.json"), dir.join("table1.txt"), dir.join("table2.txt")])
}

pub fn bench(ctx: &Ctx, frames: Option<usize>) -> Result<Outcome, CliError> {
    const STAGE: &str = "bench";
    let ab = ctx.cfg.train.ablation;
    let frames = frames.unwrap_or(ctx.cfg.eval.bench_frames);
    let run_key = read_stamp(&ctx.stamp_file(&format!("train-{ab}"))).map(|s| s.key);
    let (name, network) = match &run_key {
        Some(_) if ctx.run_dir(ab).join(FINAL_FILE).exists() => (ab.to_string(), load_network(ctx, ab, STAGE)?),
        _ => ("random_init".to_string(), random_init(ctx, STAGE)?),
    };
    let stage = format!("bench-{name}");
    let key = hash_parts(&[stage.clone(), run_key.unwrap_or_default(), json(&ctx.cfg.train.network), frames.to_string(), ctx.cfg.eval.bench_warmup.to_string()]);
    if ctx.is_current(&stage, &key) {
        return Ok(up_to_date(&stage));
    }
    let ex = NetworkExtractor { network, config: ctx.cfg.eval.extract };
    let r = runtime_benchmark(&ex, frames, ctx.cfg.eval.bench_warmup, 320, 240, stage_seed(ctx.cfg.seed, "bench"))
        .map_err(|e| CliError::stage(&stage, e))?;
    crate::out(&r.to_text());
    let path = ctx.reports_dir().join(format!("bench_{name}.json"));
    write_json(&path, &r).map_err(|e| CliError::stage(&stage, e))?;
    ctx.finish(&stage, key, vec![path])
}

pub fn plots(ctx: &Ctx) -> Result<Outcome, CliError> {
    const STAGE: &str = "plots";
    let runs = trained_runs(ctx);
    if runs.is_empty() {
        return Err(CliError::MissingUpstream { stage: STAGE.into(), needs: "train".into() });
    }
    let eval_key = read_stamp(&ctx.stamp_file("eval")).map(|s| s.key).unwrap_or_default();
    let mut parts = vec![STAGE.to_string(), eval_key];
    parts.extend(runs.iter().map(|(a, k)| format!("{a}:{k}")));
    let key = hash_parts(&parts);
    if ctx.is_current(STAGE, &key) {
        return Ok(up_to_date(STAGE));
    }
    let dir = ctx.dir("plots");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::stage(STAGE, e))?;
    let logs: Vec<(String, PathBuf)> = runs.iter().map(|(a, _)| (a.to_string(), ctx.run_dir(*a).join(LOG_FILE))).collect();
    let mut outputs = plots::training_plots(&logs, &dir).map_err(|e| CliError::stage(STAGE, e))?;
    let eval_path = ctx.reports_dir().join("eval.json");
    if eval_path.exists() {
        let file: EvalFile = read_json(&eval_path).map_err(|e| CliError::stage(STAGE, e))?;
        outputs.push(plots::per_condition_plot(&file, &dir).map_err(|e| CliError::stage(STAGE, e))?);
    }
    ctx.finish(STAGE, key, outputs)
}
