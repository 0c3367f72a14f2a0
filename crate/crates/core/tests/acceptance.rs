//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (outside the test harness capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relite_core::dataset::{decode_heatmap_label, encode_heatmap_label, label_stage, load_groups, render_stage, HeatmapLabel};
use relite_core::eval::{
    evaluate_groups, homography_correctness, pair_corner_error, runtime_benchmark, EvalConfig, EvalReport,
    HomographyConfig, HomographyPair, REFERENCE_CPU_MS, REFERENCE_GPU_MS,
};
use relite_core::geometry::{back_project, project, random_rotation, CameraView, Homography, Intrinsics};
use relite_core::losses::{
    disparity_loss, disparity_loss_grad, repeatability_loss, repeatability_loss_grad, similarity_loss,
    similarity_loss_grad, total_loss, LossWeights,
};
use relite_core::model::{
    ExtractConfig, ExtractorNetwork, FeatureExtraction, FeatureExtractor, ModelError, NetworkConfig, NetworkExtractor,
};
use relite_core::pipeline::{build_corpus, Corpus, PipelineConfig};
use relite_core::raster::{GrayImage, Raster};
use relite_core::render::{render_scene, RenderOptions};
use relite_core::tensor::Hwc;
use relite_core::training::{train_loop, Ablation, LoopOptions, StepRecord, Trainer};

fn report(id: &str, name: &str, pass: bool, detail: &str) {
    let line = format!("acceptance {id:>2} {} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn desk_config() -> PipelineConfig {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    let text = std::fs::read_to_string(path).expect("configs/desk.toml");
    let cfg: PipelineConfig = toml::from_str(&text).expect("desk config parses");
    cfg.with_derived_seeds()
}

fn corpus() -> &'static (PipelineConfig, Corpus) {
    static C: OnceLock<(PipelineConfig, Corpus)> = OnceLock::new();
    C.get_or_init(|| {
        let cfg = desk_config();
        let c = build_corpus(&cfg).expect("desk corpus");
        (cfg, c)
    })
}

// ---------------------------------------------------------------------------
// 1. loss oracles

fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize, scale: f64) -> Hwc<f64> {
    Hwc::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-scale..scale)).collect())
}

fn rand_label(rng: &mut ChaCha8Rng, hc: usize, wc: usize) -> HeatmapLabel {
    HeatmapLabel { hc, wc, cells: (0..hc * wc).map(|_| rng.gen_range(0..=64u8)).collect() }
}

fn oracle_ce(maps: &[Hwc<f64>], label: &HeatmapLabel) -> f64 {
    let mut total = 0.0;
    for m in maps {
        for r in 0..label.hc {
            for c in 0..label.wc {
                let z = m.pixel(r, c);
                let t = label.get(r, c) as usize;
                let denom: f64 = z.iter().map(|v| v.exp()).sum();
                total += -(z[t].exp() / denom).ln();
            }
        }
    }
    total / maps.len() as f64
}

fn oracle_fusion(a: &[f64], b: &[f64], c: usize) -> f64 {
    let n_px = a.len() / c;
    let mut sq = 0.0;
    for i in 0..a.len() {
        sq += (a[i] - b[i]).powi(2);
    }
    let mut cs = 0.0;
    for p in 0..n_px {
        let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let (x, y) = (a[p * c + k], b[p * c + k]);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        cs += dot / ((na.sqrt() + 1e-12) * (nb.sqrt() + 1e-12));
    }
    sq / a.len() as f64 + 1.0 - cs / n_px as f64
}

fn oracle_pairs(items: &[&[f64]], c: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0.0;
    for i in 0..items.len() {
        for j in 0..items.len() {
            if i < j {
                sum += oracle_fusion(items[i], items[j], c);
                count += 1.0;
            }
        }
    }
    if count == 0.0 {
        0.0
    } else {
        sum / count
    }
}

#[test]
fn c01_loss_oracles() {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_e = rng.gen_range(2..=4);
        let (h, w, c) = (rng.gen_range(1..=16), rng.gen_range(1..=16), rng.gen_range(1..=8));

        let label = rand_label(&mut rng, h, w);
        let logits: Vec<_> = (0..n_e).map(|_| rand_map(&mut rng, h, w, 65, 4.0)).collect();
        worst = worst.max((repeatability_loss(&logits, &label).unwrap() - oracle_ce(&logits, &label)).abs());

        let maps: Vec<_> = (0..n_e).map(|_| rand_map(&mut rng, h, w, c, 1.0)).collect();
        let refs: Vec<&[f64]> = maps.iter().map(|m| m.data.as_slice()).collect();
        let li = similarity_loss(&maps).unwrap();
        worst = worst.max((li - oracle_pairs(&refs, c)).abs());

        let descs: Vec<Vec<Vec<f64>>> = (0..n_e)
            .map(|_| (0..rng.gen_range(0..12)).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect())
            .collect();
        let ld = disparity_loss(&descs);
        let per_image: f64 = descs
            .iter()
            .map(|img| oracle_pairs(&img.iter().map(|d| d.as_slice()).collect::<Vec<_>>(), c))
            .sum();
        worst = worst.max((ld - per_image / n_e as f64).abs());

        let wts = LossWeights { lambda1: rng.gen_range(0.0..2.0), lambda2: rng.gen_range(0.0..2.0), lambda3: rng.gen_range(0.0..1.0), disparity_guard: 1e-6 };
        let lr = rng.gen_range(0.0..5.0);
        let expected = wts.lambda1 * lr + wts.lambda2 * li + wts.lambda3 / (ld + 1e-6);
        worst = worst.max((total_loss(lr, li, ld, &wts) - expected).abs() / expected.abs().max(1.0));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst < 1e-6 && secs < 60.0;
    report("1", "loss oracle equivalence", pass, &format!("max |Δ| = {worst:.2e} over 100 seeds in {secs:.1}s"));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 2. finite-difference gradients

/// Largest per-component relative error between `analytic` and central
/// differences of `f` at `x`. Components where both are below 1e-8 count as agreeing.
fn fd_check(x: &mut [f64], analytic: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    const H: f64 = 1e-4;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + H;
        let up = f(x);
        x[i] = orig - H;
        let down = f(x);
        x[i] = orig;
        let num = (up - down) / (2.0 * H);
        let scale = num.abs().max(analytic[i].abs());
        if scale < 1e-8 {
            continue;
        }
        worst = worst.max((num - analytic[i]).abs() / scale);
    }
    worst
}

#[test]
fn c02_gradient_checks() {
    let t = Instant::now();
    let (mut w_rep, mut w_sim, mut w_dis) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let n_e = 3;

        let label = rand_label(&mut rng, 4, 4);
        let logits: Vec<_> = (0..n_e).map(|_| rand_map(&mut rng, 4, 4, 65, 2.0)).collect();
        let (_, g) = repeatability_loss_grad(&logits, &label).unwrap();
        let mut flat: Vec<f64> = logits.iter().flat_map(|m| m.data.clone()).collect();
        let ga: Vec<f64> = g.iter().flat_map(|m| m.data.clone()).collect();
        let f = |x: &[f64]| {
            let maps: Vec<_> = x.chunks(16 * 65).map(|d| Hwc::from_vec(4, 4, 65, d.to_vec())).collect();
            repeatability_loss(&maps, &label).unwrap()
        };
        w_rep = w_rep.max(fd_check(&mut flat, &ga, &f));

        let maps: Vec<_> = (0..n_e).map(|_| rand_map(&mut rng, 4, 4, 8, 1.0)).collect();
        let (_, g) = similarity_loss_grad(&maps).unwrap();
        let mut flat: Vec<f64> = maps.iter().flat_map(|m| m.data.clone()).collect();
        let ga: Vec<f64> = g.iter().flat_map(|m| m.data.clone()).collect();
        let f = |x: &[f64]| {
            let maps: Vec<_> = x.chunks(16 * 8).map(|d| Hwc::from_vec(4, 4, 8, d.to_vec())).collect();
            similarity_loss(&maps).unwrap()
        };
        w_sim = w_sim.max(fd_check(&mut flat, &ga, &f));

        // 4×4 keypoint descriptors of dimension 8 per image
        let descs: Vec<Vec<Vec<f64>>> =
            (0..n_e).map(|_| (0..16).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).collect();
        let (_, g) = disparity_loss_grad(&descs);
        let mut flat: Vec<f64> = descs.iter().flatten().flatten().copied().collect();
        let ga: Vec<f64> = g.iter().flatten().flatten().copied().collect();
        let f = |x: &[f64]| {
            let d: Vec<Vec<Vec<f64>>> = x.chunks(16 * 8).map(|img| img.chunks(8).map(|v| v.to_vec()).collect()).collect();
            disparity_loss(&d)
        };
        w_dis = w_dis.max(fd_check(&mut flat, &ga, &f));
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = w_rep < 1e-3 && w_sim < 1e-3 && w_dis < 1e-3 && secs < 300.0;
    report(
        "2",
        "gradient checks",
        pass,
        &format!("max rel. error repeatability {w_rep:.1e}, similarity {w_sim:.1e}, disparity {w_dis:.1e} in {secs:.1}s"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 3. geometry

#[test]
fn c03_geometry_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_px: f64 = 0.0;
    let mut worst_world: f64 = 0.0;
    for _ in 0..1000 {
        let k = Intrinsics::from_fov(8 * rng.gen_range(8..80), 8 * rng.gen_range(6..60), rng.gen_range(30.0..100.0)).unwrap();
        let view = CameraView::new(
            random_rotation(&mut rng),
            Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)),
        )
        .unwrap();
        let px = Vector2::new(rng.gen_range(0.0..k.width as f64), rng.gen_range(0.0..k.height as f64));
        let depth = rng.gen_range(0.1..50.0);
        let p = back_project(&px, depth, &view, &k).unwrap();
        let back = project(&p, &view, &k).unwrap();
        worst_px = worst_px.max((back.pixel - px).norm());
        worst_px = worst_px.max((back.depth - depth).abs());
        let again = back_project(&back.pixel, back.depth, &view, &k).unwrap();
        worst_world = worst_world.max((again - p).norm() / p.norm().max(1.0));
    }
    let mut worst_h: f64 = 0.0;
    for _ in 0..1000 {
        let m = Matrix3::new(
            1.0 + rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-0.3..0.3),
            1.0 + rng.gen_range(-0.3..0.3),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-1e-4..1e-4),
            rng.gen_range(-1e-4..1e-4),
            1.0,
        );
        let h = Homography::new(m).unwrap();
        let hinv = h.inverse().unwrap();
        let p = Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0));
        let q = hinv.warp(&h.warp(&p).unwrap()).unwrap();
        worst_h = worst_h.max((q - p).norm());
    }
    let pass = worst_px < 1e-6 && worst_world < 1e-6 && worst_h < 1e-8;
    report(
        "3",
        "geometry round trips",
        pass,
        &format!("project∘back_project {worst_px:.1e} px, world {worst_world:.1e}, homography {worst_h:.1e} px"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 4. label codec

#[test]
fn c04_label_codec() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    for _ in 0..1000 {
        let (hc, wc) = (rng.gen_range(1..=15), rng.gen_range(1..=20));
        let mut pts = Vec::new();
        for r in 0..hc {
            for c in 0..wc {
                if rng.gen_bool(0.4) {
                    pts.push(Vector2::new((c * 8 + rng.gen_range(0..8)) as f64, (r * 8 + rng.gen_range(0..8)) as f64));
                }
            }
        }
        let label = encode_heatmap_label(&pts, hc * 8, wc * 8, rng.gen()).unwrap();
        let mut decoded = decode_heatmap_label(&label);
        let key = |p: &Vector2<f64>| (p.y as i64, p.x as i64);
        decoded.sort_by_key(key);
        pts.sort_by_key(key);
        let reencoded = encode_heatmap_label(&decoded, hc * 8, wc * 8, 0).unwrap();
        if decoded != pts || reencoded != label || label.n_keypoints() != pts.len() {
            failures += 1;
        }
    }
    let example = encode_heatmap_label(&[Vector2::new(10.0, 5.0)], 16, 16, 0).unwrap();
    let example_ok = example.get(0, 1) == 42 && example.n_keypoints() == 1;
    let pass = failures == 0 && example_ok;
    report(
        "4",
        "label codec",
        pass,
        &format!("{failures}/1000 round-trip failures; (x=10, y=5) → cell (0,1) channel {}", example.get(0, 1)),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 5. renderer

#[test]
fn c05_renderer_properties() {
    let (cfg, c) = corpus();
    let k = &cfg.dataset.intrinsics;
    let opt = RenderOptions::default();
    let view = &c.groups[0].view;
    let scene = &c.scenes[0];

    let mut worst_lin: f64 = 0.0;
    for cond in &c.sweep.conditions {
        for s in [0.5, 2.0, 3.7] {
            let a = render_scene(scene, view, k, cond, &opt).unwrap();
            let b = render_scene(scene, view, k, &cond.scaled(s), &opt).unwrap();
            for (pa, pb) in a.linear_rgb.data.iter().zip(&b.linear_rgb.data) {
                for ch in 0..3 {
                    let expect = s * pa[ch] as f64;
                    let rel = (pb[ch] as f64 - expect).abs() / expect.abs().max(1e-12);
                    if expect != 0.0 || pb[ch] != 0.0 {
                        worst_lin = worst_lin.max(rel);
                    }
                }
            }
        }
    }

    let mut depth_identical = true;
    for g in c.groups.iter().take(6) {
        let sc = c.scenes.iter().find(|s| s.scene_id == g.scene_id).unwrap();
        for cond in &c.sweep.conditions {
            let out = render_scene(sc, &g.view, k, cond, &opt).unwrap();
            depth_identical &= out.depth.data.iter().zip(&g.depth.data).all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }

    let again = build_corpus(cfg).unwrap();
    let deterministic = again.groups == c.groups && again.heldout == c.heldout;

    let pass = worst_lin < 1e-5 && depth_identical && deterministic;
    report(
        "5",
        "renderer properties",
        pass,
        &format!("linearity rel. error {worst_lin:.1e}; depth bit-identical {depth_identical}; deterministic {deterministic}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 6. dataset cardinality

#[test]
fn c06_dataset_cardinality() {
    let (cfg, c) = corpus();
    let dir = tempfile::tempdir().unwrap();
    render_stage(&c.scenes, &cfg.dataset, dir.path()).unwrap();
    let manifest = label_stage(&c.scenes, dir.path()).unwrap();
    let (loaded_manifest, loaded) = load_groups(dir.path()).unwrap();
    let shape_ok = (cfg.scenes.count, cfg.dataset.n_views, cfg.dataset.n_illum) == (4, 10, 5);
    let counts_ok = c.groups.len() == 40
        && c.groups.iter().all(|g| g.images.len() == 5 && g.condition_ids.len() == 5)
        && manifest.groups.len() == 40
        && manifest.check_counts().is_ok()
        && manifest.complete
        && manifest.labels_complete
        && loaded_manifest == manifest;
    let consistent = loaded.len() == c.groups.len()
        && loaded.iter().zip(&c.groups).all(|(a, b)| a.images == b.images && a.label == b.label && a.view == b.view);
    let pass = shape_ok && counts_ok && consistent;
    report(
        "6",
        "dataset cardinality",
        pass,
        &format!(
            "{} groups of {} images; manifest counts ok {}; disk matches memory {consistent}",
            c.groups.len(),
            c.groups[0].images.len(),
            manifest.check_counts().is_ok()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 7, 8. desk training

struct Run {
    records: Vec<StepRecord>,
    report: EvalReport,
}

fn eval_config(cfg: &PipelineConfig) -> (ExtractConfig, EvalConfig) {
    (cfg.eval.extract, cfg.eval.metrics)
}

fn run(ablation: Ablation) -> &'static Run {
    static RUNS: [OnceLock<Run>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    let slot = match ablation {
        Ablation::Full => &RUNS[0],
        Ablation::NoSimilarity => &RUNS[1],
        Ablation::NoDisparity => &RUNS[2],
    };
    slot.get_or_init(|| {
        let (cfg, c) = corpus();
        let tc = relite_core::training::TrainConfig { ablation, ..cfg.train.clone() };
        let out = train_loop(&c.groups, &tc, &LoopOptions::default()).expect("training");
        let (extract, metrics) = eval_config(cfg);
        let ex = NetworkExtractor { network: out.trainer.network, config: extract };
        let report = evaluate_groups(&c.heldout, &ex, &metrics).expect("eval");
        Run { records: out.records, report }
    })
}

fn window_mean(records: &[StepRecord], from: usize, len: usize) -> f64 {
    let v: Vec<f64> = records.iter().filter(|r| r.step >= from && r.step < from + len).map(|r| r.total).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn c07_desk_training_efficacy() {
    let (cfg, c) = corpus();
    let t = Instant::now();
    let full = run(Ablation::Full);
    let secs = t.elapsed().as_secs_f64();

    let steps = cfg.train.steps;
    let early = window_mean(&full.records, 10, 10);
    let late = window_mean(&full.records, steps - 10, 10);
    let fall = 1.0 - late / early;
    let a = fall >= 0.5;

    let (extract, metrics) = eval_config(cfg);
    let init = NetworkExtractor { network: Trainer::new(cfg.train.clone()).unwrap().network, config: extract };
    let baseline = evaluate_groups(&c.heldout, &init, &metrics).unwrap();
    let gain = full.report.repeatability - baseline.repeatability;
    let b = gain >= 0.20;

    let s = &full.report.similarity;
    let cc = s.sp_cs >= 0.9 && s.dp_cs <= 0.5;

    let budget = steps <= 2000 && secs < 1800.0;
    let pass = a && b && cc && budget;
    let verdict = |ok: bool| if ok { "pass" } else { "fail" };
    report(
        "7",
        "desk training efficacy",
        pass,
        &format!(
            "(a) {} loss {early:.1} → {late:.1} ({:.0}% fall); (b) {} held-out repeatability {:.3} vs random init {:.3} ({:+.1} pp); (c) {} SP CS {:.4}, DP CS {:.4}; {steps} steps in {secs:.0}s",
            verdict(a),
            fall * 100.0,
            verdict(b),
            full.report.repeatability,
            baseline.repeatability,
            gain * 100.0,
            verdict(cc),
            s.sp_cs,
            s.dp_cs,
        ),
    );
    assert!(a, "loss fell only {:.0}%", fall * 100.0);
    assert!(cc, "SP CS {} DP CS {}", s.sp_cs, s.dp_cs);
    assert!(budget);
    assert!(b, "repeatability gain {:.1} pp < 20 pp", gain * 100.0);
}

#[test]
fn c08_ablation_orderings() {
    let full = &run(Ablation::Full).report.similarity;
    let no_sim = &run(Ablation::NoSimilarity).report.similarity;
    let no_dis = &run(Ablation::NoDisparity).report.similarity;
    let sp_cs = full.sp_cs > no_sim.sp_cs;
    let dp_cs = no_dis.dp_cs > full.dp_cs;
    let sp_mse = no_sim.sp_mse > full.sp_mse;
    let pass = sp_cs && dp_cs && sp_mse;
    report(
        "8",
        "ablation orderings",
        pass,
        &format!(
            "SP CS full {:.4} > no_similarity {:.4}: {sp_cs}; DP CS no_disparity {:.4} > full {:.4}: {dp_cs}; SP MSE no_similarity {:.2e} > full {:.2e}: {sp_mse}",
            full.sp_cs, no_sim.sp_cs, no_dis.dp_cs, full.dp_cs, no_sim.sp_mse, full.sp_mse
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 9. homography protocol

/// Returns a precomputed extraction for each image, keyed by its first pixel.
struct Lookup(Vec<(f32, FeatureExtraction)>);

impl FeatureExtractor for Lookup {
    fn extract(&self, image: &GrayImage) -> Result<FeatureExtraction, ModelError> {
        Ok(self.0.iter().find(|(k, _)| *k == image.data[0]).map(|(_, e)| e.clone()).unwrap_or_default())
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

#[test]
fn c09_homography_protocol() {
    let (w, h) = (320usize, 240usize);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pairs = Vec::new();
    let mut table = Vec::new();
    let mut worst: f64 = 0.0;
    let cfg = HomographyConfig::default();
    for i in 0..20 {
        let m = Matrix3::new(
            1.0 + rng.gen_range(-0.15..0.15),
            rng.gen_range(-0.15..0.15),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-0.15..0.15),
            1.0 + rng.gen_range(-0.15..0.15),
            rng.gen_range(-20.0..20.0),
            rng.gen_range(-2e-4..2e-4),
            rng.gen_range(-2e-4..2e-4),
            1.0,
        );
        let truth = Homography::new(m).unwrap();
        let (mut a, mut b) = (FeatureExtraction::default(), FeatureExtraction::default());
        while a.keypoints.len() < 60 {
            let p = Vector2::new(rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
            let q = truth.warp(&p).unwrap();
            if q.x < 0.0 || q.y < 0.0 || q.x >= w as f64 || q.y >= h as f64 {
                continue;
            }
            let d = unit(&mut rng, 32);
            a.keypoints.push(relite_core::dataset::Keypoint2d { x: p.x, y: p.y, score: 1.0 });
            b.keypoints.push(relite_core::dataset::Keypoint2d { x: q.x, y: q.y, score: 1.0 });
            a.descriptors.push(d.clone());
            b.descriptors.push(d);
        }
        // unmatched clutter in both images
        for e in [&mut a, &mut b] {
            for _ in 0..15 {
                e.keypoints.push(relite_core::dataset::Keypoint2d {
                    x: rng.gen_range(0.0..w as f64),
                    y: rng.gen_range(0.0..h as f64),
                    score: 0.5,
                });
                e.descriptors.push(unit(&mut rng, 32));
            }
        }
        if let Some(err) = pair_corner_error(&a, &b, &truth, w, h, &cfg) {
            worst = worst.max(err);
        } else {
            worst = f64::INFINITY;
        }
        let (ka, kb) = (2.0 * i as f32, 2.0 * i as f32 + 1.0);
        pairs.push(HomographyPair {
            image_a: Raster::filled(w, h, ka),
            image_b: Raster::filled(w, h, kb),
            h_ab: truth,
        });
        table.push((ka, a));
        table.push((kb, b));
    }
    let r = homography_correctness(&pairs, &Lookup(table), &cfg).unwrap();
    let pass = worst < 1e-6 && r.correctness == 1.0 && r.epsilon == 3.0;
    report(
        "9",
        "homography protocol",
        pass,
        &format!("max corner error {worst:.1e} px over 20 pairs; correctness {:.2} at ε = {}", r.correctness, r.epsilon),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// 10. runtime benchmark

#[test]
fn c10_runtime_benchmark() {
    let net = ExtractorNetwork::new(NetworkConfig::default(), 10).unwrap();
    let ex = NetworkExtractor { network: net, config: ExtractConfig::default() };
    let r = runtime_benchmark(&ex, 100, 10, 320, 240, 10).unwrap();
    let pass = r.n_frames == 100
        && (r.width, r.height) == (320, 240)
        && r.mean_ms > 0.0
        && r.std_ms.is_finite()
        && r.reference_gpu_ms == REFERENCE_GPU_MS
        && r.reference_cpu_ms == REFERENCE_CPU_MS;
    report(
        "10",
        "runtime benchmark",
        pass,
        &format!(
            "{:.2} ± {:.2} ms/frame over {} frames at {}×{} (reference {} ms GPU, {} ms CPU)",
            r.mean_ms, r.std_ms, r.n_frames, r.width, r.height, r.reference_gpu_ms, r.reference_cpu_ms
        ),
    );
    assert!(pass);
}
