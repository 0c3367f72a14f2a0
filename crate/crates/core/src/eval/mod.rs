//! Detection repeatability, same-/different-position descriptor statistics,
//! homography estimation correctness and runtime measurement.

mod bench;
mod homography;

pub use bench::{runtime_benchmark, BenchmarkReport, REFERENCE_CPU_MS, REFERENCE_GPU_MS};
pub use homography::{
    corner_error, estimate_homography, homography_correctness, load_sequence_dir, mutual_nn_matches, pair_corner_error, HomographyConfig,
    HomographyPair, HomographyReport,
};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::dataset::{ImageGroup, Keypoint2d};
use crate::model::{FeatureExtraction, FeatureExtractor, ModelError};
use crate::raster::{mean_linear_luminance, GrayImage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("reference keypoint set is empty")]
    EmptyReference,
    #[error("no keypoint was repeated in any condition")]
    NoRepeatedKeypoints,
    #[error("need at least 2 keypoints per image")]
    TooFewKeypoints,
    #[error("invalid evaluation input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    /// Mean over conditions of the repeated fraction of reference keypoints.
    pub repeatability: f64,
    /// Mean pixel distance over all repeated (reference, condition) matches.
    pub location_error: f64,
    pub epsilon: f64,
    pub n_reference: usize,
    /// Repeated keypoints summed over conditions.
    pub n_repeated: usize,
    pub per_condition: Vec<f64>,
}

fn nearest(p: &Vector2<f64>, set: &[Keypoint2d]) -> Option<(usize, f64)> {
    set.iter()
        .enumerate()
        .map(|(i, k)| (i, (k.x - p.x).hypot(k.y - p.y)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

/// A reference keypoint is repeated in a condition when some detection lies
/// within `epsilon` pixels of it.
pub fn repeatability(
    reference: &[Keypoint2d],
    others: &[Vec<Keypoint2d>],
    epsilon: f64,
) -> Result<RepeatabilityReport, EvalError> {
    if reference.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    if !(epsilon > 0.0) || others.is_empty() {
        return Err(EvalError::InvalidInput("need ε > 0 and at least one other condition".into()));
    }
    let mut per_condition = Vec::with_capacity(others.len());
    let (mut n_repeated, mut dist_sum) = (0usize, 0.0);
    for det in others {
        let mut hits = 0;
        for r in reference {
            if let Some((_, d)) = nearest(&Vector2::new(r.x, r.y), det) {
                if d <= epsilon {
                    hits += 1;
                    dist_sum += d;
                }
            }
        }
        n_repeated += hits;
        per_condition.push(hits as f64 / reference.len() as f64);
    }
    Ok(RepeatabilityReport {
        repeatability: per_condition.iter().sum::<f64>() / per_condition.len() as f64,
        location_error: if n_repeated > 0 { dist_sum / n_repeated as f64 } else { 0.0 },
        epsilon,
        n_reference: reference.len(),
        n_repeated,
        per_condition,
    })
}

/// Descriptor statistics: same-position pairs across conditions and
/// different-position pairs within an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub sp_mse: f64,
    pub sp_cs: f64,
    pub dp_mse: f64,
    pub dp_cs: f64,
    pub n_sp_pairs: usize,
    pub n_dp_pairs: usize,
}

fn pair_stats(a: &[f32], b: &[f32]) -> (f64, f64) {
    let (mut d2, mut dot, mut na, mut nb) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        d2 += (x - y) * (x - y);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    (d2 / a.len().max(1) as f64, dot / ((na.sqrt() + 1e-12) * (nb.sqrt() + 1e-12)))
}

/// Same-position pairs: every reference keypoint repeated within `epsilon` in
/// another condition pairs its descriptor with the matched one.
/// Returns `(sum_mse, sum_cs, count)`.
pub fn sp_pairs(reference: &FeatureExtraction, others: &[FeatureExtraction], epsilon: f64) -> (f64, f64, usize) {
    let (mut sm, mut sc, mut n) = (0.0, 0.0, 0);
    for o in others {
        for (r, rd) in reference.keypoints.iter().zip(&reference.descriptors) {
            if let Some((j, d)) = nearest(&Vector2::new(r.x, r.y), &o.keypoints) {
                if d <= epsilon {
                    let (m, c) = pair_stats(rd, &o.descriptors[j]);
                    sm += m;
                    sc += c;
                    n += 1;
                }
            }
        }
    }
    (sm, sc, n)
}

/// Different-position pairs among the first `max_keypoints` (highest scoring)
/// keypoints of one image. Returns `(sum_mse, sum_cs, count)`.
pub fn dp_pairs(ex: &FeatureExtraction, max_keypoints: usize) -> (f64, f64, usize) {
    let k = ex.descriptors.len().min(max_keypoints);
    let (mut sm, mut sc, mut n) = (0.0, 0.0, 0);
    for i in 0..k {
        for j in i + 1..k {
            let (m, c) = pair_stats(&ex.descriptors[i], &ex.descriptors[j]);
            sm += m;
            sc += c;
            n += 1;
        }
    }
    (sm, sc, n)
}

/// Mean same-position MSE and CS over all repeated matches.
pub fn sp_descriptor_similarity(
    reference: &FeatureExtraction,
    others: &[FeatureExtraction],
    epsilon: f64,
) -> Result<(f64, f64), EvalError> {
    let (m, c, n) = sp_pairs(reference, others, epsilon);
    if n == 0 {
        return Err(EvalError::NoRepeatedKeypoints);
    }
    Ok((m / n as f64, c / n as f64))
}

/// Mean different-position MSE and CS over pairs within each image.
pub fn dp_descriptor_disparity(extractions: &[FeatureExtraction], max_keypoints: usize) -> Result<(f64, f64), EvalError> {
    if extractions.iter().any(|e| e.keypoints.len() < 2) || extractions.is_empty() {
        return Err(EvalError::TooFewKeypoints);
    }
    let (mut sm, mut sc, mut n) = (0.0, 0.0, 0);
    for e in extractions {
        let (m, c, k) = dp_pairs(e, max_keypoints);
        sm += m;
        sc += c;
        n += k;
    }
    Ok((sm / n as f64, sc / n as f64))
}

/// Index of the image with the largest mean linear luminance.
pub fn brightest_index(images: &[GrayImage]) -> usize {
    images
        .iter()
        .map(mean_linear_luminance)
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub epsilon: f64,
    /// Cap on keypoints per image entering different-position pairs.
    pub dp_max_keypoints: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { epsilon: 1.0, dp_max_keypoints: 256 }
    }
}

/// One row of the detection / descriptor tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean over groups of per-group repeatability.
    pub repeatability: f64,
    /// Mean matched distance pooled over groups.
    pub location_error: f64,
    pub epsilon: f64,
    pub similarity: SimilarityReport,
    pub n_groups: usize,
    /// Groups skipped because the reference image had no detections.
    pub n_empty_reference: usize,
    pub mean_keypoints: f64,
    /// Repeatability averaged per condition index across groups.
    pub per_condition_repeatability: Vec<f64>,
}

/// Evaluates an extractor on illumination groups. In every group the
/// brightest image is the reference and every other image is a test condition.
pub fn evaluate_groups(
    groups: &[ImageGroup],
    extractor: &dyn FeatureExtractor,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    use rayon::prelude::*;
    if groups.is_empty() {
        return Err(EvalError::InvalidInput("no groups".into()));
    }
    let per_group: Vec<_> = groups
        .par_iter()
        .map(|g| -> Result<_, EvalError> {
            let ex: Vec<FeatureExtraction> = g.images.iter().map(|im| extractor.extract(im)).collect::<Result<_, _>>()?;
            Ok((brightest_index(&g.images), ex))
        })
        .collect::<Result<_, _>>()?;
    let n_cond = groups[0].images.len();
    let mut rep_sum = 0.0;
    let (mut dist_sum, mut n_rep) = (0.0, 0usize);
    let mut n_used = 0;
    let mut per_cond = vec![0.0; n_cond];
    let (mut spm, mut spc, mut nsp) = (0.0, 0.0, 0);
    let (mut dpm, mut dpc, mut ndp) = (0.0, 0.0, 0);
    let mut total_kps = 0usize;
    for (b, ex) in &per_group {
        total_kps += ex.iter().map(|e| e.keypoints.len()).sum::<usize>();
        for e in ex {
            let (m, c, n) = dp_pairs(e, cfg.dp_max_keypoints);
            dpm += m;
            dpc += c;
            ndp += n;
        }
        let others: Vec<FeatureExtraction> =
            ex.iter().enumerate().filter(|(i, _)| i != b).map(|(_, e)| e.clone()).collect();
        let other_kps: Vec<Vec<Keypoint2d>> = others.iter().map(|e| e.keypoints.clone()).collect();
        match repeatability(&ex[*b].keypoints, &other_kps, cfg.epsilon) {
            Ok(r) => {
                rep_sum += r.repeatability;
                dist_sum += r.location_error * r.n_repeated as f64;
                n_rep += r.n_repeated;
                n_used += 1;
                let idx: Vec<usize> = (0..ex.len()).filter(|i| i != b).collect();
                for (ci, v) in idx.iter().zip(&r.per_condition) {
                    if *ci < n_cond {
                        per_cond[*ci] += v;
                    }
                }
                let (m, c, n) = sp_pairs(&ex[*b], &others, cfg.epsilon);
                spm += m;
                spc += c;
                nsp += n;
            }
            Err(EvalError::EmptyReference) => {}
            Err(e) => return Err(e),
        }
    }
    let div = |a: f64, n: usize| if n > 0 { a / n as f64 } else { f64::NAN };
    Ok(EvalReport {
        repeatability: if n_used > 0 { rep_sum / n_used as f64 } else { 0.0 },
        location_error: if n_rep > 0 { dist_sum / n_rep as f64 } else { 0.0 },
        epsilon: cfg.epsilon,
        similarity: SimilarityReport {
            sp_mse: div(spm, nsp),
            sp_cs: div(spc, nsp),
            dp_mse: div(dpm, ndp),
            dp_cs: div(dpc, ndp),
            n_sp_pairs: nsp,
            n_dp_pairs: ndp,
        },
        n_groups: groups.len(),
        n_empty_reference: groups.len() - n_used,
        mean_keypoints: total_kps as f64 / (groups.len() * n_cond.max(1)) as f64,
        per_condition_repeatability: per_cond.iter().map(|v| if n_used > 0 { v / n_used as f64 } else { 0.0 }).collect(),
    })
}

/// Aligned text table of repeatability, location error and same-position
/// descriptor statistics, one row per method.
pub fn format_detection_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut s = format!(
        "{:<24} {:>14} {:>14} {:>14} {:>10}\n",
        "method", "repeatability", "loc. error px", "SP MSE(1e-3)", "SP CS"
    );
    for (name, r) in rows {
        s += &format!(
            "{:<24} {:>13.2}% {:>14.3} {:>14.3} {:>10.3}\n",
            name,
            100.0 * r.repeatability,
            r.location_error,
            1e3 * r.similarity.sp_mse,
            r.similarity.sp_cs
        );
    }
    s
}

/// Aligned text table comparing same- and different-position statistics.
pub fn format_ablation_table(rows: &[(&str, &EvalReport)]) -> String {
    let mut s = format!(
        "{:<24} {:>14} {:>10} {:>14} {:>10}\n",
        "training", "SP MSE(1e-2)", "SP CS", "DP MSE(1e-2)", "DP CS"
    );
    for (name, r) in rows {
        let m = &r.similarity;
        s += &format!(
            "{:<24} {:>14.3} {:>10.3} {:>14.3} {:>10.3}\n",
            name,
            1e2 * m.sp_mse,
            m.sp_cs,
            1e2 * m.dp_mse,
            m.dp_cs
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kp(x: f64, y: f64) -> Keypoint2d {
        Keypoint2d { x, y, score: 1.0 }
    }

    #[test]
    fn repeatability_examples() {
        let r = repeatability(&[kp(0.0, 0.0), kp(10.0, 10.0)], &[vec![kp(0.0, 0.0), kp(10.0, 10.0)]], 1.0).unwrap();
        assert_eq!((r.repeatability, r.location_error), (1.0, 0.0));
        let r = repeatability(&[kp(0.0, 0.0), kp(10.0, 10.0)], &[vec![kp(0.5, 0.0), kp(30.0, 30.0)]], 1.0).unwrap();
        assert_eq!((r.repeatability, r.location_error), (0.5, 0.5));
        assert_eq!(repeatability(&[], &[vec![]], 1.0), Err(EvalError::EmptyReference));
        // per-condition averaging
        let r = repeatability(&[kp(0.0, 0.0), kp(5.0, 5.0)], &[vec![kp(0.0, 0.0)], vec![kp(0.0, 0.0), kp(5.0, 5.0)], vec![]], 1.0)
            .unwrap();
        assert!((r.repeatability - 0.5).abs() < 1e-15);
        assert_eq!(r.per_condition, vec![0.5, 1.0, 0.0]);
    }

    fn ex_from(kps: Vec<Keypoint2d>, desc: impl Fn(usize) -> Vec<f32>) -> FeatureExtraction {
        let descriptors = (0..kps.len()).map(desc).collect();
        FeatureExtraction { keypoints: kps, descriptors }
    }

    #[test]
    fn constant_descriptors() {
        let c = |_: usize| vec![0.6f32, 0.8];
        let a = ex_from(vec![kp(1.0, 1.0), kp(9.0, 4.0)], c);
        let b = ex_from(vec![kp(1.2, 1.0), kp(9.0, 4.5)], c);
        let (m, cs) = sp_descriptor_similarity(&a, &[b.clone()], 1.0).unwrap();
        assert!(m.abs() < 1e-12 && (cs - 1.0).abs() < 1e-9);
        let (_, dcs) = dp_descriptor_disparity(&[a, b], 100).unwrap();
        assert!((dcs - 1.0).abs() < 1e-9);
    }

    #[test]
    fn orthogonal_descriptors_have_zero_dp_cs() {
        let e = ex_from((0..8).map(|i| kp(i as f64 * 10.0, 0.0)).collect(), |i| {
            let mut v = vec![0.0f32; 8];
            v[i] = 1.0;
            v
        });
        let (_, cs) = dp_descriptor_disparity(&[e], 100).unwrap();
        assert!(cs.abs() < 1e-9);
        assert_eq!(dp_descriptor_disparity(&[ex_from(vec![kp(0.0, 0.0)], |_| vec![1.0])], 10), Err(EvalError::TooFewKeypoints));
    }

    #[test]
    fn random_unit_descriptors_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut unit = |_: usize| {
            let v: Vec<f32> = (0..256).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f32>>()
        };
        let kps: Vec<_> = (0..1200).map(|i| kp((i % 40) as f64 * 4.0, (i / 40) as f64 * 4.0)).collect();
        let a = FeatureExtraction { keypoints: kps.clone(), descriptors: (0..1200).map(&mut unit).collect() };
        let b = FeatureExtraction { keypoints: kps, descriptors: (0..1200).map(&mut unit).collect() };
        let (_, cs) = sp_descriptor_similarity(&a, &[b], 1.0).unwrap();
        assert!(cs.abs() < 0.05, "{cs}");
    }

    #[test]
    fn no_repeats_is_an_error() {
        let a = ex_from(vec![kp(0.0, 0.0)], |_| vec![1.0]);
        let b = ex_from(vec![kp(50.0, 0.0)], |_| vec![1.0]);
        assert_eq!(sp_descriptor_similarity(&a, &[b], 1.0), Err(EvalError::NoRepeatedKeypoints));
    }

    #[test]
    fn brightest_by_luminance() {
        let imgs = vec![GrayImage::filled(4, 4, 0.2), GrayImage::filled(4, 4, 0.7), GrayImage::filled(4, 4, 0.5)];
        assert_eq!(brightest_index(&imgs), 1);
    }

    proptest! {
        #[test]
        fn repeatability_monotone_in_epsilon(
            pts in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 1..30),
            det in prop::collection::vec((0.0f64..50.0, 0.0f64..50.0), 0..30),
            e1 in 0.1f64..5.0, de in 0.0f64..5.0,
        ) {
            let r: Vec<_> = pts.iter().map(|&(x, y)| kp(x, y)).collect();
            let d: Vec<_> = det.iter().map(|&(x, y)| kp(x, y)).collect();
            let a = repeatability(&r, &[d.clone()], e1).unwrap();
            let b = repeatability(&r, &[d], e1 + de).unwrap();
            prop_assert!(b.repeatability >= a.repeatability);
            prop_assert!(a.location_error <= e1 && (0.0..=1.0).contains(&a.repeatability));
        }
    }
}
