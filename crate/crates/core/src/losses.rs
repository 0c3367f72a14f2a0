//! Training objectives: cell cross-entropy against the shared label, fusion
//! error between illumination-aligned descriptor maps, and the disparity
//! term between descriptors of different keypoints. Every loss has an
//! analytic gradient.
//!
//! Pairwise sums are normalized by the unordered pair count and accumulated
//! in sorted order, so results are bit-identical under input permutation.

use serde::{Deserialize, Serialize};

use crate::dataset::HeatmapLabel;
use crate::tensor::Hwc;

pub const N_CLASSES: usize = 65;
/// Guard added to vector norms inside the cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("label value {0} outside [0, 64]")]
    LabelOutOfRange(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 2 maps, got {0}")]
    TooFewMaps(usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub disparity_guard: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, lambda3: 0.1, disparity_guard: 1e-6 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = [self.lambda1, self.lambda2, self.lambda3].iter().all(|&l| l >= 0.0 && l.is_finite())
            && self.disparity_guard > 0.0;
        ok.then_some(()).ok_or_else(|| LossError::InvalidWeights(format!("{self:?}")))
    }
}

fn check_same(a: &Hwc<f64>, b: &Hwc<f64>) -> Result<(), LossError> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(LossError::ShapeMismatch(format!("{}×{}×{} vs {}×{}×{}", a.h, a.w, a.c, b.h, b.w, b.c)))
    }
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// Mean over the maps of the summed per-cell cross-entropy against `label`,
/// with the gradient w.r.t. every logit map.
pub fn repeatability_loss_grad(logits: &[Hwc<f64>], label: &HeatmapLabel) -> Result<(f64, Vec<Hwc<f64>>), LossError> {
    if logits.is_empty() {
        return Err(LossError::TooFewMaps(0));
    }
    if let Some(&bad) = label.cells.iter().find(|&&c| c as usize >= N_CLASSES) {
        return Err(LossError::LabelOutOfRange(bad));
    }
    let n = logits.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for m in logits {
        if (m.h, m.w, m.c) != (label.hc, label.wc, N_CLASSES) {
            return Err(LossError::ShapeMismatch(format!("logits {}×{}×{} vs label {}×{}", m.h, m.w, m.c, label.hc, label.wc)));
        }
        let mut g = Hwc::zeros(m.h, m.w, m.c);
        let mut sum = 0.0;
        for (i, &t) in label.cells.iter().enumerate() {
            let z = &m.data[i * N_CLASSES..(i + 1) * N_CLASSES];
            let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            sum += lse - z[t as usize];
            let gi = &mut g.data[i * N_CLASSES..(i + 1) * N_CLASSES];
            for (k, (gk, zk)) in gi.iter_mut().zip(z).enumerate() {
                *gk = ((zk - lse).exp() - if k == t as usize { 1.0 } else { 0.0 }) / n;
            }
        }
        total += sum;
        grads.push(g);
    }
    Ok((total / n, grads))
}

pub fn repeatability_loss(logits: &[Hwc<f64>], label: &HeatmapLabel) -> Result<f64, LossError> {
    Ok(repeatability_loss_grad(logits, label)?.0)
}

/// Mean over pixels and channels of the squared difference.
pub fn mse_map(a: &Hwc<f64>, b: &Hwc<f64>) -> Result<f64, LossError> {
    check_same(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / ((na + COSINE_EPS) * (nb + COSINE_EPS))
}

/// Gradients of `cosine(a, b)` w.r.t. `a` and `b`, accumulated with `scale`.
fn cosine_grad(a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: &mut [f64]) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (da, db) = (na + COSINE_EPS, nb + COSINE_EPS);
    let inv = 1.0 / (da * db);
    let ka = if na > 0.0 { dot * inv / (da * na) } else { 0.0 };
    let kb = if nb > 0.0 { dot * inv / (db * nb) } else { 0.0 };
    for i in 0..a.len() {
        ga[i] += scale * (b[i] * inv - ka * a[i]);
        gb[i] += scale * (a[i] * inv - kb * b[i]);
    }
}

/// Mean over pixels of the per-pixel cosine similarity.
pub fn cosine_map(a: &Hwc<f64>, b: &Hwc<f64>) -> Result<f64, LossError> {
    check_same(a, b)?;
    let c = a.c;
    let s: f64 = a.data.chunks_exact(c).zip(b.data.chunks_exact(c)).map(|(x, y)| cosine(x, y)).sum();
    Ok(s / a.n_pixels().max(1) as f64)
}

/// `mse_map + 1 − cosine_map`.
pub fn fusion_error(a: &Hwc<f64>, b: &Hwc<f64>) -> Result<f64, LossError> {
    Ok(mse_map(a, b)? + 1.0 - cosine_map(a, b)?)
}

/// Fusion error with gradients accumulated into `ga`, `gb` scaled by `scale`.
fn fusion_error_acc(a: &[f64], b: &[f64], c: usize, scale: f64, ga: &mut [f64], gb: &mut [f64]) -> f64 {
    let n = a.len() as f64;
    let p = (a.len() / c) as f64;
    let mut mse = 0.0;
    let mut cs = 0.0;
    for ((x, y), (gx, gy)) in a.chunks_exact(c).zip(b.chunks_exact(c)).zip(ga.chunks_exact_mut(c).zip(gb.chunks_exact_mut(c))) {
        for i in 0..c {
            let d = x[i] - y[i];
            mse += d * d;
            gx[i] += scale * 2.0 * d / n;
            gy[i] -= scale * 2.0 * d / n;
        }
        cs += cosine(x, y);
        cosine_grad(x, y, -scale / p, gx, gy);
    }
    mse / n + 1.0 - cs / p
}

pub fn fusion_error_grad(a: &Hwc<f64>, b: &Hwc<f64>) -> Result<(f64, Hwc<f64>, Hwc<f64>), LossError> {
    check_same(a, b)?;
    let mut ga = Hwc::zeros(a.h, a.w, a.c);
    let mut gb = Hwc::zeros(a.h, a.w, a.c);
    let f = fusion_error_acc(&a.data, &b.data, a.c, 1.0, &mut ga.data, &mut gb.data);
    Ok((f, ga, gb))
}

/// Mean fusion error over all unordered pairs of maps, with gradients.
pub fn similarity_loss_grad(maps: &[Hwc<f64>]) -> Result<(f64, Vec<Hwc<f64>>), LossError> {
    let n = maps.len();
    if n < 2 {
        return Err(LossError::TooFewMaps(n));
    }
    for m in &maps[1..] {
        check_same(&maps[0], m)?;
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let c = maps[0].c;
    let mut grads: Vec<Hwc<f64>> = maps.iter().map(|m| Hwc::zeros(m.h, m.w, m.c)).collect();
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (lo, hi) = grads.split_at_mut(j);
            values.push(fusion_error_acc(&maps[i].data, &maps[j].data, c, 1.0 / pairs, &mut lo[i].data, &mut hi[0].data));
        }
    }
    Ok((sorted_sum(values) / pairs, grads))
}

pub fn similarity_loss(maps: &[Hwc<f64>]) -> Result<f64, LossError> {
    let n = maps.len();
    if n < 2 {
        return Err(LossError::TooFewMaps(n));
    }
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(fusion_error(&maps[i], &maps[j])?);
        }
    }
    let pairs = values.len() as f64;
    Ok(sorted_sum(values) / pairs)
}

/// Per image, mean fusion error over unordered pairs of keypoint descriptors
/// (each a 1×1×C map); averaged over images. Images with fewer than two
/// keypoints contribute 0. Returns the gradient per descriptor.
pub fn disparity_loss_grad(descriptors: &[Vec<Vec<f64>>]) -> (f64, Vec<Vec<Vec<f64>>>) {
    let mut grads: Vec<Vec<Vec<f64>>> =
        descriptors.iter().map(|img| img.iter().map(|d| vec![0.0; d.len()]).collect()).collect();
    if descriptors.is_empty() {
        return (0.0, grads);
    }
    let n_img = descriptors.len() as f64;
    let mut per_image = Vec::with_capacity(descriptors.len());
    for (img, g) in descriptors.iter().zip(&mut grads) {
        let k = img.len();
        if k < 2 {
            per_image.push(0.0);
            continue;
        }
        let pairs = (k * (k - 1) / 2) as f64;
        let mut values = Vec::with_capacity(k * (k - 1) / 2);
        for i in 0..k {
            for j in i + 1..k {
                let (lo, hi) = g.split_at_mut(j);
                let c = img[i].len();
                values.push(fusion_error_acc(&img[i], &img[j], c, 1.0 / (pairs * n_img), &mut lo[i], &mut hi[0]));
            }
        }
        per_image.push(sorted_sum(values) / pairs);
    }
    (sorted_sum(per_image) / n_img, grads)
}

pub fn disparity_loss(descriptors: &[Vec<Vec<f64>>]) -> f64 {
    disparity_loss_grad(descriptors).0
}

/// `λ₁·Lr + λ₂·Li + λ₃ / (Ld + ε)`.
pub fn total_loss(lr: f64, li: f64, ld: f64, w: &LossWeights) -> f64 {
    w.lambda1 * lr + w.lambda2 * li + w.lambda3 / (ld + w.disparity_guard)
}

/// Partial derivatives of [`total_loss`] w.r.t. `(Lr, Li, Ld)`.
pub fn total_loss_partials(ld: f64, w: &LossWeights) -> (f64, f64, f64) {
    (w.lambda1, w.lambda2, -w.lambda3 / (ld + w.disparity_guard).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, Strategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Hwc<f64> {
        Hwc::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn rand_label(rng: &mut ChaCha8Rng, hc: usize, wc: usize) -> HeatmapLabel {
        HeatmapLabel { hc, wc, cells: (0..hc * wc).map(|_| rng.gen_range(0..=64u8)).collect() }
    }

    // ---- scalar-loop oracles ----

    fn ce_oracle(logits: &[Hwc<f64>], label: &HeatmapLabel) -> f64 {
        let mut total = 0.0;
        for m in logits {
            for r in 0..m.h {
                for c in 0..m.w {
                    let z = m.pixel(r, c);
                    let denom: f64 = z.iter().map(|v| v.exp()).sum();
                    total -= (z[label.get(r, c) as usize].exp() / denom).ln();
                }
            }
        }
        total / logits.len() as f64
    }

    fn mse_oracle(a: &Hwc<f64>, b: &Hwc<f64>) -> f64 {
        let mut s = 0.0;
        for y in 0..a.h {
            for x in 0..a.w {
                let mut px = 0.0;
                for k in 0..a.c {
                    px += (a.pixel(y, x)[k] - b.pixel(y, x)[k]).powi(2);
                }
                s += px / a.c as f64;
            }
        }
        s / (a.h * a.w) as f64
    }

    fn cs_oracle(a: &Hwc<f64>, b: &Hwc<f64>) -> f64 {
        let mut s = 0.0;
        for y in 0..a.h {
            for x in 0..a.w {
                let (mut d, mut na, mut nb) = (0.0, 0.0, 0.0);
                for k in 0..a.c {
                    d += a.pixel(y, x)[k] * b.pixel(y, x)[k];
                    na += a.pixel(y, x)[k].powi(2);
                    nb += b.pixel(y, x)[k].powi(2);
                }
                s += d / ((na.sqrt() + 1e-12) * (nb.sqrt() + 1e-12));
            }
        }
        s / (a.h * a.w) as f64
    }

    #[test]
    fn repeatability_examples() {
        let label = HeatmapLabel { hc: 2, wc: 2, cells: vec![3, 64, 0, 17] };
        let mut m = Hwc::zeros(2, 2, 65);
        let uniform = repeatability_loss(&[m.clone()], &label).unwrap();
        assert!((uniform - 4.0 * 65f64.ln()).abs() < 1e-12);
        assert!((uniform - 16.6975).abs() < 1e-4);
        for (i, &t) in label.cells.iter().enumerate() {
            m.data[i * 65 + t as usize] = 1000.0;
        }
        assert!(repeatability_loss(&[m], &label).unwrap() < 1e-6);
        let bad = HeatmapLabel { hc: 1, wc: 1, cells: vec![65] };
        assert_eq!(repeatability_loss(&[Hwc::zeros(1, 1, 65)], &bad), Err(LossError::LabelOutOfRange(65)));
    }

    #[test]
    fn repeatability_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.gen_range(1..=4);
            let label = rand_label(&mut rng, 3, 2);
            let maps: Vec<_> = (0..n).map(|_| rand_map(&mut rng, 3, 2, 65).map(|v| 3.0 * v)).collect();
            assert!((repeatability_loss(&maps, &label).unwrap() - ce_oracle(&maps, &label)).abs() < 1e-9);
        }
    }

    #[test]
    fn repeatability_decreases_toward_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let label = rand_label(&mut rng, 2, 3);
        let mut prev = f64::INFINITY;
        for s in 0..10 {
            let t = s as f64 / 9.0 * 20.0;
            let mut m = Hwc::zeros(2, 3, 65);
            for (i, &c) in label.cells.iter().enumerate() {
                m.data[i * 65 + c as usize] = t;
            }
            let l = repeatability_loss(&[m], &label).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn map_metric_examples() {
        let zeros = Hwc::from_vec(2, 2, 3, vec![0.0; 12]);
        let ones = Hwc::from_vec(2, 2, 3, vec![1.0; 12]);
        assert_eq!(mse_map(&ones, &ones).unwrap(), 0.0);
        assert_eq!(mse_map(&zeros, &ones).unwrap(), 1.0);
        assert!((cosine_map(&ones, &ones).unwrap() - 1.0).abs() < 1e-9);
        let e1 = Hwc::from_vec(1, 2, 256, (0..512).map(|i| if i % 256 == 0 { 1.0 } else { 0.0 }).collect());
        let e2 = Hwc::from_vec(1, 2, 256, (0..512).map(|i| if i % 256 == 1 { 1.0 } else { 0.0 }).collect());
        assert!(cosine_map(&e1, &e2).unwrap().abs() < 1e-9);
        assert!((fusion_error(&e1, &e2).unwrap() - 1.0078125).abs() < 1e-12);
        // the norm guard keeps identical maps a hair above zero
        assert!(fusion_error(&ones, &ones).unwrap().abs() < 1e-9);
        assert!(matches!(mse_map(&zeros, &e1), Err(LossError::ShapeMismatch(_))));
    }

    #[test]
    fn map_metrics_match_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = (rand_map(&mut rng, 4, 3, 8), rand_map(&mut rng, 4, 3, 8));
            let (m, c) = (mse_oracle(&a, &b), cs_oracle(&a, &b));
            assert!((mse_map(&a, &b).unwrap() - m).abs() < 1e-9);
            assert!((cosine_map(&a, &b).unwrap() - c).abs() < 1e-9);
            assert!((fusion_error(&a, &b).unwrap() - (m + 1.0 - c)).abs() < 1e-9);
            assert!((fusion_error_grad(&a, &b).unwrap().0 - (m + 1.0 - c)).abs() < 1e-9);
        }
    }

    #[test]
    fn similarity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_map(&mut rng, 2, 2, 4);
        let b = rand_map(&mut rng, 2, 2, 4);
        assert!(similarity_loss(&[a.clone(), a.clone(), a.clone()]).unwrap().abs() < 1e-9);
        let f = fusion_error(&a, &b).unwrap();
        assert!((similarity_loss(&[a.clone(), a.clone(), b.clone()]).unwrap() - 2.0 * f / 3.0).abs() < 1e-12);
        assert_eq!(similarity_loss(&[a.clone()]), Err(LossError::TooFewMaps(1)));
        let maps: Vec<_> = (0..4).map(|_| rand_map(&mut rng, 3, 3, 8)).collect();
        let mut explicit = 0.0;
        for (i, j) in [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            explicit += mse_oracle(&maps[i], &maps[j]) + 1.0 - cs_oracle(&maps[i], &maps[j]);
        }
        assert!((similarity_loss(&maps).unwrap() - explicit / 6.0).abs() < 1e-9);
        assert!((similarity_loss_grad(&maps).unwrap().0 - explicit / 6.0).abs() < 1e-9);
    }

    #[test]
    fn disparity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = |rng: &mut ChaCha8Rng| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let one = d(&mut rng);
        assert_eq!(disparity_loss(&[vec![one.clone()]]), 0.0);
        assert!(disparity_loss(&[vec![one.clone(), one.clone()]]).abs() < 1e-9);
        let three = vec![d(&mut rng), d(&mut rng), d(&mut rng)];
        let as_map = |v: &Vec<f64>| Hwc::from_vec(1, 1, 8, v.clone());
        let mut explicit = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let (a, b) = (as_map(&three[i]), as_map(&three[j]));
            explicit += mse_oracle(&a, &b) + 1.0 - cs_oracle(&a, &b);
        }
        assert!((disparity_loss(&[three.clone()]) - explicit / 3.0).abs() < 1e-9);
        // averaged over images
        assert!((disparity_loss(&[three.clone(), vec![one.clone(), one]]) - explicit / 6.0).abs() < 1e-9);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights { lambda1: 1.0, lambda2: 1.0, lambda3: 0.0, disparity_guard: 1e-6 };
        assert_eq!(total_loss(0.7, 0.2, 0.0, &w), 0.7 + 0.2);
        let w = LossWeights { lambda1: 0.0, lambda2: 0.0, lambda3: 1.0, disparity_guard: 1e-6 };
        assert!((total_loss(5.0, 5.0, 0.0, &w) - 1e6).abs() < 1e-6);
        let w = LossWeights { lambda1: 0.3, lambda2: 1.7, lambda3: 0.25, disparity_guard: 1e-3 };
        assert!((total_loss(2.0, 0.5, 0.4, &w) - (0.6 + 0.85 + 0.25 / 0.401)).abs() < 1e-12);
        assert!(LossWeights { lambda1: -1.0, ..Default::default() }.validate().is_err());
        assert!(LossWeights { disparity_guard: 0.0, ..Default::default() }.validate().is_err());
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = 1e-4;
        // repeatability on 4×4 cells
        let label = rand_label(&mut rng, 4, 4);
        let maps: Vec<_> = (0..2).map(|_| rand_map(&mut rng, 4, 4, 65)).collect();
        let (_, g) = repeatability_loss_grad(&maps, &label).unwrap();
        for m in 0..2 {
            for i in (0..maps[m].data.len()).step_by(13) {
                let mut p = maps.clone();
                p[m].data[i] += h;
                let lp = repeatability_loss(&p, &label).unwrap();
                p[m].data[i] -= 2.0 * h;
                let lm = repeatability_loss(&p, &label).unwrap();
                assert!(rel_err((lp - lm) / (2.0 * h), g[m].data[i]) < 1e-3);
            }
        }
        // similarity on 4×4×8
        let maps: Vec<_> = (0..3).map(|_| rand_map(&mut rng, 4, 4, 8)).collect();
        let (_, g) = similarity_loss_grad(&maps).unwrap();
        for m in 0..3 {
            for i in 0..maps[m].data.len() {
                let mut p = maps.clone();
                p[m].data[i] += h;
                let lp = similarity_loss(&p).unwrap();
                p[m].data[i] -= 2.0 * h;
                let lm = similarity_loss(&p).unwrap();
                assert!(rel_err((lp - lm) / (2.0 * h), g[m].data[i]) < 1e-3);
            }
        }
        // disparity on descriptors drawn from a 4×4×8 map
        let map = rand_map(&mut rng, 4, 4, 8);
        let descs: Vec<Vec<Vec<f64>>> = vec![(0..5).map(|i| map.pixel(i % 4, i / 2).to_vec()).collect()];
        let (_, g) = disparity_loss_grad(&descs);
        for k in 0..5 {
            for c in 0..8 {
                let mut p = descs.clone();
                p[0][k][c] += h;
                let lp = disparity_loss(&p);
                p[0][k][c] -= 2.0 * h;
                let lm = disparity_loss(&p);
                assert!(rel_err((lp - lm) / (2.0 * h), g[0][k][c]) < 1e-3);
            }
        }
    }

    proptest! {
        #[test]
        fn pair_losses_are_permutation_invariant(seed in 0u64..1000, perm in prop::sample::subsequence(vec![0usize, 1, 2, 3], 4).prop_shuffle()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let maps: Vec<_> = (0..4).map(|_| rand_map(&mut rng, 3, 2, 5)).collect();
            let shuffled: Vec<_> = perm.iter().map(|&i| maps[i].clone()).collect();
            prop_assert_eq!(similarity_loss(&maps).unwrap(), similarity_loss(&shuffled).unwrap());
            let descs: Vec<Vec<f64>> = maps.iter().map(|m| m.data[..5].to_vec()).collect();
            let sd: Vec<Vec<f64>> = perm.iter().map(|&i| descs[i].clone()).collect();
            prop_assert_eq!(disparity_loss(&[descs.clone(), sd.clone()]), disparity_loss(&[sd, descs]));
        }

        #[test]
        fn losses_are_nonnegative(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let maps: Vec<_> = (0..3).map(|_| rand_map(&mut rng, 2, 2, 65)).collect();
            let label = rand_label(&mut rng, 2, 2);
            prop_assert!(repeatability_loss(&maps, &label).unwrap() >= 0.0);
            prop_assert!(similarity_loss(&maps).unwrap() >= 0.0);
            let d: Vec<Vec<f64>> = maps.iter().map(|m| m.data[..8].to_vec()).collect();
            prop_assert!(disparity_loss(&[d]) >= 0.0);
        }
    }
}
