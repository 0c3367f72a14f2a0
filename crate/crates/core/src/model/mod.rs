//! Keypoint detector / descriptor network: shared encoder with 8× downsampling,
//! a 65-way per-cell keypoint head (64 pixel positions plus a dustbin), and a
//! descriptor head producing unit descriptors at full resolution.

mod checkpoint;
pub mod conv;
pub mod descriptor;

pub use checkpoint::{Checkpoint, NamedTensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{nms_points, Keypoint2d};
use crate::raster::GrayImage;
use crate::tensor::Hwc;
use conv::{Chw, Conv2d, ConvCache};

/// Channels per cell: 64 positions plus the dustbin.
pub const N_CLASSES: usize = 65;
pub const DUSTBIN: usize = 64;
pub const CELL: usize = descriptor::CELL;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("bad input shape: {0}")]
    BadShape(String),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Encoder stage widths; each stage halves the resolution.
    pub widths: [usize; 3],
    /// Hidden width of both heads.
    pub head_width: usize,
    pub descriptor_dim: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { widths: [32, 64, 128], head_width: 128, descriptor_dim: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractConfig {
    pub score_threshold: f64,
    pub nms_radius: f64,
    pub max_keypoints: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { score_threshold: 0.015, nms_radius: 4.0, max_keypoints: 1000 }
    }
}

/// Dense network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutputs {
    /// `Hc × Wc × 65`.
    pub keypoint_logits: Hwc<f32>,
    /// `H × W × D`, unit norm per pixel.
    pub descriptor_map: Hwc<f32>,
}

/// Keypoints sorted by descending score, with one unit descriptor each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureExtraction {
    pub keypoints: Vec<Keypoint2d>,
    pub descriptors: Vec<Vec<f32>>,
}

/// Anything that turns a grayscale image into keypoints and descriptors.
pub trait FeatureExtractor: Sync {
    fn extract(&self, image: &GrayImage) -> Result<FeatureExtraction, ModelError>;
}

/// Raw coarse outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct RawOutputs {
    /// `65 × Hc × Wc`.
    pub logits: Chw,
    /// `D × Hc × Wc`, before upsampling and normalization.
    pub coarse_descriptors: Chw,
}

pub struct ForwardCache {
    encoder: Vec<ConvCache>,
    keypoint: Vec<ConvCache>,
    descriptor: Vec<ConvCache>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorNetwork {
    pub config: NetworkConfig,
    pub seed: u64,
    encoder: Vec<Conv2d>,
    keypoint_head: Vec<Conv2d>,
    descriptor_head: Vec<Conv2d>,
}

fn chain_forward(layers: &[Conv2d], x: &Chw) -> (Chw, Vec<ConvCache>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut cur = x.clone();
    for l in layers {
        let (out, c) = l.forward(&cur);
        caches.push(c);
        cur = out;
    }
    (cur, caches)
}

fn chain_backward(
    layers: &[Conv2d],
    caches: &[ConvCache],
    dout: Chw,
    grads: &mut [Vec<f32>],
    need_input: bool,
) -> Option<Chw> {
    let mut g = dout;
    for (i, l) in layers.iter().enumerate().rev() {
        let (dw, rest) = grads[2 * i..].split_first_mut().expect("weight grad");
        let need = i > 0 || need_input;
        match l.backward(&caches[i], &g, dw, &mut rest[0], need) {
            Some(d) => g = d,
            None => return None,
        }
    }
    Some(g)
}

impl ExtractorNetwork {
    /// Deterministic He-normal initialization from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self, ModelError> {
        if config.widths.iter().any(|&w| w == 0) || config.head_width == 0 || config.descriptor_dim == 0 {
            return Err(ModelError::InvalidConfig(format!("{config:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w1, w2, w3] = config.widths;
        let mut encoder = Vec::new();
        let mut cin = 1;
        for w in [w1, w2, w3] {
            encoder.push(Conv2d::new(cin, w, 3, 1, true, &mut rng));
            encoder.push(Conv2d::new(w, w, 3, 2, true, &mut rng));
            cin = w;
        }
        let hw = config.head_width;
        let keypoint_head =
            vec![Conv2d::new(w3, hw, 3, 1, true, &mut rng), Conv2d::new(hw, N_CLASSES, 1, 1, false, &mut rng)];
        let descriptor_head = vec![
            Conv2d::new(w3, hw, 3, 1, true, &mut rng),
            Conv2d::new(hw, config.descriptor_dim, 1, 1, false, &mut rng),
        ];
        Ok(Self { config, seed, encoder, keypoint_head, descriptor_head })
    }

    fn groups(&self) -> [(&'static str, &[Conv2d]); 3] {
        [("encoder", &self.encoder), ("keypoint", &self.keypoint_head), ("descriptor", &self.descriptor_head)]
    }

    /// Parameter names in canonical order (weight then bias per layer).
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (g, layers) in self.groups() {
            for i in 0..layers.len() {
                names.push(format!("{g}.{i}.weight"));
                names.push(format!("{g}.{i}.bias"));
            }
        }
        names
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        for (_, layers) in self.groups() {
            for l in layers {
                shapes.push(vec![l.cout, l.cin, l.k, l.k]);
                shapes.push(vec![l.cout]);
            }
        }
        shapes
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for (_, layers) in self.groups() {
            for l in layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for l in self.encoder.iter_mut().chain(&mut self.keypoint_head).chain(&mut self.descriptor_head) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Vec<f32>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    pub fn check_input(&self, image: &GrayImage) -> Result<(), ModelError> {
        let (w, h) = (image.width, image.height);
        if w == 0 || h == 0 || w % CELL != 0 || h % CELL != 0 {
            return Err(ModelError::BadShape(format!("{w}×{h} is not a positive multiple of {CELL}")));
        }
        Ok(())
    }

    /// Coarse outputs plus everything needed for [`Self::backward`].
    pub fn forward_raw(&self, image: &GrayImage) -> Result<(RawOutputs, ForwardCache), ModelError> {
        self.check_input(image)?;
        let x = Chw { c: 1, h: image.height, w: image.width, data: image.data.clone() };
        let (feat, encoder) = chain_forward(&self.encoder, &x);
        let (logits, keypoint) = chain_forward(&self.keypoint_head, &feat);
        let (coarse_descriptors, descriptor) = chain_forward(&self.descriptor_head, &feat);
        Ok((RawOutputs { logits, coarse_descriptors }, ForwardCache { encoder, keypoint, descriptor }))
    }

    /// Parameter gradients from gradients w.r.t. the raw logits and raw
    /// coarse descriptors (both in the layout of [`RawOutputs`]).
    pub fn backward(&self, cache: &ForwardCache, d_logits: Chw, d_coarse: Chw) -> Vec<Vec<f32>> {
        let mut grads = self.zero_grads();
        let ne = 2 * self.encoder.len();
        let nk = 2 * self.keypoint_head.len();
        let (ge, rest) = grads.split_at_mut(ne);
        let (gk, gd) = rest.split_at_mut(nk);
        let mut d_feat =
            chain_backward(&self.keypoint_head, &cache.keypoint, d_logits, gk, true).expect("input gradient");
        let d2 = chain_backward(&self.descriptor_head, &cache.descriptor, d_coarse, gd, true).expect("input gradient");
        d_feat.data.iter_mut().zip(&d2.data).for_each(|(a, b)| *a += b);
        chain_backward(&self.encoder, &cache.encoder, d_feat, ge, false);
        grads
    }

    pub fn forward(&self, image: &GrayImage) -> Result<NetworkOutputs, ModelError> {
        let (raw, _) = self.forward_raw(image)?;
        Ok(NetworkOutputs {
            keypoint_logits: chw_to_hwc(&raw.logits),
            descriptor_map: descriptor::upsample_normalize(&raw.coarse_descriptors, image.height, image.width),
        })
    }

    /// Thresholded, NMS'd keypoints with descriptors sampled at their pixels.
    pub fn extract(&self, image: &GrayImage, cfg: &ExtractConfig) -> Result<FeatureExtraction, ModelError> {
        let (raw, _) = self.forward_raw(image)?;
        let scores = score_map(&raw.logits);
        let candidates = scores
            .data
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > cfg.score_threshold)
            .map(|(i, &s)| Keypoint2d { x: (i % scores.width) as f64, y: (i / scores.width) as f64, score: s })
            .collect();
        let keypoints = nms_points(candidates, cfg.nms_radius, cfg.max_keypoints);
        let descriptors = keypoints
            .iter()
            .map(|k| {
                descriptor::sample_descriptor(&raw.coarse_descriptors, k.x, k.y).iter().map(|&v| v as f32).collect()
            })
            .collect();
        Ok(FeatureExtraction { keypoints, descriptors })
    }

    pub fn to_checkpoint(&self, metadata: serde_json::Value) -> Checkpoint {
        let tensors = self
            .param_names()
            .into_iter()
            .zip(self.param_shapes())
            .zip(self.params())
            .map(|((name, shape), data)| NamedTensor { name, shape, data: data.to_vec() })
            .collect();
        let meta = serde_json::json!({"network": self.config, "init_seed": self.seed, "extra": metadata});
        Checkpoint { metadata: meta, tensors }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let config: NetworkConfig = serde_json::from_value(ck.metadata["network"].clone())
            .map_err(|e| ModelError::Checkpoint(format!("network config: {e}")))?;
        let seed = ck.metadata["init_seed"].as_u64().unwrap_or(0);
        let mut net = Self::new(config, seed)?;
        let names = net.param_names();
        let shapes = net.param_shapes();
        for ((name, shape), dst) in names.iter().zip(&shapes).zip(net.params_mut()) {
            let t = ck.get(name).ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if &t.shape != shape {
                return Err(ModelError::Checkpoint(format!("tensor {name} has shape {:?}, expected {shape:?}", t.shape)));
            }
            dst.copy_from_slice(&t.data);
        }
        if !net.all_finite() {
            return Err(ModelError::Checkpoint("non-finite parameters".into()));
        }
        Ok(net)
    }
}

/// Network paired with its inference settings.
#[derive(Debug, Clone)]
pub struct NetworkExtractor {
    pub network: ExtractorNetwork,
    pub config: ExtractConfig,
}

impl FeatureExtractor for NetworkExtractor {
    fn extract(&self, image: &GrayImage) -> Result<FeatureExtraction, ModelError> {
        self.network.extract(image, &self.config)
    }
}

pub fn chw_to_hwc(x: &Chw) -> Hwc<f32> {
    let n = x.h * x.w;
    let mut out = Hwc::zeros(x.h, x.w, x.c);
    for c in 0..x.c {
        for i in 0..n {
            out.data[i * x.c + c] = x.data[c * n + i];
        }
    }
    out
}

pub fn hwc_to_chw(x: &Hwc<f64>) -> Chw {
    let n = x.h * x.w;
    let mut out = Chw::zeros(x.c, x.h, x.w);
    for i in 0..n {
        for c in 0..x.c {
            out.data[c * n + i] = x.data[i * x.c + c] as f32;
        }
    }
    out
}

/// Cell softmax with the dustbin dropped, rearranged to full resolution.
pub fn score_map(logits: &Chw) -> crate::raster::Raster<f64> {
    let (hc, wc) = (logits.h, logits.w);
    let n = hc * wc;
    let mut out = crate::raster::Raster::filled(wc * CELL, hc * CELL, 0.0f64);
    for r in 0..hc {
        for c in 0..wc {
            let i = r * wc + c;
            let m = (0..N_CLASSES).map(|k| logits.data[k * n + i] as f64).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..N_CLASSES).map(|k| (logits.data[k * n + i] as f64 - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for (k, ek) in e.iter().take(DUSTBIN).enumerate() {
                out.set(c * CELL + k % CELL, r * CELL + k / CELL, ek / z);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;

    fn tiny() -> NetworkConfig {
        NetworkConfig { widths: [4, 6, 8], head_width: 8, descriptor_dim: 16 }
    }

    #[test]
    fn zero_image_gives_finite_unit_descriptors() {
        let net = ExtractorNetwork::new(tiny(), 1).unwrap();
        let out = net.forward(&Raster::filled(32, 24, 0.0)).unwrap();
        assert_eq!((out.keypoint_logits.h, out.keypoint_logits.w, out.keypoint_logits.c), (3, 4, 65));
        assert!(out.keypoint_logits.data.iter().all(|v| v.is_finite()));
        for y in 0..24 {
            for x in 0..32 {
                let n: f32 = out.descriptor_map.pixel(y, x).iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((n - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn full_size_shape_contract() {
        let net = ExtractorNetwork::new(NetworkConfig { widths: [2, 2, 2], head_width: 2, descriptor_dim: 256 }, 0).unwrap();
        let img = Raster::from_fn(320, 240, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0);
        let out = net.forward(&img).unwrap();
        assert_eq!((out.keypoint_logits.h, out.keypoint_logits.w, out.keypoint_logits.c), (30, 40, 65));
        assert_eq!((out.descriptor_map.h, out.descriptor_map.w, out.descriptor_map.c), (240, 320, 256));
    }

    #[test]
    fn forward_is_deterministic_and_seeded() {
        let img = Raster::from_fn(16, 16, |x, y| ((x ^ y) & 3) as f32 / 3.0);
        let a = ExtractorNetwork::new(tiny(), 5).unwrap();
        let b = ExtractorNetwork::new(tiny(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.forward(&img).unwrap(), a.forward(&img).unwrap());
        assert_ne!(a, ExtractorNetwork::new(tiny(), 6).unwrap());
        assert_eq!(a.n_params(), b.n_params());
    }

    #[test]
    fn bad_shape_rejected() {
        let net = ExtractorNetwork::new(tiny(), 1).unwrap();
        assert!(matches!(net.forward(&Raster::filled(30, 24, 0.0)), Err(ModelError::BadShape(_))));
    }

    #[test]
    fn impossible_threshold_yields_nothing() {
        let net = ExtractorNetwork::new(tiny(), 1).unwrap();
        let img = Raster::from_fn(32, 32, |x, y| ((x / 4 + y / 4) % 2) as f32);
        let cfg = ExtractConfig { score_threshold: 1.0, ..Default::default() };
        assert!(net.extract(&img, &cfg).unwrap().keypoints.is_empty());
    }

    #[test]
    fn extraction_is_sorted_suppressed_and_matches_dense_map() {
        let net = ExtractorNetwork::new(tiny(), 3).unwrap();
        let img = Raster::from_fn(32, 24, |x, y| ((x / 5 + y / 3) % 2) as f32 * 0.8);
        let cfg = ExtractConfig { score_threshold: 0.0, nms_radius: 4.0, max_keypoints: 50 };
        let ex = net.extract(&img, &cfg).unwrap();
        assert!(!ex.keypoints.is_empty() && ex.keypoints.len() <= 50);
        for w in ex.keypoints.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
        for (i, a) in ex.keypoints.iter().enumerate() {
            for b in &ex.keypoints[i + 1..] {
                assert!((a.x - b.x).hypot(a.y - b.y) > 4.0);
            }
        }
        let dense = net.forward(&img).unwrap();
        for (k, d) in ex.keypoints.iter().zip(&ex.descriptors) {
            let p = dense.descriptor_map.pixel(k.y as usize, k.x as usize);
            assert!(p.iter().zip(d).all(|(a, b)| (a - b).abs() < 1e-6));
        }
    }

    #[test]
    fn score_map_is_softmax_without_dustbin() {
        let mut logits = Chw::zeros(65, 1, 1);
        logits.data[42] = 3.0;
        let s = score_map(&logits);
        let z = 64.0 + 3f64.exp();
        assert!((s.get(2, 5) - 3f64.exp() / z).abs() < 1e-12);
        assert!((s.get(0, 0) - 1.0 / z).abs() < 1e-12);
        let total: f64 = s.data.iter().sum();
        assert!((total - (63.0 + 3f64.exp()) / z).abs() < 1e-12);
    }

    #[test]
    fn network_backward_matches_finite_differences() {
        let net = ExtractorNetwork::new(NetworkConfig { widths: [2, 3, 4], head_width: 3, descriptor_dim: 5 }, 9).unwrap();
        let img = Raster::from_fn(16, 8, |x, y| ((x * 13 + y * 7) % 17) as f32 / 16.0);
        let (raw, cache) = net.forward_raw(&img).unwrap();
        let gl: Vec<f32> = (0..raw.logits.data.len()).map(|i| ((i * 37 % 11) as f32 - 5.0) / 5.0).collect();
        let gd: Vec<f32> = (0..raw.coarse_descriptors.data.len()).map(|i| ((i * 17 % 7) as f32 - 3.0) / 3.0).collect();
        let loss = |n: &ExtractorNetwork| -> f64 {
            let (r, _) = n.forward_raw(&img).unwrap();
            r.logits.data.iter().zip(&gl).chain(r.coarse_descriptors.data.iter().zip(&gd)).map(|(a, b)| (*a * *b) as f64).sum()
        };
        let grads = net.backward(
            &cache,
            Chw { data: gl.clone(), ..raw.logits.clone() },
            Chw { data: gd.clone(), ..raw.coarse_descriptors.clone() },
        );
        let eps = 3e-3f32;
        // a step of 1e-2 straddles ReLU kinks on this input
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(7) {
                let mut p = net.clone();
                p.params_mut()[pi][j] += eps;
                let lp = loss(&p);
                p.params_mut()[pi][j] -= 2.0 * eps;
                let lm = loss(&p);
                let fd = (lp - lm) / (2.0 * eps as f64);
                assert!((fd - g[j] as f64).abs() < 2e-2 * (1.0 + fd.abs()), "param {pi}[{j}]: fd {fd} vs analytic {}", g[j]);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = ExtractorNetwork::new(tiny(), 4).unwrap();
        let ck = net.to_checkpoint(serde_json::json!({"step": 3}));
        let back = ExtractorNetwork::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back, net);
        let mut broken = ck.clone();
        broken.tensors.pop();
        assert!(ExtractorNetwork::from_checkpoint(&broken).is_err());
    }
}
