use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::model::FeatureExtractor;
use crate::raster::{GrayImage, Raster};

/// Published per-frame timings at 320×240, reported next to local numbers.
pub const REFERENCE_GPU_MS: f64 = 20.73;
pub const REFERENCE_CPU_MS: f64 = 44.61;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub mean_ms: f64,
    pub std_ms: f64,
    pub n_frames: usize,
    pub warmup: usize,
    pub width: usize,
    pub height: usize,
    pub reference_gpu_ms: f64,
    pub reference_cpu_ms: f64,
}

/// Blocky random texture, so detection does work comparable to real input.
fn frame(width: usize, height: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let (bw, bh) = (width.div_ceil(8), height.div_ceil(8));
    let blocks: Vec<f32> = (0..bw * bh).map(|_| rng.gen_range(0.05..0.95)).collect();
    Raster::from_fn(width, height, |x, y| blocks[(y / 8) * bw + x / 8])
}

/// Times full extraction (network + keypoints + descriptors) per frame.
/// Warmup frames are excluded.
pub fn runtime_benchmark(
    extractor: &dyn FeatureExtractor,
    n_frames: usize,
    warmup: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<BenchmarkReport, EvalError> {
    if n_frames == 0 {
        return Err(EvalError::InvalidInput("n_frames must be ≥ 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<GrayImage> = (0..4).map(|_| frame(width, height, &mut rng)).collect();
    for i in 0..warmup {
        extractor.extract(&frames[i % frames.len()])?;
    }
    let mut times = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = Instant::now();
        let out = extractor.extract(&frames[i % frames.len()])?;
        std::hint::black_box(out);
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = times.iter().sum::<f64>() / n_frames as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n_frames.max(2) - 1) as f64;
    Ok(BenchmarkReport {
        mean_ms: mean,
        std_ms: var.sqrt(),
        n_frames,
        warmup,
        width,
        height,
        reference_gpu_ms: REFERENCE_GPU_MS,
        reference_cpu_ms: REFERENCE_CPU_MS,
    })
}

impl BenchmarkReport {
    pub fn to_text(&self) -> String {
        format!(
            "{}×{} over {} frames ({} warmup): {:.2} ± {:.2} ms/frame\nreference: {:.2} ms GPU, {:.2} ms CPU\n",
            self.width,
            self.height,
            self.n_frames,
            self.warmup,
            self.mean_ms,
            self.std_ms,
            self.reference_gpu_ms,
            self.reference_cpu_ms
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExtractConfig, ExtractorNetwork, NetworkConfig, NetworkExtractor};

    #[test]
    fn small_model_reports_positive_runtime() {
        let config = NetworkConfig { widths: [4, 4, 4], head_width: 4, descriptor_dim: 8 };
        let ex = NetworkExtractor { network: ExtractorNetwork::new(config, 1).unwrap(), config: ExtractConfig::default() };
        let r = runtime_benchmark(&ex, 20, 3, 64, 48, 0).unwrap();
        assert!(r.mean_ms > 0.0 && r.std_ms >= 0.0);
        assert_eq!(r.reference_cpu_ms, 44.61);
        assert!(r.to_text().contains("44.61"));
    }
}
