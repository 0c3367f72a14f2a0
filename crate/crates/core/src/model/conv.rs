//! 2D convolution on CHW feature maps via im2col + SGEMM, with explicit backward.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Channel-major feature map: `data[(c * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chw {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Chw {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

/// `C = A·B + beta·C` with row-major `A: m×k`, `B: k×n`, `C: m×n`.
/// Transposes are expressed through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element addressed by the given strides.
    unsafe {
        matrixmultiply::sgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub relu: bool,
    /// `cout × (cin·k·k)`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    /// im2col matrix (or the input itself for 1×1 stride-1 layers).
    cols: Vec<f32>,
    in_shape: (usize, usize, usize),
    /// Post-activation output, used for the ReLU mask.
    out: Chw,
}

impl Conv2d {
    /// He-normal weights, zero bias.
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, relu: bool, rng: &mut R) -> Self {
        let fan_in = cin * k * k;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = (0..cout * fan_in).map(|_| (rng.sample::<f64, _>(StandardNormal) * std) as f32).collect();
        Self { cin, cout, k, stride, relu, weight, bias: vec![0.0; cout] }
    }

    fn pad(&self) -> usize {
        self.k / 2
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let p = 2 * self.pad();
        ((h + p - self.k) / self.stride + 1, (w + p - self.k) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    fn im2col(&self, x: &Chw, ho: usize, wo: usize) -> Vec<f32> {
        let (k, s, p) = (self.k, self.stride, self.pad() as isize);
        let n = ho * wo;
        let mut cols = vec![0.0f32; self.cin * k * k * n];
        for ci in 0..self.cin {
            let plane = x.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..][..x.w];
                        let dst = &mut row[oy * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, ho: usize, wo: usize) -> Chw {
        let (k, s, p) = (self.k, self.stride, self.pad() as isize);
        let n = ho * wo;
        let mut x = Chw::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let plane = &mut x.data[ci * h * w..][..h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * n..][..n];
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..wo {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                plane[iy as usize * w + ix as usize] += row[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward(&self, x: &Chw) -> (Chw, ConvCache) {
        assert_eq!(x.c, self.cin, "channel mismatch");
        let (ho, wo) = self.out_size(x.h, x.w);
        let cols = if self.is_pointwise() { x.data.clone() } else { self.im2col(x, ho, wo) };
        let n = ho * wo;
        let mut out = Chw::zeros(self.cout, ho, wo);
        for (co, b) in self.bias.iter().enumerate() {
            out.data[co * n..(co + 1) * n].fill(*b);
        }
        gemm(self.cout, self.cin * self.k * self.k, n, &self.weight, false, &cols, false, 1.0, &mut out.data);
        if self.relu {
            out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let cache = ConvCache { cols, in_shape: (x.c, x.h, x.w), out: out.clone() };
        (out, cache)
    }

    /// Accumulates parameter gradients into `dw`/`db`; returns the input
    /// gradient when `need_input` is set.
    pub fn backward(
        &self,
        cache: &ConvCache,
        dout: &Chw,
        dw: &mut [f32],
        db: &mut [f32],
        need_input: bool,
    ) -> Option<Chw> {
        let (ho, wo) = (cache.out.h, cache.out.w);
        let n = ho * wo;
        let mut g = dout.data.clone();
        if self.relu {
            g.iter_mut().zip(&cache.out.data).for_each(|(g, o)| {
                if *o <= 0.0 {
                    *g = 0.0
                }
            });
        }
        let kk = self.cin * self.k * self.k;
        gemm(self.cout, n, kk, &g, false, &cache.cols, true, 1.0, dw);
        for (co, d) in db.iter_mut().enumerate() {
            *d += g[co * n..(co + 1) * n].iter().sum::<f32>();
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![0.0f32; kk * n];
        gemm(kk, self.cout, n, &self.weight, true, &g, false, 0.0, &mut dcols);
        let (c, h, w) = cache.in_shape;
        if self.is_pointwise() {
            return Some(Chw { c, h, w, data: dcols });
        }
        Some(self.col2im(&dcols, h, w, ho, wo))
    }
}
