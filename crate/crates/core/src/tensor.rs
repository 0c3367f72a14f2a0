//! Height × width × channel arrays.

use serde::{Deserialize, Serialize};

/// Row-major `h × w × c` array: `data[(y * w + x) * c + ch]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hwc<T> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Hwc<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![T::default(); h * w * c] }
    }
}

impl<T: Copy> Hwc<T> {
    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w * c, "data length does not match {h}×{w}×{c}");
        Self { h, w, c, data }
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let i = (y * self.w + x) * self.c;
        &mut self.data[i..i + self.c]
    }

    pub fn n_pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn same_shape<U>(&self, other: &Hwc<U>) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Hwc<U> {
        Hwc { h: self.h, w: self.w, c: self.c, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}
