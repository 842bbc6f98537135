//! Grayscale images and the few pixel operations shared by the renderer and
//! the softness scorer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!("image dims {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!("{}x{} image with {} pixels", height, width, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self { height, width, data: vec![value; height * width] }
    }

    pub fn from_f32(height: usize, width: usize, data: &[f32]) -> Result<Self> {
        Self::new(height, width, data.iter().map(|&v| v as f64).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { height: self.height, width: self.width, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Quarter turn counter-clockwise.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                // (y, x) -> (w-1-x, y) in a w×h image
                out[(w - 1 - x) * h + y] = self.data[y * w + x];
            }
        }
        Self { height: w, width: h, data: out }
    }

    /// Separable Gaussian filter with reflected borders.
    pub fn gaussian_blur(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = libm::ceil(3.0 * sigma) as isize;
        let mut kernel: Vec<f64> =
            (-radius..=radius).map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma))).collect();
        let norm: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= norm);

        let (h, w) = (self.height as isize, self.width as isize);
        let mut tmp = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let xx = reflect(x + j as isize - radius, w);
                    acc += k * self.data[(y * w + xx) as usize];
                }
                tmp[(y * w + x) as usize] = acc;
            }
        }
        let mut out = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let yy = reflect(y + j as isize - radius, h);
                    acc += k * tmp[(yy * w + x) as usize];
                }
                out[(y * w + x) as usize] = acc;
            }
        }
        Self { height: self.height, width: self.width, data: out }
    }

    /// Bilinear resample to `height`×`width` (pixel-centre aligned).
    pub fn resize(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                out.push(self.bilinear(fy, fx));
            }
        }
        Self { height, width, data: out }
    }

    /// Bilinear sample at fractional coordinates inside the image.
    pub fn bilinear(&self, fy: f64, fx: f64) -> f64 {
        let y0 = libm::floor(fy) as usize;
        let x0 = libm::floor(fx) as usize;
        let y1 = (y0 + 1).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let ty = fy - y0 as f64;
        let tx = fx - x0 as f64;
        let top = self.get(y0, x0) * (1.0 - tx) + self.get(y0, x1) * tx;
        let bot = self.get(y1, x0) * (1.0 - tx) + self.get(y1, x1) * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn reflect(i: isize, n: isize) -> isize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i
}
