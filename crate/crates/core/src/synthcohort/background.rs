use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

/// Supplies the scene a lesion series is drawn over.
pub trait BackgroundSource: Send + Sync {
    /// A `size × size` image in `[0, 1]`.
    fn sample(&self, rng: &mut Rng, size: usize) -> Image;
}

/// Smoothed white noise rescaled to `[0, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProceduralBackground {
    pub sigma: f64,
    pub max: f64,
}

impl Default for ProceduralBackground {
    fn default() -> Self {
        Self { sigma: 2.0, max: 0.6 }
    }
}

impl BackgroundSource for ProceduralBackground {
    fn sample(&self, rng: &mut Rng, size: usize) -> Image {
        let noise: Vec<f64> = (0..size * size).map(|_| StandardNormal.sample(rng)).collect();
        let img = Image::new(size, size, noise).expect("finite noise").gaussian_blur(self.sigma);
        let lo = img.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = img.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        img.map(|v| if span > 0.0 { (v - lo) / span * self.max } else { 0.0 })
    }
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_RECORD_LEN: usize = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE;

/// Grayscale CIFAR-10 images used as backgrounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CifarBackgrounds {
    images: Vec<Image>,
    labels: Vec<u8>,
}

impl CifarBackgrounds {
    /// Parses the binary batch layout: per record one label byte, then the
    /// 32×32 red, green and blue planes.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.is_empty() {
            return Err(Error::Config("CIFAR file is empty".into()));
        }
        if bytes.len() % CIFAR_RECORD_LEN != 0 {
            let offset = bytes.len() - bytes.len() % CIFAR_RECORD_LEN;
            return Err(Error::Config(format!(
                "CIFAR file truncated: incomplete record at byte offset {offset} (length {})",
                bytes.len()
            )));
        }
        let plane = CIFAR_SIDE * CIFAR_SIDE;
        let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
        let mut labels = Vec::with_capacity(images.capacity());
        for (i, rec) in bytes.chunks_exact(CIFAR_RECORD_LEN).enumerate() {
            if rec[0] > 9 {
                return Err(Error::Config(format!(
                    "CIFAR label {} > 9 at byte offset {}",
                    rec[0],
                    i * CIFAR_RECORD_LEN
                )));
            }
            labels.push(rec[0]);
            let (r, rest) = rec[1..].split_at(plane);
            let (g, b) = rest.split_at(plane);
            let data =
                (0..plane).map(|p| (0.299 * r[p] as f64 + 0.587 * g[p] as f64 + 0.114 * b[p] as f64) / 255.0).collect();
            images.push(Image::new(CIFAR_SIDE, CIFAR_SIDE, data)?);
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }
}

impl BackgroundSource for CifarBackgrounds {
    fn sample(&self, rng: &mut Rng, size: usize) -> Image {
        let i = rng.random_range(0..self.images.len());
        self.images[i].resize(size, size).map(|v| v.clamp(0.0, 1.0))
    }
}
