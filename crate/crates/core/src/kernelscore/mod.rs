//! Reconstruction-kernel softness: spectral energy on the largest circle
//! inscribed in the centered DFT magnitude of an image. Softer (smoother)
//! images carry less energy there.

mod fft;

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub use fft::{centered_magnitude, fft, fft2, Complex};

pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftnessConfig {
    pub n_theta: usize,
    /// Number of concentric circles summed, moving inward one frequency
    /// unit at a time from the maximal radius.
    pub ring_width: usize,
}

impl Default for SoftnessConfig {
    fn default() -> Self {
        Self { n_theta: 720, ring_width: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftnessScore {
    pub value: f64,
    pub radius: f64,
    pub n_theta: usize,
}

pub fn softness_score(image: &Image, n_theta: usize) -> Result<SoftnessScore> {
    softness_score_with(image, &SoftnessConfig { n_theta, ..SoftnessConfig::default() })
}

/// `Σ_θ v(θ)²·r·2π/n_theta` where `v(θ)` is the bilinearly sampled magnitude
/// at radius `r = ⌊min(H,W)/2⌋ − 1` around the zero frequency.
pub fn softness_score_with(image: &Image, cfg: &SoftnessConfig) -> Result<SoftnessScore> {
    let (h, w) = (image.height(), image.width());
    if h < MIN_SIDE || w < MIN_SIDE {
        return Err(Error::ImageTooSmall { height: h, width: w, min: MIN_SIDE });
    }
    if cfg.n_theta == 0 || cfg.ring_width == 0 {
        return Err(Error::Config("n_theta and ring_width must be positive".into()));
    }
    let radius = (h.min(w) / 2 - 1) as f64;
    if cfg.ring_width as f64 > radius {
        return Err(Error::Config(format!("ring_width {} exceeds radius {radius}", cfg.ring_width)));
    }
    // A constant offset only moves the zero frequency, which the ring never
    // samples; removing one keeps its roundoff out of the ring.
    let offset = image.data()[0];
    let shifted: Vec<f64> = image.data().iter().map(|v| v - offset).collect();
    let mag = Image::new(h, w, centered_magnitude(h, w, &fft2(h, w, &shifted)))?;
    let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
    let dtheta = TAU / cfg.n_theta as f64;
    let mut value = 0.0;
    for ring in 0..cfg.ring_width {
        let r = radius - ring as f64;
        let mut sum = 0.0;
        for j in 0..cfg.n_theta {
            let (s, c) = libm::sincos(j as f64 * dtheta);
            let v = mag.bilinear(cy + r * s, cx + r * c);
            sum += v * v;
        }
        value += sum * r * dtheta;
    }
    Ok(SoftnessScore { value, radius, n_theta: cfg.n_theta })
}

/// Index of the softest image; the lowest index wins ties.
pub fn select_softest(images: &[Image]) -> Result<usize> {
    select_softest_with(images, &SoftnessConfig::default())
}

pub fn select_softest_with(images: &[Image], cfg: &SoftnessConfig) -> Result<usize> {
    let first = images.first().ok_or_else(|| Error::Empty("select_softest got no images".into()))?;
    if images.iter().any(|im| im.height() != first.height() || im.width() != first.width()) {
        return Err(Error::Shape("select_softest needs equally sized images".into()));
    }
    let scores: Vec<f64> =
        images.iter().map(|im| softness_score_with(im, cfg).map(|s| s.value)).collect::<Result<_>>()?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(seed: u64, h: usize, w: usize) -> Image {
        let mut r = crate::rng::seeded(seed);
        Image::new(h, w, (0..h * w).map(|_| StandardNormal.sample(&mut r)).collect()).unwrap()
    }

    #[test]
    fn constant_image_scores_zero() {
        let s = softness_score(&Image::filled(32, 32, 0.7), 720).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.radius, 15.0);
    }

    #[test]
    fn too_small_rejected() {
        assert!(matches!(softness_score(&Image::filled(7, 32, 0.0), 720), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn non_power_of_two_sides() {
        let img = noise(1, 20, 24);
        let s = softness_score(&img, 360).unwrap();
        assert!(s.value > 0.0 && s.radius == 9.0);
        let b = softness_score(&img.gaussian_blur(1.0), 360).unwrap();
        assert!(b.value < s.value);
    }

    #[test]
    fn wider_ring_adds_energy() {
        let img = noise(2, 32, 32);
        let one = softness_score_with(&img, &SoftnessConfig { n_theta: 720, ring_width: 1 }).unwrap();
        let three = softness_score_with(&img, &SoftnessConfig { n_theta: 720, ring_width: 3 }).unwrap();
        assert!(three.value > one.value);
    }

    #[test]
    fn selection_rules() {
        let img = noise(3, 16, 16);
        assert_eq!(select_softest(core::slice::from_ref(&img)).unwrap(), 0);
        assert_eq!(select_softest(&[img.clone(), img.clone()]).unwrap(), 0);
        assert_eq!(select_softest(&[img.clone(), img.gaussian_blur(1.0), img.gaussian_blur(0.5)]).unwrap(), 1);
        assert!(select_softest(&[]).is_err());
        assert!(select_softest(&[img, Image::filled(8, 8, 0.0)]).is_err());
    }

    #[test]
    fn scores_are_non_negative() {
        for seed in 0..10 {
            assert!(softness_score(&noise(seed, 12, 12), 90).unwrap().value >= 0.0);
        }
    }
}
