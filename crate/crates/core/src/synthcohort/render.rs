use alloc::vec::Vec;

use rand::Rng as _;

use super::background::BackgroundSource;
use super::NoduleParams;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderConfig {
    pub image_size: usize,
    pub t_max: f64,
    pub p_snp: f64,
    pub px_per_unit: f64,
    pub max_shift: f64,
    pub intensity: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { image_size: 32, t_max: 2.0, p_snp: 0.02, px_per_unit: 1.5, max_shift: 4.0, intensity: 0.9 }
    }
}

/// Placement shared by every frame of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub dx: f64,
    pub dy: f64,
    pub angle: f64,
    /// Long over short semi-axis is `eccentricity`; each is `r` scaled by its square root.
    pub eccentricity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSeries {
    pub frames: Vec<Vec<f32>>,
    pub timestamps: Vec<f32>,
    pub transform: Transform,
    pub clipped: bool,
}

fn sample_timestamps(rng: &mut Rng, n: usize, t_max: f64) -> Vec<f32> {
    loop {
        // 1 - U[0,1) lies in (0, 1].
        let mut t: Vec<f64> = (1..n).map(|_| t_max * (1.0 - rng.random::<f64>())).collect();
        t.sort_by(f64::total_cmp);
        let mut out = Vec::with_capacity(n);
        out.push(0.0f32);
        out.extend(t.iter().map(|&v| v as f32));
        if out.windows(2).all(|w| w[1] > w[0]) {
            return out;
        }
    }
}

/// Lesion opacity in `[0, 1]` at time `t`: an elliptical Gaussian
/// profile reaching one half on the ellipse whose semi-axes are
/// `r·√e` and `r/√e`, `r = px_per_unit·(s + g·t)`. Returns the opacity map
/// and whether the radius had to be clipped to the frame.
pub fn lesion_mask(params: &NoduleParams, t: f64, tf: &Transform, cfg: &RenderConfig) -> (Image, bool) {
    let size = cfg.image_size;
    let half = size as f64 / 2.0;
    let sq = libm::sqrt(tf.eccentricity);
    let mut r = cfg.px_per_unit * (params.s + params.g * t);
    let mut clipped = false;
    if r * sq > half {
        r = half / sq;
        clipped = true;
    }
    let (a, b) = (r * sq, r / sq);
    let (sin, cos) = libm::sincos(tf.angle);
    let cy = half - 0.5 + tf.dy;
    let cx = half - 0.5 + tf.dx;
    let mut out = Image::filled(size, size, 0.0);
    let data = out.data_mut();
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f64 - cy, x as f64 - cx);
            let u = cos * px + sin * py;
            let v = -sin * px + cos * py;
            let q2 = (u / a) * (u / a) + (v / b) * (v / b);
            data[y * size + x] = libm::exp(-core::f64::consts::LN_2 * q2);
        }
    }
    (out, clipped)
}

/// Renders a growing lesion over one background: `n_frames` frames at
/// `t0 = 0` and sorted uniform times in `(0, t_max]`, with a single random
/// translation, rotation and eccentricity per series and independent
/// salt-and-pepper noise per frame.
pub fn render_series(
    params: &NoduleParams,
    bg: &dyn BackgroundSource,
    rng: &mut Rng,
    n_frames: usize,
    cfg: &RenderConfig,
) -> Result<RenderedSeries> {
    if n_frames == 0 {
        return Err(Error::Contract("render_series needs at least one frame".into()));
    }
    let size = cfg.image_size;
    let timestamps = sample_timestamps(rng, n_frames, cfg.t_max);
    let transform = Transform {
        dx: rng.random_range(-cfg.max_shift..=cfg.max_shift),
        dy: rng.random_range(-cfg.max_shift..=cfg.max_shift),
        angle: rng.random_range(0.0..core::f64::consts::TAU),
        eccentricity: rng.random_range(1.0..=1.5),
    };
    let background = bg.sample(rng, size);
    if background.height() != size || background.width() != size {
        return Err(Error::Shape("background size differs from image_size".into()));
    }
    let mut clipped = false;
    let mut frames = Vec::with_capacity(n_frames);
    for &t in &timestamps {
        let (alpha, c) = lesion_mask(params, t as f64, &transform, cfg);
        clipped |= c;
        let frame: Vec<f32> = background
            .data()
            .iter()
            .zip(alpha.data())
            .map(|(&b, &a)| {
                let v = b * (1.0 - a) + cfg.intensity * a;
                let u: f64 = rng.random();
                let v = if u < cfg.p_snp / 2.0 {
                    0.0
                } else if u < cfg.p_snp {
                    1.0
                } else {
                    v
                };
                v.clamp(0.0, 1.0) as f32
            })
            .collect();
        frames.push(frame);
    }
    Ok(RenderedSeries { frames, timestamps, transform, clipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::synthcohort::ProceduralBackground;

    fn flat(v: f64) -> impl BackgroundSource {
        struct Flat(f64);
        impl BackgroundSource for Flat {
            fn sample(&self, _: &mut Rng, size: usize) -> Image {
                Image::filled(size, size, self.0)
            }
        }
        Flat(v)
    }

    #[test]
    fn timestamps_start_at_zero_and_increase() {
        let mut r = rng::seeded(2);
        for _ in 0..200 {
            let t = sample_timestamps(&mut r, 5, 2.0);
            assert_eq!(t[0], 0.0);
            assert!(t.windows(2).all(|w| w[1] > w[0]));
            assert!(t[4] <= 2.0);
        }
    }

    #[test]
    fn five_frames_in_unit_range() {
        let mut r = rng::seeded(4);
        let p = NoduleParams { s: 3.0, g: 1.5 };
        let s = render_series(&p, &ProceduralBackground::default(), &mut r, 5, &RenderConfig::default()).unwrap();
        assert_eq!(s.frames.len(), 5);
        assert_eq!(s.timestamps[0], 0.0);
        assert!(s.frames.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn half_opacity_on_nominal_radius() {
        // Centre lands on pixel (16, 16); r = 1.5 * 4 = 6 px.
        let tf = Transform { dx: 0.5, dy: 0.5, angle: 0.0, eccentricity: 1.0 };
        let (m, clipped) = lesion_mask(&NoduleParams { s: 4.0, g: 0.0 }, 0.0, &tf, &RenderConfig::default());
        assert!(!clipped);
        assert_eq!(m.get(16, 16), 1.0);
        assert!((m.get(16, 22) - 0.5).abs() < 1e-15);
        assert!((m.get(10, 16) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn oversized_lesion_is_clipped() {
        let cfg = RenderConfig::default();
        let tf = Transform { dx: 0.0, dy: 0.0, angle: 0.0, eccentricity: 1.5 };
        let (_, clipped) = lesion_mask(&NoduleParams { s: 30.0, g: 0.0 }, 0.0, &tf, &cfg);
        assert!(clipped);
        let (_, clipped) = lesion_mask(&NoduleParams { s: 3.0, g: 1.5 }, 2.0, &tf, &cfg);
        assert!(!clipped);
    }

    #[test]
    fn noise_free_composite_on_flat_background() {
        let cfg = RenderConfig { p_snp: 0.0, ..Default::default() };
        let mut r = rng::seeded(0);
        let s = render_series(&NoduleParams { s: 1.0, g: 0.5 }, &flat(0.2), &mut r, 1, &cfg).unwrap();
        let lo = s.frames[0].iter().copied().fold(f32::INFINITY, f32::min);
        let hi = s.frames[0].iter().copied().fold(0.0f32, f32::max);
        assert!(lo >= 0.2 - 1e-6 && hi <= 0.9 + 1e-6 && hi > 0.8);
    }

    #[test]
    fn salt_and_pepper_rate() {
        let cfg = RenderConfig { p_snp: 0.2, ..Default::default() };
        let mut r = rng::seeded(1);
        let s = render_series(&NoduleParams { s: 0.01, g: 0.01 }, &flat(0.5), &mut r, 5, &cfg).unwrap();
        let px: Vec<f32> = s.frames.into_iter().flatten().collect();
        let zeros = px.iter().filter(|&&v| v == 0.0).count() as f64 / px.len() as f64;
        let ones = px.iter().filter(|&&v| v == 1.0).count() as f64 / px.len() as f64;
        let se = libm::sqrt(0.1 * 0.9 / px.len() as f64);
        assert!((zeros - 0.1).abs() < 4.0 * se && (ones - 0.1).abs() < 4.0 * se, "{zeros} {ones}");
    }
}
