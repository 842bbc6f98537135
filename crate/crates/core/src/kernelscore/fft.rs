//! Discrete Fourier transforms for small real images: iterative radix-2
//! when the length is a power of two, direct summation otherwise.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const ZERO: Self = Self { re: 0.0, im: 0.0 };

    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn cis(theta: f64) -> Self {
        let (s, c) = libm::sincos(theta);
        Self { re: c, im: s }
    }

    pub fn norm_sqr(self) -> f64 {
        self.re * self.re + self.im * self.im
    }

    pub fn abs(self) -> f64 {
        libm::hypot(self.re, self.im)
    }

    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// Forward transform `X[k] = Σ x[n]·exp(−2πi·kn/N)` in place.
pub fn fft(buf: &mut [Complex]) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(buf);
    } else {
        let out = dft(buf);
        buf.copy_from_slice(&out);
    }
}

fn radix2(buf: &mut [Complex]) {
    let n = buf.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let twiddles: Vec<Complex> = (0..half).map(|k| Complex::cis(-TAU * k as f64 / len as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half].mul(twiddles[k]);
                buf[start + k] = a.add(b);
                buf[start + k + half] = a.sub(b);
            }
        }
        len *= 2;
    }
}

fn dft(x: &[Complex]) -> Vec<Complex> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter().enumerate().fold(Complex::ZERO, |acc, (j, &v)| {
                // Reduce kj mod n before scaling to keep the angle small.
                acc.add(v.mul(Complex::cis(-TAU * ((k * j) % n) as f64 / n as f64)))
            })
        })
        .collect()
}

/// 2D transform of a row-major real `h × w` array.
pub fn fft2(h: usize, w: usize, data: &[f64]) -> Vec<Complex> {
    let mut buf: Vec<Complex> = data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        fft(row);
    }
    let mut col = vec![Complex::ZERO; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        fft(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf
}

/// Magnitudes with the zero frequency moved to `(h/2, w/2)`.
pub fn centered_magnitude(h: usize, w: usize, spec: &[Complex]) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = ((y + h / 2) % h, (x + w / 2) % w);
            out[sy * w + sx] = spec[y * w + x].abs();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn close(a: &[Complex], b: &[Complex], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| x.sub(*y).abs() <= tol)
    }

    #[test]
    fn radix2_matches_direct() {
        let mut r = crate::rng::seeded(0);
        for n in [2usize, 4, 8, 32, 64] {
            let x: Vec<Complex> = (0..n).map(|_| Complex::new(r.random(), r.random())).collect();
            let mut y = x.clone();
            fft(&mut y);
            assert!(close(&y, &dft(&x), 1e-12), "n={n}");
        }
    }

    #[test]
    fn impulse_is_flat_and_constant_is_dc() {
        let mut x = vec![Complex::ZERO; 12];
        x[0] = Complex::new(1.0, 0.0);
        fft(&mut x);
        assert!(x.iter().all(|v| (v.re - 1.0).abs() < 1e-12 && v.im.abs() < 1e-12));

        let mut c = vec![Complex::new(0.3, 0.0); 16];
        fft(&mut c);
        assert!((c[0].re - 4.8).abs() < 1e-12);
        assert!(c[1..].iter().all(|v| *v == Complex::ZERO));
    }

    #[test]
    fn single_cosine_lands_on_its_bin() {
        let (h, w) = (8, 16);
        let data: Vec<f64> = (0..h * w).map(|i| libm::cos(TAU * 3.0 * (i % w) as f64 / w as f64)).collect();
        let mag = centered_magnitude(h, w, &fft2(h, w, &data));
        // Bins ±3 along x on the centre row, each carrying h·w/2.
        let centre = (h / 2) * w + w / 2;
        assert!((mag[centre + 3] - 64.0).abs() < 1e-9 && (mag[centre - 3] - 64.0).abs() < 1e-9);
        let rest: f64 = mag.iter().sum::<f64>() - mag[centre + 3] - mag[centre - 3];
        assert!(rest < 1e-9);
    }
}
