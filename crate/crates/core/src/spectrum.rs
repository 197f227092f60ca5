//! Fourier power spectra and an orientation-anisotropy score.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Power spectrum `|F(u, v)|²` of the first channel of a `[c, h, w]` image
/// with its mean removed, in FFT order (`h × w`, row-major).
pub fn power_spectrum(image: &Tensor<f32>) -> Result<(usize, usize, Vec<f64>)> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected a [c, h, w] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = &image.data()[..h * w];
    let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / (h * w) as f64;
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v as f64 - mean, 0.0)).collect();
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    Ok((h, w, buf.iter().map(|c| c.norm_sqr()).collect()))
}

/// Signed frequency of FFT bin `i` out of `n`.
fn signed(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}

/// Share of spectral energy within `radius` bins (per axis) of the
/// frequency `±(fy, fx)`, in cycles per image.
pub fn energy_near(image: &Tensor<f32>, fy: f64, fx: f64, radius: f64) -> Result<f64> {
    let (h, w, p) = power_spectrum(image)?;
    let (mut near, mut total) = (0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (v, u) = (signed(y, h), signed(x, w));
            let e = p[y * w + x];
            total += e;
            let close = |sy: f64, sx: f64| (v - sy).abs() <= radius && (u - sx).abs() <= radius;
            if close(fy, fx) || close(-fy, -fx) {
                near += e;
            }
        }
    }
    Ok(if total > 0.0 { near / total } else { 0.0 })
}

/// Energy-weighted orientation coherence `|Σ P e^{2iφ}| / Σ P` over all
/// non-DC frequencies, where `φ` is the frequency's angle. Zero for an
/// isotropic spectrum, one for a single orientation.
pub fn anisotropy(image: &Tensor<f32>) -> Result<f64> {
    let (h, w, p) = power_spectrum(image)?;
    let (mut re, mut im, mut total) = (0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            if x == 0 && y == 0 {
                continue;
            }
            let (v, u) = (signed(y, h) / h as f64, signed(x, w) / w as f64);
            let r2 = u * u + v * v;
            let e = p[y * w + x];
            // e^{2iφ} = ((u² - v²) + 2iuv) / r²
            re += e * (u * u - v * v) / r2;
            im += e * 2.0 * u * v / r2;
            total += e;
        }
    }
    Ok(if total > 0.0 { (re * re + im * im).sqrt() / total } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{generate_texture, TextureParams};

    fn params(orientation: f64, gw: f64, jitter: f64) -> TextureParams {
        TextureParams {
            orientation,
            wavelength: 8.0,
            grating_weight: gw,
            noise_weight: 1.0 - gw,
            jitter,
            amplitude: 1.0,
            blob_scale: 5.0,
            seed: 11,
        }
    }

    #[test]
    fn pure_grating_energy_is_at_its_frequency() {
        // 64 px at wavelength 8: 8 cycles per image along x
        let img = generate_texture(&params(0.0, 1.0, 0.0), 64, 64).unwrap();
        assert!(energy_near(&img, 0.0, 8.0, 0.0).unwrap() >= 0.95);
        let img = generate_texture(&params(std::f64::consts::FRAC_PI_2, 1.0, 0.0), 64, 64).unwrap();
        assert!(energy_near(&img, 8.0, 0.0, 0.0).unwrap() >= 0.95);
    }

    #[test]
    fn anisotropy_orders_grating_and_noise() {
        let grating = anisotropy(&generate_texture(&params(0.7, 1.0, 0.0), 64, 64).unwrap()).unwrap();
        let mixed = anisotropy(&generate_texture(&params(0.7, 0.5, 0.3), 64, 64).unwrap()).unwrap();
        let noise = anisotropy(&generate_texture(&params(0.7, 0.0, 0.0), 64, 64).unwrap()).unwrap();
        assert!(grating > 0.9, "{grating}");
        assert!(grating > mixed && mixed > noise, "{grating} {mixed} {noise}");
        assert!(noise < 0.3, "{noise}");
    }

    #[test]
    fn flat_image_scores_zero() {
        let flat = Tensor::filled(&[1, 8, 8], 0.3f32);
        assert_eq!(anisotropy(&flat).unwrap(), 0.0);
    }
}
