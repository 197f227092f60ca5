//! Seeded procedural textures with analytically known attributes.
//!
//! A texture is an oriented sinusoidal grating with a smoothly warped phase
//! blended with smooth value noise:
//!
//! ```text
//! v(x, y) = amplitude * (gw * sin(2π (x cosθ + y sinθ) / λ + 2π jitter P(x, y))
//!                        + nw * V(x, y))
//! ```
//!
//! `P` and `V` are value noise on lattices anchored to absolute pixel
//! coordinates, so any window of a large texture equals the texture rendered
//! directly at that offset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::*;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureParams {
    /// Grating angle in `[0, π)`.
    pub orientation: f64,
    /// Grating period in pixels.
    pub wavelength: f64,
    pub grating_weight: f64,
    pub noise_weight: f64,
    /// Phase irregularity in `[0, 1]`.
    pub jitter: f64,
    pub amplitude: f64,
    /// Value-noise lattice spacing in pixels.
    pub blob_scale: f64,
    pub seed: u64,
}

/// Ranges used by [`TextureParams::sample`]; the log-scaled attributes are
/// normalized against them.
pub const WAVELENGTH_RANGE: (f64, f64) = (4.0, 16.0);
pub const BLOB_SCALE_RANGE: (f64, f64) = (3.0, 12.0);
pub const AMPLITUDE_RANGE: (f64, f64) = (0.3, 1.0);

fn log_unit(v: f64, (lo, hi): (f64, f64)) -> f64 {
    (v / lo).ln() / (hi / lo).ln()
}

fn in_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} = {v} is outside [0, 1]")))
    }
}

impl TextureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wavelength must be positive, got {}",
                self.wavelength
            )));
        }
        if !(self.blob_scale > 0.0 && self.blob_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "blob_scale must be positive, got {}",
                self.blob_scale
            )));
        }
        if !self.orientation.is_finite() {
            return Err(Error::InvalidArgument("orientation must be finite".into()));
        }
        in_unit("grating_weight", self.grating_weight)?;
        in_unit("noise_weight", self.noise_weight)?;
        in_unit("jitter", self.jitter)?;
        in_unit("amplitude", self.amplitude)?;
        if self.grating_weight + self.noise_weight > 1.0 + 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "grating_weight + noise_weight = {} exceeds 1",
                self.grating_weight + self.noise_weight
            )));
        }
        Ok(())
    }

    /// Random parameters for dataset generation. The grating and noise
    /// weights sum to one so that no energy is left as flat gray.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let log_uniform = |rng: &mut R, (lo, hi): (f64, f64)| lo * (hi / lo).powf(rng.random::<f64>());
        let grating_weight: f64 = rng.random();
        TextureParams {
            orientation: rng.random::<f64>() * std::f64::consts::PI,
            wavelength: log_uniform(rng, WAVELENGTH_RANGE),
            grating_weight,
            noise_weight: 1.0 - grating_weight,
            jitter: rng.random(),
            amplitude: rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1),
            blob_scale: log_uniform(rng, BLOB_SCALE_RANGE),
            seed: rng.random(),
        }
    }
}

/// Raw attributes of a parameter set, all roughly in `[0, 1]`.
///
/// With `L(λ)` and `L(b)` the log-normalized wavelength and blob scale and
/// `gw, nw, j, a` the grating weight, noise weight, jitter and amplitude:
///
/// | attribute | raw value |
/// |---|---|
/// | contrast | `a` |
/// | repetitiveness | `gw (1-j) (1 - L(λ)/2)` |
/// | granularity | `nw (1 - L(b))` |
/// | randomness | `nw` |
/// | roughness | `a * density` |
/// | density | `gw (1 - L(λ)) + nw (1 - L(b))` |
/// | directionality | `gw (1-j)` |
/// | structural_complexity | `gw j / 2 + (1 - abs(gw - nw)) / 2` |
/// | coarseness | `gw L(λ) + nw L(b)` |
/// | regularity | `1 - gw j - nw / 2` |
/// | orientation | `1/2 + gw (1-j) cos(2θ) / 2` |
/// | uniformity | `1 - nw L(b) / 2 - gw j / 2` |
///
/// Only roughness is coupled to contrast.
pub fn params_to_attributes(p: &TextureParams) -> AttributeVector {
    let (gw, nw, j, a) = (p.grating_weight, p.noise_weight, p.jitter, p.amplitude);
    let lw = log_unit(p.wavelength, WAVELENGTH_RANGE);
    let lb = log_unit(p.blob_scale, BLOB_SCALE_RANGE);
    let directional = gw * (1.0 - j);
    let density = gw * (1.0 - lw) + nw * (1.0 - lb);
    let mut v = [0.0; NUM_ATTRIBUTES];
    v[CONTRAST] = a;
    v[REPETITIVENESS] = directional * (1.0 - 0.5 * lw);
    v[GRANULARITY] = nw * (1.0 - lb);
    v[RANDOMNESS] = nw;
    v[ROUGHNESS] = a * density;
    v[DENSITY] = density;
    v[DIRECTIONALITY] = directional;
    v[STRUCTURAL_COMPLEXITY] = 0.5 * gw * j + 0.5 * (1.0 - (gw - nw).abs());
    v[COARSENESS] = gw * lw + nw * lb;
    v[REGULARITY] = 1.0 - gw * j - 0.5 * nw;
    v[ORIENTATION] = 0.5 + 0.5 * directional * (2.0 * p.orientation).cos();
    v[UNIFORMITY] = 1.0 - 0.5 * nw * lb - 0.5 * gw * j;
    AttributeVector(v)
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lattice value in `[-1, 1]`.
fn lattice(seed: u64, stream: u64, ix: i64, iy: i64) -> f64 {
    let h = mix(seed ^ mix(stream ^ mix((ix as u64) ^ mix(iy as u64))));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated value noise with lattice spacing `scale`.
fn value_noise(seed: u64, stream: u64, x: f64, y: f64, scale: f64) -> f64 {
    let (gx, gy) = (x / scale, y / scale);
    let (fx, fy) = (gx.floor(), gy.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(gx - fx), smooth(gy - fy));
    let v00 = lattice(seed, stream, ix, iy);
    let v10 = lattice(seed, stream, ix + 1, iy);
    let v01 = lattice(seed, stream, ix, iy + 1);
    let v11 = lattice(seed, stream, ix + 1, iy + 1);
    let top = v00 + (v10 - v00) * tx;
    let bottom = v01 + (v11 - v01) * tx;
    top + (bottom - top) * ty
}

const PHASE_STREAM: u64 = 1;
const BLOB_STREAM: u64 = 2;

/// Render the `height × width` window whose top-left pixel sits at
/// (`top`, `left`) in texture coordinates. Every channel is identical.
pub fn render_window(
    params: &TextureParams,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Tensor<f32>> {
    params.validate()?;
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::InvalidArgument(format!(
            "texture size must be positive, got {channels}x{height}x{width}"
        )));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let (c, s) = (params.orientation.cos(), params.orientation.sin());
    let k = tau / params.wavelength;
    let warp_scale = params.wavelength;
    let mut plane = Vec::with_capacity(height * width);
    for row in 0..height {
        let y = (top + row) as f64;
        for col in 0..width {
            let x = (left + col) as f64;
            let mut v = 0.0;
            if params.grating_weight > 0.0 {
                let mut phase = k * (x * c + y * s);
                if params.jitter > 0.0 {
                    phase += tau * params.jitter * value_noise(params.seed, PHASE_STREAM, x, y, warp_scale);
                }
                v += params.grating_weight * phase.sin();
            }
            if params.noise_weight > 0.0 {
                v += params.noise_weight * value_noise(params.seed, BLOB_STREAM, x, y, params.blob_scale);
            }
            plane.push((params.amplitude * v).clamp(-1.0, 1.0) as f32);
        }
    }
    let mut data = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Tensor::new(vec![channels, height, width], data)
}

/// Single-channel `height × width` texture anchored at the origin.
pub fn generate_texture(params: &TextureParams, height: usize, width: usize) -> Result<Tensor<f32>> {
    render_window(params, 0, 0, height, width, 1)
}
