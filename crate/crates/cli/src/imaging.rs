//! Image encoding for generated textures.

use std::io::Cursor;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageFormat, ImageBuffer, Luma, Rgb};
use texgen::Tensor;

/// `[-1, 1]` to `0..=255`: affine map, then [`level`].
pub fn quantize(v: f32) -> u8 {
    level((v.clamp(-1.0, 1.0) as f64 + 1.0) * 127.5)
}

/// Round half to even onto `0..=255`.
pub fn level(scaled: f64) -> u8 {
    scaled.round_ties_even().clamp(0.0, 255.0) as u8
}

/// PNG bytes for one `[c, h, w]` (or `[1, c, h, w]`) image with 1 or 3
/// channels.
pub fn png_bytes(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let s = image.shape();
    let (c, h, w) = match *s {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        _ => bail!("expected a [c, h, w] image, got {s:?}"),
    };
    let plane = h * w;
    let d = image.data();
    let (w32, h32) = (u32::try_from(w)?, u32::try_from(h)?);
    let img = match c {
        1 => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, d.iter().map(|&v| quantize(v)).collect())
                .context("image buffer size")?,
        ),
        3 => {
            let px = (0..plane).flat_map(|i| (0..3).map(move |ch| quantize(d[ch * plane + i]))).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, px).context("image buffer size")?)
        }
        _ => bail!("PNG output supports 1 or 3 channels, got {c}"),
    };
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
