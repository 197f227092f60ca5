//! Grid cropping, mirroring and bilinear resizing of `[c, h, w]` images.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn offsets(dim: &'static str, side: usize, crop: usize, step: usize) -> Result<Vec<usize>> {
    let err = Error::CropGrid { dim, side, crop, step };
    if crop == 0 || step == 0 || crop > side || !(side - crop).is_multiple_of(step) {
        return Err(err);
    }
    Ok((0..=(side - crop) / step).map(|i| i * step).collect())
}

/// Top-left corners of every `crop × crop` window on a `step` grid, row-major.
pub fn crop_windows(height: usize, width: usize, crop: usize, step: usize) -> Result<Vec<(usize, usize)>> {
    let rows = offsets("height", height, crop, step)?;
    let cols = offsets("width", width, crop, step)?;
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Number of crops per source for a square `side`.
pub fn crops_per_side(side: usize, crop: usize, step: usize) -> Result<usize> {
    Ok(offsets("height", side, crop, step)?.len().pow(2))
}

pub fn crop(image: &Tensor<f32>, top: usize, left: usize, height: usize, width: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 || top + height > s[1] || left + width > s[2] || height == 0 || width == 0 {
        return Err(Error::Shape(format!(
            "cannot take a {height}x{width} window at ({top}, {left}) from {s:?}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        for r in top..top + height {
            let base = ch * h * w + r * w;
            out.extend_from_slice(&image.data()[base + left..base + left + width]);
        }
    }
    Tensor::new(vec![c, height, width], out)
}

/// All `crop × crop` windows of `image` on a `step` grid, row-major.
pub fn crop_grid(image: &Tensor<f32>, crop_size: usize, step: usize) -> Result<Vec<Tensor<f32>>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected a [c, h, w] image, got {s:?}")));
    }
    crop_windows(s[1], s[2], crop_size, step)?
        .into_iter()
        .map(|(r, c)| crop(image, r, c, crop_size, crop_size))
        .collect()
}

/// Source coordinate and blend weight for output index `i` under the
/// pixel-center convention, clamped at the borders.
fn sample_axis(i: usize, from: usize, to: usize) -> (usize, usize, f32) {
    let x = ((i as f64 + 0.5) * from as f64 / to as f64 - 0.5).clamp(0.0, (from - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(from - 1);
    (lo, hi, (x - lo as f64) as f32)
}

/// Bilinear resize with pixel centers aligned (output pixel `i` samples
/// source coordinate `(i + 0.5) * from / to - 0.5`). Output values stay
/// within the input's range.
pub fn resize(image: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(Error::Shape(format!("expected a [c, h, w] image, got {s:?}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {height}x{width}"
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (height, width) {
        return Ok(image.clone());
    }
    let rows: Vec<_> = (0..height).map(|i| sample_axis(i, h, height)).collect();
    let cols: Vec<_> = (0..width).map(|i| sample_axis(i, w, width)).collect();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        for &(r0, r1, ty) in &rows {
            for &(c0, c1, tx) in &cols {
                let top = plane[r0 * w + c0] + (plane[r0 * w + c1] - plane[r0 * w + c0]) * tx;
                let bottom = plane[r1 * w + c0] + (plane[r1 * w + c1] - plane[r1 * w + c0]) * tx;
                out.push(top + (bottom - top) * ty);
            }
        }
    }
    Tensor::new(vec![c, height, width], out)
}

/// Mirrors image `index` of a `[n, c, h, w]` batch in place, left-right
/// and/or top-bottom.
pub fn mirror(batch: &mut Tensor<f32>, index: usize, horizontal: bool, vertical: bool) -> Result<()> {
    let &[n, c, h, w] = batch.shape() else {
        return Err(Error::Shape(format!("mirror expects [n, c, h, w], got {:?}", batch.shape())));
    };
    if index >= n {
        return Err(Error::InvalidArgument(format!("image {index} out of range {n}")));
    }
    let plane = h * w;
    let data = &mut batch.data_mut()[index * c * plane..(index + 1) * c * plane];
    for ch in data.chunks_mut(plane) {
        if horizontal {
            ch.chunks_mut(w).for_each(|row| row.reverse());
        }
        if vertical {
            for r in 0..h / 2 {
                let (top, bottom) = ch.split_at_mut((h - 1 - r) * w);
                top[r * w..(r + 1) * w].swap_with_slice(&mut bottom[..w]);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[c, h, w], |i| i as f32)
    }

    #[test]
    fn crop_counts() {
        assert_eq!(crops_per_side(512, 448, 8).unwrap(), 81);
        assert_eq!(crops_per_side(64, 48, 8).unwrap(), 9);
        assert_eq!(crops_per_side(64, 64, 8).unwrap(), 1);
    }

    #[test]
    fn identity_crop() {
        let img = ramp(1, 6, 6);
        let crops = crop_grid(&img, 6, 3).unwrap();
        assert_eq!(crops, vec![img]);
    }

    #[test]
    fn crop_errors_name_dimension() {
        let img = ramp(1, 10, 12);
        let msg = crop_grid(&img, 6, 4).unwrap_err().to_string();
        assert!(msg.contains("width"), "{msg}");
        let img = ramp(1, 9, 10);
        let msg = crop_grid(&img, 6, 4).unwrap_err().to_string();
        assert!(msg.contains("height"), "{msg}");
        assert!(crop_grid(&ramp(1, 4, 4), 5, 1).is_err());
    }

    #[test]
    fn crops_are_row_major() {
        let img = ramp(2, 4, 4);
        let crops = crop_grid(&img, 2, 2).unwrap();
        assert_eq!(crops.len(), 4);
        assert_eq!(crops[1].data(), &[2.0, 3.0, 6.0, 7.0, 18.0, 19.0, 22.0, 23.0]);
        assert_eq!(crops[2].data()[0], 8.0);
    }

    #[test]
    fn checkerboard_downsample() {
        let board = Tensor::from_fn(&[1, 4, 4], |i| ((i / 4 + i % 4) % 2) as f32);
        let out = resize(&board, 2, 2).unwrap();
        assert_eq!(out.data(), &[0.5; 4]);
    }

    #[test]
    fn same_size_and_constant() {
        let img = ramp(1, 5, 7);
        assert_eq!(resize(&img, 5, 7).unwrap(), img);
        let flat = Tensor::filled(&[1, 3, 3], 0.25f32);
        let out = resize(&flat, 8, 5).unwrap();
        assert_eq!(out.shape(), &[1, 8, 5]);
        assert!(out.data().iter().all(|&v| v == 0.25));
        assert!(resize(&img, 0, 3).is_err());
    }

    #[test]
    fn upsampling_stays_in_range() {
        let img = Tensor::from_fn(&[1, 6, 6], |i| ((i * 37) % 11) as f32 / 5.0 - 1.0);
        let out = resize(&img, 17, 13).unwrap();
        let (lo, hi) = (-1.0f32, 1.0f32);
        assert!(out.data().iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn mirror_reverses_axes_and_is_an_involution() {
        let orig = Tensor::from_fn(&[2, 1, 3, 2], |i| i as f32);
        let mut t = orig.clone();
        mirror(&mut t, 1, true, false).unwrap();
        assert_eq!(&t.data()[..6], &orig.data()[..6]);
        assert_eq!(&t.data()[6..], &[7.0, 6.0, 9.0, 8.0, 11.0, 10.0]);
        mirror(&mut t, 1, true, true).unwrap();
        assert_eq!(&t.data()[6..], &[10.0, 11.0, 8.0, 9.0, 6.0, 7.0]);
        mirror(&mut t, 1, false, true).unwrap();
        assert_eq!(t, orig);
        assert!(mirror(&mut t, 2, true, true).is_err());
    }
}
