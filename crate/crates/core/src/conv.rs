//! Strided 2-D convolution and its adjoint via im2col + gemm.
//!
//! A [`ConvGeom`] always describes the convolution direction: a "wide" map
//! (`wide_h x wide_w`) is reduced to a "narrow" one (`narrow_h x narrow_w`).
//! The transposed convolution runs the same geometry backwards, so both share
//! weight layout `[narrow_channels, wide_channels, k, k]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub wide_h: usize,
    pub wide_w: usize,
    pub narrow_h: usize,
    pub narrow_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    /// "Same"-style zero padding: the narrow side is `ceil(wide / stride)`.
    pub fn same(wide_h: usize, wide_w: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || wide_h == 0 || wide_w == 0 {
            return Err(Error::InvalidArgument(format!(
                "convolution needs positive sizes (h={wide_h}, w={wide_w}, k={kernel}, stride={stride})"
            )));
        }
        let narrow_h = wide_h.div_ceil(stride);
        let narrow_w = wide_w.div_ceil(stride);
        let pad_h = ((narrow_h - 1) * stride + kernel).saturating_sub(wide_h);
        let pad_w = ((narrow_w - 1) * stride + kernel).saturating_sub(wide_w);
        Ok(ConvGeom {
            wide_h,
            wide_w,
            narrow_h,
            narrow_w,
            kernel,
            stride,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        })
    }

    pub fn wide_len(&self) -> usize {
        self.wide_h * self.wide_w
    }

    pub fn narrow_len(&self) -> usize {
        self.narrow_h * self.narrow_w
    }

    fn patch_len(&self, wide_channels: usize) -> usize {
        wide_channels * self.kernel * self.kernel
    }

    /// Unfold one wide image `[c, wide_h, wide_w]` into `[c*k*k, narrow_len]`.
    pub fn im2col<T: Element>(&self, image: &[T], channels: usize, col: &mut [T]) {
        let k = self.kernel;
        let p = self.narrow_len();
        debug_assert_eq!(image.len(), channels * self.wide_len());
        debug_assert_eq!(col.len(), self.patch_len(channels) * p);
        for c in 0..channels {
            let plane = &image[c * self.wide_len()..(c + 1) * self.wide_len()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.narrow_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        let out = &mut row[oy * self.narrow_w..(oy + 1) * self.narrow_w];
                        if iy < 0 || iy >= self.wide_h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.wide_w..][..self.wide_w];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            *o = if ix < 0 || ix >= self.wide_w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-add columns into `image`.
    pub fn col2im<T: Element>(&self, col: &[T], channels: usize, image: &mut [T]) {
        let k = self.kernel;
        let p = self.narrow_len();
        for c in 0..channels {
            let plane = &mut image[c * self.wide_len()..(c + 1) * self.wide_len()];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * p..][..p];
                    for oy in 0..self.narrow_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.wide_h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.wide_w..][..self.wide_w];
                        for ox in 0..self.narrow_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix >= 0 && ix < self.wide_w as isize {
                                dst[ix as usize] += row[oy * self.narrow_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Channel counts and geometry of one convolution layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvShape {
    pub geom: ConvGeom,
    pub wide_channels: usize,
    pub narrow_channels: usize,
}

impl ConvShape {
    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.narrow_channels,
            self.wide_channels,
            self.geom.kernel,
            self.geom.kernel,
        ]
    }

    fn patch(&self) -> usize {
        self.geom.patch_len(self.wide_channels)
    }

    pub fn wide_numel(&self) -> usize {
        self.wide_channels * self.geom.wide_len()
    }

    pub fn narrow_numel(&self) -> usize {
        self.narrow_channels * self.geom.narrow_len()
    }

    /// Strided convolution, wide -> narrow. Returns the im2col buffers for reuse
    /// in [`conv_backward`](Self::conv_backward).
    pub fn conv_forward<T: Element>(
        &self,
        batch: usize,
        x: &[T],
        weight: &[T],
        bias: &[T],
        out: &mut [T],
    ) -> Vec<T> {
        let kp = self.patch();
        let p = self.geom.narrow_len();
        let mut cols = vec![T::zero(); batch * kp * p];
        for n in 0..batch {
            let col = &mut cols[n * kp * p..(n + 1) * kp * p];
            self.geom
                .im2col(&x[n * self.wide_numel()..][..self.wide_numel()], self.wide_channels, col);
            let o = &mut out[n * self.narrow_numel()..][..self.narrow_numel()];
            for (c, chunk) in o.chunks_mut(p).enumerate() {
                chunk.fill(bias[c]);
            }
            T::gemm(
                self.narrow_channels,
                kp,
                p,
                weight,
                kp as isize,
                1,
                col,
                p as isize,
                1,
                T::one(),
                o,
                p as isize,
                1,
            );
        }
        cols
    }

    /// Gradients of a convolution. `dx` is skipped when `None`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_backward<T: Element>(
        &self,
        batch: usize,
        cols: &[T],
        weight: &[T],
        dout: &[T],
        dw: Option<&mut [T]>,
        db: Option<&mut [T]>,
        dx: Option<&mut [T]>,
    ) {
        let kp = self.patch();
        let p = self.geom.narrow_len();
        if let Some(dw) = dw {
            for n in 0..batch {
                T::gemm(
                    self.narrow_channels,
                    p,
                    kp,
                    &dout[n * self.narrow_numel()..][..self.narrow_numel()],
                    p as isize,
                    1,
                    &cols[n * kp * p..][..kp * p],
                    1,
                    p as isize,
                    T::one(),
                    dw,
                    kp as isize,
                    1,
                );
            }
        }
        if let Some(db) = db {
            channel_sums(batch, self.narrow_channels, p, dout, db);
        }
        if let Some(dx) = dx {
            let mut dcol = vec![T::zero(); kp * p];
            for n in 0..batch {
                T::gemm(
                    kp,
                    self.narrow_channels,
                    p,
                    weight,
                    1,
                    kp as isize,
                    &dout[n * self.narrow_numel()..][..self.narrow_numel()],
                    p as isize,
                    1,
                    T::zero(),
                    &mut dcol,
                    p as isize,
                    1,
                );
                let dxn = &mut dx[n * self.wide_numel()..][..self.wide_numel()];
                self.geom.col2im(&dcol, self.wide_channels, dxn);
            }
        }
    }

    /// Transposed convolution, narrow -> wide; the adjoint of the convolution
    /// plus a per-wide-channel bias.
    pub fn transpose_forward<T: Element>(
        &self,
        batch: usize,
        x: &[T],
        weight: &[T],
        bias: &[T],
        out: &mut [T],
    ) {
        let kp = self.patch();
        let p = self.geom.narrow_len();
        let mut col = vec![T::zero(); kp * p];
        for n in 0..batch {
            T::gemm(
                kp,
                self.narrow_channels,
                p,
                weight,
                1,
                kp as isize,
                &x[n * self.narrow_numel()..][..self.narrow_numel()],
                p as isize,
                1,
                T::zero(),
                &mut col,
                p as isize,
                1,
            );
            let o = &mut out[n * self.wide_numel()..][..self.wide_numel()];
            for (c, chunk) in o.chunks_mut(self.geom.wide_len()).enumerate() {
                chunk.fill(bias[c]);
            }
            self.geom.col2im(&col, self.wide_channels, o);
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn transpose_backward<T: Element>(
        &self,
        batch: usize,
        x: &[T],
        weight: &[T],
        dout: &[T],
        mut dw: Option<&mut [T]>,
        db: Option<&mut [T]>,
        mut dx: Option<&mut [T]>,
    ) {
        let kp = self.patch();
        let p = self.geom.narrow_len();
        if let Some(db) = db {
            channel_sums(batch, self.wide_channels, self.geom.wide_len(), dout, db);
        }
        if dw.is_none() && dx.is_none() {
            return;
        }
        let mut col = vec![T::zero(); kp * p];
        for n in 0..batch {
            self.geom.im2col(
                &dout[n * self.wide_numel()..][..self.wide_numel()],
                self.wide_channels,
                &mut col,
            );
            if let Some(dw) = dw.as_deref_mut() {
                T::gemm(
                    self.narrow_channels,
                    p,
                    kp,
                    &x[n * self.narrow_numel()..][..self.narrow_numel()],
                    p as isize,
                    1,
                    &col,
                    1,
                    p as isize,
                    T::one(),
                    dw,
                    kp as isize,
                    1,
                );
            }
            if let Some(dx) = dx.as_deref_mut() {
                T::gemm(
                    self.narrow_channels,
                    kp,
                    p,
                    weight,
                    kp as isize,
                    1,
                    &col,
                    p as isize,
                    1,
                    T::one(),
                    &mut dx[n * self.narrow_numel()..][..self.narrow_numel()],
                    p as isize,
                    1,
                );
            }
        }
    }
}

fn channel_sums<T: Element>(batch: usize, channels: usize, plane: usize, d: &[T], out: &mut [T]) {
    for n in 0..batch {
        for c in 0..channels {
            let s: T = d[(n * channels + c) * plane..][..plane].iter().copied().sum();
            out[c] += s;
        }
    }
}
