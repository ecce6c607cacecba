//! Patch unrolling for convolutions.
//!
//! `cols` is a `(channels·k·k) × (out_h·out_w)` row-major matrix whose row
//! index runs over `(channel, ky, kx)` and column index over output pixels.

use crate::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `lo..hi` whose input column for tap `kx` lies inside
    /// the image.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(kx).div_ceil(s);
        let hi = (self.width + self.padding).saturating_sub(kx).div_ceil(s);
        let hi = hi.min(self.out_w);
        (lo.min(hi), hi)
    }
}

pub(crate) fn im2col<T: Real>(g: &ConvGeom, image: &[T], cols: &mut [T]) {
    let n = g.cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = g.valid_columns(kx);
                    line[..lo].fill(T::zero());
                    line[hi..].fill(T::zero());
                    if lo < hi {
                        let first = lo * g.stride + kx - g.padding;
                        let taps = src[first..].iter().step_by(g.stride);
                        for (out, &v) in line[lo..hi].iter_mut().zip(taps) {
                            *out = v;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of `cols` back onto an image; `image` is accumulated into.
pub(crate) fn col2im<T: Real>(g: &ConvGeom, cols: &[T], image: &mut [T]) {
    let n = g.cols();
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let row = (c * g.kernel + ky) * g.kernel + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let (lo, hi) = g.valid_columns(kx);
                    if lo < hi {
                        let first = lo * g.stride + kx - g.padding;
                        let line = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                        for (d, &v) in dst[first..].iter_mut().step_by(g.stride).zip(line) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}
