//! im2col-based 2D convolution kernels on single NCHW samples.

use crate::float::{gemm, Float};

/// Geometry of a square-kernel 2D convolution from `in_hw` to `out_hw`.
///
/// For a transposed convolution the same struct describes the *adjoint*
/// convolution: `in_*` is the transposed conv's output and `out_*` its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn forward(
        channels: usize,
        in_h: usize,
        in_w: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let eh = in_h + 2 * pad;
        let ew = in_w + 2 * pad;
        if stride == 0 || eh < kernel || ew < kernel {
            return None;
        }
        Some(Self {
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            pad,
            out_h: (eh - kernel) / stride + 1,
            out_w: (ew - kernel) / stride + 1,
        })
    }

    /// Output extent of a transposed convolution: `(in - 1) * stride - 2 * pad + kernel`.
    pub fn transposed_out(in_hw: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
        ((in_hw.checked_sub(1)?) * stride + kernel).checked_sub(2 * pad)
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Unfolds `x` (`[C, H, W]`) into `cols` (`[C·k·k, Ho·Wo]`).
pub fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let plane = g.col_cols();
    for c in 0..g.channels {
        let xc = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ki) as isize - p;
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let xrow = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        *d = if ix < 0 || ix >= g.in_w as isize {
                            T::zero()
                        } else {
                            xrow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds `cols` back onto `x`, accumulating overlapping taps (adjoint of [`im2col`]).
pub fn col2im<T: Float>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let plane = g.col_cols();
    for c in 0..g.channels {
        let xc = &mut x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.out_h {
                    let iy = (oy * s + ki) as isize - p;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    let xrow = &mut xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, &v) in srow.iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p;
                        if ix >= 0 && ix < g.in_w as isize {
                            xrow[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Per-tap depth-similarity weights `exp(-|d(center) - d(neighbor)|)` laid out
/// as `[k·k, Ho·Wo]`. Padded taps get weight 0 (their column entries are 0 anyway).
pub fn depth_modulation<T: Float>(depth: &[T], g: &ConvGeom) -> Vec<T> {
    let (k, s, p) = (g.kernel, g.stride, g.pad as isize);
    let plane = g.col_cols();
    let half = (k / 2) as isize;
    let at = |y: isize, x: isize| -> Option<T> {
        if y < 0 || x < 0 || y >= g.in_h as isize || x >= g.in_w as isize {
            None
        } else {
            Some(depth[y as usize * g.in_w + x as usize])
        }
    };
    let mut out = vec![T::zero(); k * k * plane];
    for ki in 0..k {
        for kj in 0..k {
            let row = ki * k + kj;
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    let by = (oy * s) as isize - p;
                    let bx = (ox * s) as isize - p;
                    let center = at(by + half, bx + half);
                    let neigh = at(by + ki as isize, bx + kj as isize);
                    out[row * plane + oy * g.out_w + ox] = match (center, neigh) {
                        (Some(c), Some(n)) => (-(c - n).abs()).exp(),
                        // center in the padding: fall back to plain convolution weights
                        (None, Some(_)) => T::one(),
                        _ => T::zero(),
                    };
                }
            }
        }
    }
    out
}

/// Multiplies every channel block of `cols` by the per-tap modulation.
pub fn modulate<T: Float>(cols: &mut [T], modulation: &[T], g: &ConvGeom) {
    let block = modulation.len();
    for c in 0..g.channels {
        for (v, &m) in cols[c * block..(c + 1) * block].iter_mut().zip(modulation) {
            *v *= m;
        }
    }
}

/// Forward convolution for one sample: `out[Cout, Ho·Wo] = w[Cout, C·k·k] · cols`.
pub fn conv_forward_sample<T: Float>(cols: &[T], w: &[T], cout: usize, g: &ConvGeom, out: &mut [T]) {
    gemm(
        false,
        false,
        cout,
        g.col_cols(),
        g.col_rows(),
        T::one(),
        w,
        cols,
        T::zero(),
        out,
    );
}
