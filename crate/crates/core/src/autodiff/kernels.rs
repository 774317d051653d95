//! Tape-free numeric kernels shared by the tape and by inference.

use super::Scalar;

/// Geometry of a square-kernel 2-D convolution over one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// `None` when the kernel does not fit.
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kernel == 0 || height + 2 * pad < kernel || width + 2 * pad < kernel {
            return None;
        }
        Some(ConvGeom {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Unfolds one image into a `[C·k·k, out_h·out_w]` patch matrix.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &img[(c * g.height + iy as usize) * g.width..][..g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch values back into the image.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, img: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut img[(c * g.height + iy as usize) * g.width..][..g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[m×n] = a[m×k] · b[k×n]` (overwrites `out`).
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    T::gemm(m, k, n, T::one(), a, (k as isize, 1), b, (n as isize, 1), T::zero(), out, (n as isize, 1));
}

/// Batched convolution. `x` is `[B, C, H, W]`, `w` is `[O, C, k, k]`,
/// `out` is `[B, O, out_h, out_w]`.
pub fn conv2d_forward<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], out_channels: usize, out: &mut [T]) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..batch {
        im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], g, &mut col);
        matmul(w, &col, out_channels, rows, cols, &mut out[b * out_channels * cols..(b + 1) * out_channels * cols]);
    }
}

/// Accumulates input and weight gradients of [`conv2d_forward`].
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    out_channels: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    for b in 0..batch {
        let d = &dout[b * out_channels * cols..(b + 1) * out_channels * cols];
        if let Some(dw) = dw.as_deref_mut() {
            im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], g, &mut col);
            // dw[O×rows] += d[O×cols] · colᵀ
            T::gemm(out_channels, cols, rows, T::one(), d, (cols as isize, 1), &col, (1, cols as isize), T::one(), dw, (rows as isize, 1));
        }
        if let Some(dx) = dx.as_deref_mut() {
            // dcol[rows×cols] = wᵀ · d
            T::gemm(rows, out_channels, cols, T::one(), w, (1, rows as isize), d, (cols as isize, 1), T::zero(), &mut dcol, (cols as isize, 1));
            col2im(&dcol, g, &mut dx[b * g.image_len()..(b + 1) * g.image_len()]);
        }
    }
}

/// Transposed convolution. `x` is `[B, Cin, H, W]`, `w` is `[Cin, Cout, k, k]`
/// and `g` describes the forward convolution from the `[Cout, Ho, Wo]` output
/// back to the `H×W` input (so `g.out_h == H`).
pub fn conv_transpose2d_forward<T: Scalar>(x: &[T], batch: usize, g: &ConvGeom, w: &[T], in_channels: usize, out: &mut [T]) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut col = vec![T::zero(); rows * cols];
    for b in 0..batch {
        let xb = &x[b * in_channels * cols..(b + 1) * in_channels * cols];
        // col[rows×cols] = wᵀ[rows×Cin] · xb[Cin×cols]
        T::gemm(rows, in_channels, cols, T::one(), w, (1, rows as isize), xb, (cols as isize, 1), T::zero(), &mut col, (cols as isize, 1));
        let ob = &mut out[b * g.image_len()..(b + 1) * g.image_len()];
        ob.fill(T::zero());
        col2im(&col, g, ob);
    }
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    in_channels: usize,
    dout: &[T],
    mut dx: Option<&mut [T]>,
    mut dw: Option<&mut [T]>,
) {
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let mut dcol = vec![T::zero(); rows * cols];
    for b in 0..batch {
        im2col(&dout[b * g.image_len()..(b + 1) * g.image_len()], g, &mut dcol);
        let span = b * in_channels * cols..(b + 1) * in_channels * cols;
        if let Some(dx) = dx.as_deref_mut() {
            // dx[Cin×cols] += w[Cin×rows] · dcol
            T::gemm(in_channels, rows, cols, T::one(), w, (rows as isize, 1), &dcol, (cols as isize, 1), T::one(), &mut dx[span.clone()], (cols as isize, 1));
        }
        if let Some(dw) = dw.as_deref_mut() {
            // dw[Cin×rows] += xb · dcolᵀ
            T::gemm(in_channels, cols, rows, T::one(), &x[span], (cols as isize, 1), &dcol, (1, cols as isize), T::one(), dw, (rows as isize, 1));
        }
    }
}

/// Adds `bias[c]` to every element of channel `c` in a `[B, C, inner]` block.
pub fn add_bias<T: Scalar>(x: &mut [T], bias: &[T], inner: usize) {
    let c = bias.len();
    for (i, chunk) in x.chunks_mut(inner).enumerate() {
        let b = bias[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// ln(1 + eˣ) without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
