//! 2-D convolution and its transpose, lowered to GEMM through im2col.
//!
//! Convolution weights are `[out_channels, in_channels, kh, kw]`. Transposed
//! convolution weights are `[in_channels, out_channels, kh, kw]`, so that the
//! same array `W` makes `transposed_conv2d(·, W)` the adjoint of `conv2d(·, W)`.

use crate::error::{Error, Result};
use crate::nn::real::gemm;
use crate::nn::{Real, Tensor4};

/// Geometry of a forward convolution from an `in_c×in_h×in_w` plane stack to
/// `out_c×out_h×out_w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn conv(input: [usize; 4], weights: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [_, in_c, in_h, in_w] = input;
        let [out_c, w_in, kh, kw] = weights;
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        if w_in != in_c {
            return Err(Error::Shape(format!(
                "conv2d: input has {in_c} channels but weights {weights:?} expect {w_in}"
            )));
        }
        if kh == 0 || kw == 0 || kh > in_h + 2 * pad || kw > in_w + 2 * pad {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}×{kw} does not fit input {in_h}×{in_w} with pad {pad}"
            )));
        }
        Ok(Self {
            in_c,
            in_h,
            in_w,
            out_c,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
            kh,
            kw,
            stride,
            pad,
        })
    }

    /// The conv whose adjoint is the requested transposed conv: its input is
    /// the transposed conv's output and vice versa.
    fn transposed(input: [usize; 4], weights: [usize; 4], stride: usize, pad: usize) -> Result<Self> {
        let [_, in_c, in_h, in_w] = input;
        let [w_in, out_c, kh, kw] = weights;
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        if w_in != in_c {
            return Err(Error::Shape(format!(
                "transposed_conv2d: input has {in_c} channels but weights {weights:?} expect {w_in}"
            )));
        }
        if in_h == 0 || in_w == 0 || kh == 0 || kw == 0 {
            return Err(Error::Shape(format!(
                "transposed_conv2d: degenerate input {input:?} or kernel {weights:?}"
            )));
        }
        let full_h = (in_h - 1) * stride + kh;
        let full_w = (in_w - 1) * stride + kw;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(Error::Shape(format!(
                "transposed_conv2d: pad {pad} consumes the whole {full_h}×{full_w} output"
            )));
        }
        Ok(Self {
            in_c: out_c,
            in_h: full_h - 2 * pad,
            in_w: full_w - 2 * pad,
            out_c: in_c,
            out_h: in_h,
            out_w: in_w,
            kh,
            kw,
            stride,
            pad,
        })
    }

    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }
}

fn im2col<T: Real>(g: &Geometry, input: &[T], cols: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.in_c {
        let plane = &input[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize {
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

/// Scatter-add columns back onto an (already zeroed or accumulating) image.
fn col2im<T: Real>(g: &Geometry, cols: &[T], image: &mut [T]) {
    let n_cols = g.col_cols();
    for c in 0..g.in_c {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n_cols..(row + 1) * n_cols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.in_w as isize {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Output spatial extent of a convolution: `floor((in + 2·pad − k)/stride) + 1`.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || kernel > input + 2 * pad {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// Output spatial extent of a transposed convolution: `(in − 1)·stride − 2·pad + k`.
pub fn transposed_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if input == 0 || kernel == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * pad).filter(|&v| v > 0)
}

pub fn conv2d<T: Real>(input: &Tensor4<T>, weights: &Tensor4<T>, stride: usize, pad: usize) -> Result<Tensor4<T>> {
    let g = Geometry::conv(input.shape(), weights.shape(), stride, pad)?;
    let n = input.batch();
    let mut out = Tensor4::zeros([n, g.out_c, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        im2col(&g, input.sample(i), &mut cols);
        gemm(
            false,
            false,
            g.out_c,
            g.col_rows(),
            g.col_cols(),
            weights.data(),
            &cols,
            T::zero(),
            out.sample_mut(i),
        );
    }
    Ok(out)
}

/// Gradients of `conv2d` with respect to its input and weights.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let g = Geometry::conv(input.shape(), weights.shape(), stride, pad)?;
    let n = input.batch();
    grad_out.expect_shape([n, g.out_c, g.out_h, g.out_w], "conv2d output gradient")?;
    let mut grad_in = Tensor4::zeros(input.shape());
    let mut grad_w = Tensor4::zeros(weights.shape());
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    let mut dcols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        im2col(&g, input.sample(i), &mut cols);
        let dy = grad_out.sample(i);
        gemm(false, true, g.out_c, g.col_cols(), g.col_rows(), dy, &cols, T::one(), grad_w.data_mut());
        gemm(true, false, g.col_rows(), g.out_c, g.col_cols(), weights.data(), dy, T::zero(), &mut dcols);
        col2im(&g, &dcols, grad_in.sample_mut(i));
    }
    Ok((grad_in, grad_w))
}

pub fn transposed_conv2d<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let g = Geometry::transposed(input.shape(), weights.shape(), stride, pad)?;
    let n = input.batch();
    let mut out = Tensor4::zeros([n, g.in_c, g.in_h, g.in_w]);
    let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        gemm(true, false, g.col_rows(), g.out_c, g.col_cols(), weights.data(), input.sample(i), T::zero(), &mut cols);
        col2im(&g, &cols, out.sample_mut(i));
    }
    Ok(out)
}

/// Gradients of `transposed_conv2d` with respect to its input and weights.
pub fn transposed_conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    weights: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    let g = Geometry::transposed(input.shape(), weights.shape(), stride, pad)?;
    let n = input.batch();
    grad_out.expect_shape([n, g.in_c, g.in_h, g.in_w], "transposed_conv2d output gradient")?;
    let mut grad_in = Tensor4::zeros(input.shape());
    let mut grad_w = Tensor4::zeros(weights.shape());
    let mut dcols = vec![T::zero(); g.col_rows() * g.col_cols()];
    for i in 0..n {
        im2col(&g, grad_out.sample(i), &mut dcols);
        gemm(false, false, g.out_c, g.col_rows(), g.col_cols(), weights.data(), &dcols, T::zero(), grad_in.sample_mut(i));
        gemm(false, true, g.out_c, g.col_cols(), g.col_rows(), input.sample(i), &dcols, T::one(), grad_w.data_mut());
    }
    debug_assert_eq!(g.in_len() * n, grad_out.len());
    debug_assert_eq!(g.out_len() * n, input.len());
    Ok((grad_in, grad_w))
}
