//! 2-D cross-correlation and its adjoint over NHWC tensors.
//!
//! Both directions go through the same im2col index map, so the transposed
//! convolution is the exact adjoint of the forward one for every padding and
//! boundary mode.

use rayon::prelude::*;

use super::{Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, padding split with the extra pixel
    /// at the bottom/right.
    Same,
    Valid,
}

/// How out-of-range taps are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Zero,
    /// Indices wrap around, making stride-1 convolutions exactly equivariant
    /// to cyclic shifts.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: Padding,
    pub boundary: Boundary,
}

impl ConvSpec {
    pub fn same(stride: usize) -> Self {
        Self {
            stride,
            padding: Padding::Same,
            boundary: Boundary::Zero,
        }
    }

    pub fn valid(stride: usize) -> Self {
        Self {
            stride,
            padding: Padding::Valid,
            boundary: Boundary::Zero,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }
}

/// Output extent and leading pad of a convolution along one axis.
pub fn conv_output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::config("convolution stride must be positive"));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::dim(format!(
                    "kernel extent {kernel} exceeds input extent {input}"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            if kernel > input + total {
                return Err(Error::dim(format!(
                    "kernel extent {kernel} exceeds padded input extent {}",
                    input + total
                )));
            }
            Ok((out, total / 2))
        }
    }
}

/// Resolved geometry of one convolution: the `in_*` side is the
/// cross-correlation input, the `out_*` side its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Geometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub cin: usize,
    pub cout: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub stride: usize,
    pub boundary: Boundary,
}

impl Geometry {
    fn kernel_dims<T: Element>(kernel: &Tensor<T>) -> Result<[usize; 4]> {
        match kernel.shape() {
            &[kh, kw, cin, cout] => Ok([kh, kw, cin, cout]),
            s => Err(Error::dim(format!(
                "kernel must be [kh, kw, cin, cout], got {s:?}"
            ))),
        }
    }

    /// Geometry of `conv2d(x, kernel)` for an NHWC input.
    pub fn forward<T: Element>(x_shape: [usize; 4], kernel: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let [kh, kw, cin, cout] = Self::kernel_dims(kernel)?;
        let [batch, in_h, in_w, c] = x_shape;
        if c != cin {
            return Err(Error::dim(format!(
                "input has {c} channels but kernel expects {cin}"
            )));
        }
        let (out_h, pad_top) = conv_output_extent(in_h, kh, spec.stride, spec.padding)?;
        let (out_w, pad_left) = conv_output_extent(in_w, kw, spec.stride, spec.padding)?;
        Ok(Self {
            batch,
            in_h,
            in_w,
            out_h,
            out_w,
            kh,
            kw,
            cin,
            cout,
            pad_top,
            pad_left,
            stride: spec.stride,
            boundary: spec.boundary,
        })
    }

    /// Geometry of the forward convolution whose adjoint maps `y_shape`
    /// (the convolution's output side) back to the input side.
    pub fn transposed<T: Element>(y_shape: [usize; 4], kernel: &Tensor<T>, spec: ConvSpec) -> Result<Self> {
        let [kh, kw, cin, cout] = Self::kernel_dims(kernel)?;
        let [batch, out_h, out_w, c] = y_shape;
        if c != cout {
            return Err(Error::dim(format!(
                "transposed input has {c} channels but kernel produces {cout}"
            )));
        }
        if spec.stride == 0 {
            return Err(Error::config("convolution stride must be positive"));
        }
        let in_extent = |out: usize, k: usize| match spec.padding {
            Padding::Same => out * spec.stride,
            Padding::Valid => (out - 1) * spec.stride + k,
        };
        let g = Self::forward(
            [batch, in_extent(out_h, kh), in_extent(out_w, kw), cin],
            kernel,
            spec,
        )?;
        debug_assert_eq!((g.out_h, g.out_w), (out_h, out_w));
        Ok(g)
    }

    pub fn in_shape(&self) -> [usize; 4] {
        [self.batch, self.in_h, self.in_w, self.cin]
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_h, self.out_w, self.cout]
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.stride == 1
            && self.pad_top == 0
            && self.pad_left == 0
            && self.in_h == self.out_h
            && self.in_w == self.out_w
    }

    #[inline]
    fn source(&self, o: usize, t: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - pad as isize;
        match self.boundary {
            Boundary::Zero => (pos >= 0 && (pos as usize) < extent).then_some(pos as usize),
            Boundary::Periodic => Some(pos.rem_euclid(extent as isize) as usize),
        }
    }

    /// Fill `cols` (`[out_h*out_w, kh*kw*cin]`) from one image.
    fn im2col<T: Element>(&self, img: &[T], cols: &mut [T]) {
        let cin = self.cin;
        let plen = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &mut cols[(oy * self.out_w + ox) * plen..][..plen];
                for ty in 0..self.kh {
                    let sy = self.source(oy, ty, self.pad_top, self.in_h);
                    for tx in 0..self.kw {
                        let dst = &mut row[(ty * self.kw + tx) * cin..][..cin];
                        match (sy, self.source(ox, tx, self.pad_left, self.in_w)) {
                            (Some(sy), Some(sx)) => {
                                dst.copy_from_slice(&img[(sy * self.in_w + sx) * cin..][..cin])
                            }
                            _ => dst.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `cols` back into one image; the adjoint of [`Self::im2col`].
    fn col2im<T: Element>(&self, cols: &[T], img: &mut [T]) {
        let cin = self.cin;
        let plen = self.patch_len();
        img.fill(T::zero());
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &cols[(oy * self.out_w + ox) * plen..][..plen];
                for ty in 0..self.kh {
                    let Some(sy) = self.source(oy, ty, self.pad_top, self.in_h) else {
                        continue;
                    };
                    for tx in 0..self.kw {
                        let Some(sx) = self.source(ox, tx, self.pad_left, self.in_w) else {
                            continue;
                        };
                        let dst = &mut img[(sy * self.in_w + sx) * cin..][..cin];
                        for (d, &s) in dst.iter_mut().zip(&row[(ty * self.kw + tx) * cin..][..cin]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }

    /// im2col of a whole batch, stacked as `[batch*out_h*out_w, kh*kw*cin]`.
    fn batch_cols<T: Element>(&self, x: &[T]) -> Vec<T> {
        let img_len = self.in_h * self.in_w * self.cin;
        let chunk = self.out_pixels() * self.patch_len();
        let mut cols = vec![T::zero(); self.batch * chunk];
        cols.par_chunks_mut(chunk)
            .zip(x.par_chunks(img_len))
            .for_each(|(c, img)| self.im2col(img, c));
        cols
    }

    fn batch_col2im<T: Element>(&self, cols: &[T]) -> Vec<T> {
        let img_len = self.in_h * self.in_w * self.cin;
        let chunk = self.out_pixels() * self.patch_len();
        let mut out = vec![T::zero(); self.batch * img_len];
        out.par_chunks_mut(img_len)
            .zip(cols.par_chunks(chunk))
            .for_each(|(img, c)| self.col2im(c, img));
        out
    }

    /// Cross-correlation: `[N,in_h,in_w,cin] -> [N,out_h,out_w,cout]`.
    pub fn forward_op<T: Element>(&self, x: &[T], kernel: &[T]) -> Vec<T> {
        let rows = self.batch * self.out_pixels();
        let plen = self.patch_len();
        let mut out = vec![T::zero(); rows * self.cout];
        let ks = (self.cout as isize, 1);
        if self.is_pointwise() {
            T::gemm(rows, plen, self.cout, x, (plen as isize, 1), kernel, ks, &mut out, T::zero());
        } else {
            let cols = self.batch_cols(x);
            T::gemm(rows, plen, self.cout, &cols, (plen as isize, 1), kernel, ks, &mut out, T::zero());
        }
        out
    }

    /// Adjoint of [`Self::forward_op`] in its input:
    /// `[N,out_h,out_w,cout] -> [N,in_h,in_w,cin]`.
    pub fn adjoint_op<T: Element>(&self, y: &[T], kernel: &[T]) -> Vec<T> {
        let rows = self.batch * self.out_pixels();
        let plen = self.patch_len();
        let kt = (1, self.cout as isize);
        let mut cols = vec![T::zero(); rows * plen];
        T::gemm(rows, self.cout, plen, y, (self.cout as isize, 1), kernel, kt, &mut cols, T::zero());
        if self.is_pointwise() {
            cols
        } else {
            self.batch_col2im(&cols)
        }
    }

    /// Kernel gradient of the forward op given input `x` and output
    /// cotangent `dy`: `Σ_n colsᵀ·dy`.
    pub fn kernel_grad<T: Element>(&self, x: &[T], dy: &[T]) -> Vec<T> {
        let rows = self.batch * self.out_pixels();
        let plen = self.patch_len();
        let mut dk = vec![T::zero(); plen * self.cout];
        let dys = (self.cout as isize, 1);
        if self.is_pointwise() {
            T::gemm(plen, rows, self.cout, x, (1, plen as isize), dy, dys, &mut dk, T::zero());
        } else {
            let cols = self.batch_cols(x);
            T::gemm(plen, rows, self.cout, &cols, (1, plen as isize), dy, dys, &mut dk, T::zero());
        }
        dk
    }
}

/// Lift a rank-3 `[h,w,c]` tensor to a batch of one; rank-4 passes through.
pub(crate) fn as_batch_shape(shape: &[usize]) -> Result<([usize; 4], bool)> {
    match *shape {
        [h, w, c] => Ok(([1, h, w, c], true)),
        [n, h, w, c] => Ok(([n, h, w, c], false)),
        _ => Err(Error::dim(format!(
            "convolution input must be [h,w,c] or [n,h,w,c], got {shape:?}"
        ))),
    }
}

fn restore_rank<T: Element>(shape: [usize; 4], data: Vec<T>, squeeze: bool) -> Result<Tensor<T>> {
    if squeeze {
        Tensor::new(&shape[1..], data)
    } else {
        Tensor::new(&shape, data)
    }
}

/// 2-D cross-correlation of `[h,w,cin]` (or batched `[n,h,w,cin]`) with a
/// `[kh,kw,cin,cout]` kernel.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, spec: ConvSpec) -> Result<Tensor<T>> {
    let (shape, squeeze) = as_batch_shape(x.shape())?;
    let g = Geometry::forward(shape, kernel, spec)?;
    restore_rank(g.out_shape(), g.forward_op(x.data(), kernel.data()), squeeze)
}

/// Adjoint of [`conv2d`] with the same kernel and spec: maps `cout`
/// channels back to `cin`. With `Same` padding the spatial extent grows by
/// exactly `stride`.
pub fn conv2d_transpose<T: Element>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    spec: ConvSpec,
) -> Result<Tensor<T>> {
    let (shape, squeeze) = as_batch_shape(x.shape())?;
    let g = Geometry::transposed(shape, kernel, spec)?;
    restore_rank(g.in_shape(), g.adjoint_op(x.data(), kernel.data()), squeeze)
}
