//! Bicubic and bilinear resampling, Gaussian blur and box downsampling.

use super::{image_dims, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Free parameter of the Keys cubic convolution kernel.
const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn keys_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((KEYS_A + 2.0) * t - (KEYS_A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((KEYS_A * t - 5.0 * KEYS_A) * t + 8.0 * KEYS_A) * t - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Per output index: four clamped source indices and their weights.
type Taps = Vec<([usize; 4], [f64; 4])>;

fn cubic_taps(n_in: usize, factor: usize) -> Taps {
    (0..n_in * factor)
        .map(|o| {
            // Half-pixel centers: output o covers source position (o+0.5)/f - 0.5.
            let x = (o as f64 + 0.5) / factor as f64 - 0.5;
            let base = x.floor();
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let src = base as isize - 1 + k as isize;
                idx[k] = src.clamp(0, n_in as isize - 1) as usize;
                w[k] = keys_weight(x - src as f64);
            }
            (idx, w)
        })
        .collect()
}

/// Applies 1-D taps along rows (`horizontal`) or columns.
fn apply_taps(img: &[f64], h: usize, w: usize, taps: &Taps, horizontal: bool) -> (Vec<f64>, usize, usize) {
    if horizontal {
        let ow = taps.len();
        let mut out = vec![0.0; h * ow];
        for y in 0..h {
            let row = &img[y * w..(y + 1) * w];
            for (x, (idx, wt)) in taps.iter().enumerate() {
                out[y * ow + x] = (0..4).map(|k| wt[k] * row[idx[k]]).sum();
            }
        }
        (out, h, ow)
    } else {
        let oh = taps.len();
        let mut out = vec![0.0; oh * w];
        for (y, (idx, wt)) in taps.iter().enumerate() {
            for x in 0..w {
                out[y * w + x] = (0..4).map(|k| wt[k] * img[idx[k] * w + x]).sum();
            }
        }
        (out, oh, w)
    }
}

/// Bicubic 2× upsampling with edge clamping.
pub fn bicubic_upsample(img: &Image, factor: usize) -> Result<Image> {
    if factor != 2 {
        return Err(Error::config(format!(
            "only 2× upsampling is supported, got factor {factor}"
        )));
    }
    let (h, w) = image_dims(img)?;
    let (tmp, h1, w1) = apply_taps(img.data(), h, w, &cubic_taps(w, factor), true);
    let (out, h2, w2) = apply_taps(&tmp, h1, w1, &cubic_taps(h, factor), false);
    Tensor::new(&[h2, w2], out)
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    let (h, w) = image_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be non-empty"));
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|o| {
                let x = ((o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
                let i0 = (x.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, x - i0 as f64)
            })
            .collect()
    };
    let ys = axis(h, out_h);
    let xs = axis(w, out_w);
    let d = img.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = d[y0 * w + x0] * (1.0 - fx) + d[y0 * w + x1] * fx;
            let bot = d[y1 * w + x0] * (1.0 - fx) + d[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    Tensor::new(&[out_h, out_w], out)
}

/// Separable Gaussian blur, radius `ceil(3σ)`, clamped edges. `σ = 0`
/// returns the input.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::config(format!("blur sigma must be ≥ 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (h, w) = image_dims(img)?;
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &kw)| {
                        let off = k as isize - r;
                        let (sy, sx) = if horizontal {
                            (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                        } else {
                            ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                        };
                        kw * src[sy * w + sx]
                    })
                    .sum();
            }
        }
        out
    };
    let tmp = pass(img.data(), true);
    Tensor::new(&[h, w], pass(&tmp, false))
}

/// Averages non-overlapping 2×2 blocks; extents must be even.
pub fn downsample_mean2(img: &Image) -> Result<Image> {
    let (h, w) = image_dims(img)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!("2× downsampling needs even extents, got {h}×{w}")));
    }
    let d = img.data();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (d[i] + d[i + 1] + d[i + w] + d[i + w + 1]));
        }
    }
    Tensor::new(&[oh, ow], out)
}

/// The `h×w` window starting at `(top, left)`.
pub fn crop(img: &Image, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
    let (ih, iw) = image_dims(img)?;
    if top + h > ih || left + w > iw || h == 0 || w == 0 {
        return Err(Error::dim(format!(
            "crop {h}×{w} at ({top},{left}) exceeds {ih}×{iw}"
        )));
    }
    let d = img.data();
    let data = (top..top + h)
        .flat_map(|y| d[y * iw + left..y * iw + left + w].iter().copied())
        .collect();
    Tensor::new(&[h, w], data)
}
