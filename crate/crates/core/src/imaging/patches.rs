//! The 3×4 train/test patch protocol and tiled inference.

use rayon::prelude::*;

use super::{crop, image_dims, Image, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_ROWS: usize = 3;
pub const GRID_COLS: usize = 4;

/// Patches of one source pair: the left 3×3 block trains, the right column
/// tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSplit {
    pub train: Vec<ImagePair>,
    pub test: Vec<ImagePair>,
    /// Rows/columns removed by the center crop, `(dh, dw)`.
    pub cropped: (usize, usize),
}

/// Splits a pair into a 3×4 grid after center-cropping it to the largest
/// grid-divisible size. Patch ids are `<id>_r<row>c<col>`.
pub fn split_3x4(pair: &ImagePair) -> Result<PatchSplit> {
    let (h, w) = pair.dims();
    if h < GRID_ROWS || w < GRID_COLS {
        return Err(Error::usage(format!(
            "{h}×{w} image is smaller than the {GRID_ROWS}×{GRID_COLS} grid"
        )));
    }
    let (ph, pw) = (h / GRID_ROWS, w / GRID_COLS);
    let (dh, dw) = (h - ph * GRID_ROWS, w - pw * GRID_COLS);
    let (top0, left0) = (dh / 2, dw / 2);

    let mut split = PatchSplit {
        train: Vec::with_capacity(9),
        test: Vec::with_capacity(3),
        cropped: (dh, dw),
    };
    for row in 0..GRID_ROWS {
        for col in 0..GRID_COLS {
            let (top, left) = (top0 + row * ph, left0 + col * pw);
            let patch = ImagePair {
                id: format!("{}_r{row}c{col}", pair.id),
                lr_up: crop(&pair.lr_up, top, left, ph, pw)?,
                hr: crop(&pair.hr, top, left, ph, pw)?,
            };
            if col + 1 < GRID_COLS {
                split.train.push(patch);
            } else {
                split.test.push(patch);
            }
        }
    }
    Ok(split)
}

/// How tiles overhanging the image border are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadMode {
    /// Mirror without repeating the edge pixel.
    #[default]
    Reflect,
    Zero,
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Runs `model` on non-overlapping `patch×patch` tiles and stitches the
/// results back to the source shape. Ragged edges are padded per `pad`.
pub fn tile_and_stitch<F>(img: &Image, model: F, patch: usize, pad: PadMode) -> Result<Image>
where
    F: Fn(&Image) -> Result<Image> + Sync,
{
    if patch == 0 || patch % 4 != 0 {
        return Err(Error::config(format!(
            "patch size must be a positive multiple of 4, got {patch}"
        )));
    }
    let (h, w) = image_dims(img)?;
    let (ty, tx) = (h.div_ceil(patch), w.div_ceil(patch));
    let src = img.data();
    let tiles: Vec<(usize, usize)> = (0..ty).flat_map(|r| (0..tx).map(move |c| (r, c))).collect();

    let outputs: Vec<Image> = tiles
        .par_iter()
        .map(|&(r, c)| {
            let mut data = Vec::with_capacity(patch * patch);
            for y in 0..patch {
                for x in 0..patch {
                    let (sy, sx) = (r * patch + y, c * patch + x);
                    data.push(match pad {
                        _ if sy < h && sx < w => src[sy * w + sx],
                        PadMode::Reflect => {
                            src[reflect_index(sy as isize, h) * w + reflect_index(sx as isize, w)]
                        }
                        PadMode::Zero => 0.0,
                    });
                }
            }
            let out = model(&Tensor::new(&[patch, patch], data)?)?;
            if out.shape() != [patch, patch] {
                return Err(Error::dim(format!(
                    "model returned {:?} for a {patch}×{patch} tile",
                    out.shape()
                )));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut stitched = vec![0.0; h * w];
    for (&(r, c), out) in tiles.iter().zip(&outputs) {
        let od = out.data();
        for y in 0..patch.min(h - r * patch) {
            let dst = (r * patch + y) * w + c * patch;
            let n = patch.min(w - c * patch);
            stitched[dst..dst + n].copy_from_slice(&od[y * patch..y * patch + n]);
        }
    }
    Tensor::new(&[h, w], stitched)
}
