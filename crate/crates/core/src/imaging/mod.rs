//! Grayscale images, resampling, the patch protocol, Otsu segmentation and
//! dataset assembly.
//!
//! An image is a `[h×w]` [`Tensor<f64>`] with values nominally in `[0, 1]`.

mod dataset;
mod io;
mod otsu;
mod patches;
mod resample;
mod synth;

pub use dataset::{Dataset, PairRole, MANIFEST_FILE};
pub use io::{load_image, save_image};
pub use otsu::{otsu_threshold, Otsu};
pub use patches::{split_3x4, tile_and_stitch, PadMode, PatchSplit, GRID_COLS, GRID_ROWS};
pub use resample::{
    bicubic_upsample, crop, downsample_mean2, gaussian_blur, keys_weight, resize_bilinear,
};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Image = Tensor<f64>;

/// Registered LR (already upsampled) and HR images of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub id: String,
    pub lr_up: Image,
    pub hr: Image,
}

impl ImagePair {
    pub fn new(id: impl Into<String>, lr_up: Image, hr: Image) -> Result<Self> {
        let (a, b) = (image_dims(&lr_up)?, image_dims(&hr)?);
        if a != b {
            return Err(Error::dim(format!(
                "lr {}×{} and hr {}×{} differ in size",
                a.0, a.1, b.0, b.1
            )));
        }
        Ok(Self {
            id: id.into(),
            lr_up,
            hr,
        })
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.hr.shape()[0], self.hr.shape()[1])
    }
}

/// `(height, width)` of a rank-2 image.
pub fn image_dims(img: &Image) -> Result<(usize, usize)> {
    img.dims2()
}

/// Clamps every value into `[0, 1]`.
pub fn clamp01(img: &Image) -> Image {
    img.map(|v| v.clamp(0.0, 1.0))
}
