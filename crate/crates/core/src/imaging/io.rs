//! PNG / PGM reading and writing for grayscale images.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use super::{image_dims, Image};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_name(path: &Path, fmt: Option<ImageFormat>) -> String {
    match fmt {
        Some(ImageFormat::Png) => "png".into(),
        Some(ImageFormat::Pnm) => "pgm".into(),
        Some(other) => format!("{other:?}").to_lowercase(),
        None => path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("unknown")
            .to_lowercase(),
    }
}

/// Reads an 8- or 16-bit grayscale PNG or PGM, scaled to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    let name = format_name(path, reader.format());
    if !matches!(reader.format(), Some(ImageFormat::Png | ImageFormat::Pnm)) {
        return Err(Error::Format {
            format: name,
            reason: "unsupported: only PNG and PGM are read".into(),
        });
    }
    let decoded = reader.decode().map_err(|e| Error::Format {
        format: name.clone(),
        reason: e.to_string(),
    })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let data: Vec<f64> = match decoded {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| f64::from(v) / 65535.0)
            .collect(),
        _ => {
            return Err(Error::Format {
                format: name,
                reason: "unsupported: non-grayscale".into(),
            })
        }
    };
    Tensor::new(&[h, w], data)
}

/// Writes an 8-bit grayscale image; the format follows the extension
/// (`.png`, `.pgm`). Values are clamped to `[0, 1]` and rounded half away
/// from zero.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = image_dims(img)?;
    let fmt = match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase) {
        Some(e) if e == "png" => ImageFormat::Png,
        Some(e) if e == "pgm" => ImageFormat::Pnm,
        other => {
            return Err(Error::Format {
                format: other.unwrap_or_else(|| "unknown".into()),
                reason: "unsupported output format; use .png or .pgm".into(),
            })
        }
    };
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(w as u32, h as u32, bytes)
        .ok_or_else(|| Error::dim("image buffer size mismatch"))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save_with_format(path, fmt).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            format: format_name(path, Some(fmt)),
            reason: other.to_string(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_gray_round_trips_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        save_image(&Tensor::full(&[3, 5], 0.5), &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), &[3, 5]);
        // 0.5·255 = 127.5 rounds half away from zero.
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn pgm_round_trip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.pgm");
        let img = Tensor::new(&[2, 3], (0..6).map(|i| f64::from(i * 40) / 255.0).collect()).unwrap();
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn sixteen_bit_pgm_max_is_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("deep.pgm");
        let mut bytes = b"P5\n2 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xff, 0x00, 0x00]);
        std::fs::write(&p, bytes).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.data(), &[1.0, 0.0]);
    }

    #[test]
    fn color_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        image::RgbImage::from_pixel(2, 2, image::Rgb([10, 20, 30]))
            .save(&p)
            .unwrap();
        let err = load_image(&p).unwrap_err();
        assert!(err.to_string().contains("unsupported: non-grayscale"), "{err}");
        assert!(err.to_string().contains("png"));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_image("/nonexistent/nope.png").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
