//! Synthetic paired data: bright elliptical clusters on a dark textured
//! background, degraded by blur, 2× decimation and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{bicubic_upsample, clamp01, downsample_mean2, gaussian_blur, Image, ImagePair};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Square image side; divisible by 4.
    pub size: usize,
    pub noise_sigma: f64,
    pub blur_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 32,
            seed: 0,
            size: 96,
            noise_sigma: 0.02,
            blur_sigma: 1.0,
        }
    }
}

fn render_scene(size: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = size as f64;
    // Low-frequency background texture.
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            let ang = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.02..0.12);
            (ang.cos() * freq, ang.sin() * freq, rng.random_range(0.0..6.3), rng.random_range(0.01..0.03))
        })
        .collect();
    struct Blob {
        cx: f64,
        cy: f64,
        a: f64,
        b: f64,
        cos: f64,
        sin: f64,
        level: f64,
        grain: f64,
    }
    let blobs: Vec<Blob> = (0..rng.random_range(4..10))
        .map(|_| {
            let ang = rng.random_range(0.0..std::f64::consts::PI);
            Blob {
                cx: rng.random_range(0.0..n),
                cy: rng.random_range(0.0..n),
                a: rng.random_range(2.5..n / 7.0),
                b: rng.random_range(2.0..n / 9.0),
                cos: ang.cos(),
                sin: ang.sin(),
                level: rng.random_range(0.55..0.85),
                grain: rng.random_range(0.6..1.4),
            }
        })
        .collect();

    let mut img = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = 0.15
                + waves
                    .iter()
                    .map(|&(kx, ky, ph, amp)| amp * (kx * fx + ky * fy + ph).sin())
                    .sum::<f64>();
            for bl in &blobs {
                let (dx, dy) = (fx - bl.cx, fy - bl.cy);
                let u = (dx * bl.cos + dy * bl.sin) / bl.a;
                let w = (-dx * bl.sin + dy * bl.cos) / bl.b;
                let r = (u * u + w * w).sqrt();
                // Soft edge a little over a pixel wide.
                let cover = 1.0 / (1.0 + ((r - 1.0) * bl.a.min(bl.b) / 0.7).exp());
                let texture = 0.06 * (bl.grain * fx).sin() * (bl.grain * 1.3 * fy).cos();
                v += cover * (bl.level + texture - v).max(0.0);
            }
            img.push(v.clamp(0.0, 1.0));
        }
    }
    img
}

fn add_noise(img: &Image, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Image> {
    if sigma == 0.0 {
        return Ok(clamp01(img));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

fn generate_one(cfg: &SynthConfig, index: usize) -> Result<ImagePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let clean = Tensor::new(&[cfg.size, cfg.size], render_scene(cfg.size, &mut rng))?;
    let hr = add_noise(&clean, cfg.noise_sigma, &mut rng)?;
    let lr = downsample_mean2(&gaussian_blur(&clean, cfg.blur_sigma)?)?;
    let lr_up = add_noise(&bicubic_upsample(&lr, 2)?, cfg.noise_sigma, &mut rng)?;
    ImagePair::new(format!("synth{index:03}"), lr_up, hr)
}

/// Renders `cfg.count` pairs; pair `i` depends only on `(seed, i)`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<ImagePair>> {
    if cfg.size == 0 || cfg.size % 4 != 0 {
        return Err(Error::config(format!(
            "synthetic image size must be a positive multiple of 4, got {}",
            cfg.size
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.blur_sigma >= 0.0) {
        return Err(Error::config("noise and blur sigmas must be ≥ 0"));
    }
    (0..cfg.count)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect()
}
