//! PSNR, SSIM, improvements over the bicubic input, and foreground /
//! background PSNR from Otsu masks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::imaging::{image_dims, otsu_threshold, Image, ImagePair};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<(usize, usize)> {
    let da = image_dims(a)?;
    if da != image_dims(b)? {
        return Err(Error::dim(format!("images differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(da)
}

fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// `10·log10(peak² / MSE)`; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let n = a.numel() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    Ok(psnr_from_mse(mse, peak))
}

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = g.iter().sum();
    g.map(|v| v / total)
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, gk)| gk * tmp[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM: 11×11 Gaussian window (σ 1.5), K1 0.01, K2 0.03,
/// dynamic range 1, windows fully inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    let (h, w) = same_shape(a, b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::usage(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let g = ssim_taps();
    let (da, db) = (a.data(), b.data());
    let prod = |f: &dyn Fn(usize) -> f64| (0..h * w).map(f).collect::<Vec<f64>>();
    let mu_a = filter_valid(da, h, w, &g);
    let mu_b = filter_valid(db, h, w, &g);
    let e_aa = filter_valid(&prod(&|i| da[i] * da[i]), h, w, &g);
    let e_bb = filter_valid(&prod(&|i| db[i] * db[i]), h, w, &g);
    let e_ab = filter_valid(&prod(&|i| da[i] * db[i]), h, w, &g);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb);
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// `(ΔPSNR, ΔSSIM)` of `pred` over `lr_up`, both against `hr`.
pub fn delta_metrics(pred: &Image, hr: &Image, lr_up: &Image) -> Result<(f64, f64)> {
    Ok((
        psnr(pred, hr, 1.0)? - psnr(lr_up, hr, 1.0)?,
        ssim(pred, hr)? - ssim(lr_up, hr)?,
    ))
}

fn masked_psnr(a: &[f64], b: &[f64], mask: &[bool], want: bool) -> Option<f64> {
    let (sum, n) = a
        .iter()
        .zip(b)
        .zip(mask)
        .filter(|(_, &m)| m == want)
        .fold((0.0, 0usize), |(s, n), ((x, y), _)| (s + (x - y) * (x - y), n + 1));
    (n > 0).then(|| psnr_from_mse(sum / n as f64, 1.0))
}

/// ΔPSNR restricted to the `mask` pixels and to the rest; `None` for an
/// empty region.
pub fn region_psnr(pred: &Image, hr: &Image, lr_up: &Image, mask: &[bool]) -> Result<(Option<f64>, Option<f64>)> {
    same_shape(pred, hr)?;
    same_shape(lr_up, hr)?;
    if mask.len() != hr.numel() {
        return Err(Error::dim(format!("mask has {} entries for {} pixels", mask.len(), hr.numel())));
    }
    let delta = |want| {
        Some(masked_psnr(pred.data(), hr.data(), mask, want)? - masked_psnr(lr_up.data(), hr.data(), mask, want)?)
    };
    Ok((delta(true), delta(false)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchRecord {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub fg_delta_psnr: Option<f64>,
    pub bg_delta_psnr: Option<f64>,
}

impl PatchRecord {
    /// Scores `pred` against a test pair; the foreground mask is Otsu on HR.
    pub fn evaluate(pred: &Image, pair: &ImagePair) -> Result<Self> {
        let (delta_psnr, delta_ssim) = delta_metrics(pred, &pair.hr, &pair.lr_up)?;
        let (fg, bg) = match otsu_threshold(&pair.hr) {
            Ok(o) => region_psnr(pred, &pair.hr, &pair.lr_up, &o.mask)?,
            Err(Error::Degenerate(_)) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            id: pair.id.clone(),
            psnr: psnr(pred, &pair.hr, 1.0)?,
            ssim: ssim(pred, &pair.hr)?,
            delta_psnr,
            delta_ssim,
            fg_delta_psnr: fg,
            bg_delta_psnr: bg,
        })
    }
}

/// Means over records; region means skip records where the region is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub fg_delta_psnr: Option<f64>,
    pub bg_delta_psnr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub records: Vec<PatchRecord>,
}

pub const CSV_HEADER: &str = "id,psnr,ssim,delta_psnr,delta_ssim,fg_delta_psnr,bg_delta_psnr";

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), fmt_value)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricsReport {
    pub fn aggregate(&self) -> Option<Aggregate> {
        let r = &self.records;
        Some(Aggregate {
            count: r.len(),
            psnr: mean(r.iter().map(|p| p.psnr))?,
            ssim: mean(r.iter().map(|p| p.ssim))?,
            delta_psnr: mean(r.iter().map(|p| p.delta_psnr))?,
            delta_ssim: mean(r.iter().map(|p| p.delta_ssim))?,
            fg_delta_psnr: mean(r.iter().filter_map(|p| p.fg_delta_psnr)),
            bg_delta_psnr: mean(r.iter().filter_map(|p| p.bg_delta_psnr)),
        })
    }

    /// Comma-separated records under [`CSV_HEADER`], then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\n");
        for p in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.id,
                fmt_value(p.psnr),
                fmt_value(p.ssim),
                fmt_value(p.delta_psnr),
                fmt_value(p.delta_ssim),
                fmt_opt(p.fg_delta_psnr),
                fmt_opt(p.bg_delta_psnr)
            );
        }
        if let Some(a) = self.aggregate() {
            let _ = writeln!(
                out,
                "mean,{},{},{},{},{},{}",
                fmt_value(a.psnr),
                fmt_value(a.ssim),
                fmt_value(a.delta_psnr),
                fmt_value(a.delta_ssim),
                fmt_opt(a.fg_delta_psnr),
                fmt_opt(a.bg_delta_psnr)
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<20} {:>9} {:>7} {:>8} {:>8} {:>8} {:>8}\n",
            "patch", "PSNR", "SSIM", "ΔPSNR", "ΔSSIM", "fg ΔPSNR", "bg ΔPSNR"
        );
        let row = |out: &mut String, id: &str, v: [String; 6]| {
            let _ = writeln!(
                out,
                "{id:<20} {:>9} {:>7} {:>8} {:>8} {:>8} {:>8}",
                v[0], v[1], v[2], v[3], v[4], v[5]
            );
        };
        let short = |v: f64, d: usize| if v.is_finite() { format!("{v:.d$}") } else { fmt_value(v) };
        let short_opt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| short(v, 3));
        for p in &self.records {
            row(
                &mut out,
                &p.id,
                [
                    short(p.psnr, 2),
                    short(p.ssim, 4),
                    short(p.delta_psnr, 3),
                    short(p.delta_ssim, 4),
                    short_opt(p.fg_delta_psnr),
                    short_opt(p.bg_delta_psnr),
                ],
            );
        }
        if let Some(a) = self.aggregate() {
            row(
                &mut out,
                "mean",
                [
                    short(a.psnr, 2),
                    short(a.ssim, 4),
                    short(a.delta_psnr, 3),
                    short(a.delta_ssim, 4),
                    short_opt(a.fg_delta_psnr),
                    short_opt(a.bg_delta_psnr),
                ],
            );
        }
        out
    }
}
