//! Evaluation, the variant ablation and the input patch-size sweep.

use std::fmt::Write;

use super::{train, TrainConfig};
use crate::error::{Error, Result};
use crate::imaging::{tile_and_stitch, ImagePair, PadMode};
use crate::metrics::{MetricsReport, PatchRecord};
use crate::model::{ModelConfig, Model, Variant};
use crate::tensor::Element;

/// Tiled predict-mode inference on every pair, scored against HR.
pub fn evaluate<T: Element>(model: &Model<T>, pairs: &[ImagePair], patch: usize, pad: PadMode) -> Result<MetricsReport>
where
    Model<T>: Sync,
{
    let records = pairs
        .iter()
        .map(|pair| {
            let pred = tile_and_stitch(&pair.lr_up, |tile| model.predict_image(tile), patch, pad)?;
            PatchRecord::evaluate(&pred, pair)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub variant: Variant,
    pub refs: usize,
}

impl AblationRow {
    fn new(label: &str, variant: Variant, refs: usize) -> Self {
        Self {
            label: label.into(),
            variant,
            refs,
        }
    }

    pub fn model_config(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            refs: self.refs,
            ..base.clone()
        }
    }
}

/// SR only, BA only, BA+SR with 16/32/64 references, no attention and
/// plain self-attention.
pub fn default_ablation_rows() -> Vec<AblationRow> {
    vec![
        AblationRow::new("SR only (64)", Variant::SrOnly, 64),
        AblationRow::new("BA only", Variant::BaOnly, 0),
        AblationRow::new("BA + SR (16)", Variant::Aea, 16),
        AblationRow::new("BA + SR (32)", Variant::Aea, 32),
        AblationRow::new("BA + SR (64)", Variant::Aea, 64),
        AblationRow::new("none", Variant::None, 0),
        AblationRow::new("self_only", Variant::SelfOnly, 0),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub label: String,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
    pub final_loss: Option<f64>,
    pub diverged: Option<String>,
}

/// Trains every row with the same seed, data and schedule, then scores the
/// held-out pairs at the training crop size.
pub fn run_ablation(
    train_pairs: &[ImagePair],
    test_pairs: &[ImagePair],
    cfg: &TrainConfig,
    rows: &[AblationRow],
    mut on_row: impl FnMut(&AblationResult),
) -> Result<Vec<AblationResult>> {
    if test_pairs.is_empty() {
        return Err(Error::usage("ablation needs held-out pairs"));
    }
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let row_cfg = TrainConfig {
            model: row.model_config(&cfg.model),
            ..cfg.clone()
        };
        let run = train(train_pairs, &[], &row_cfg, None, |_| {})?;
        let agg = evaluate(&run.state.model, test_pairs, cfg.crop, PadMode::Reflect)?
            .aggregate()
            .expect("non-empty test set");
        let result = AblationResult {
            label: row.label.clone(),
            delta_psnr: agg.delta_psnr,
            delta_ssim: agg.delta_ssim,
            final_loss: run.curve.last().map(|p| p.loss),
            diverged: run.diverged,
        };
        on_row(&result);
        out.push(result);
    }
    Ok(out)
}

pub fn format_ablation_table(results: &[AblationResult]) -> String {
    let mut out = format!("{:<16} {:>9} {:>9} {:>12}\n", "variant", "ΔPSNR", "ΔSSIM", "final loss");
    for r in results {
        let loss = r.final_loss.map_or("n/a".to_string(), |l| format!("{l:.3e}"));
        let _ = write!(out, "{:<16} {:>9.4} {:>9.5} {:>12}", r.label, r.delta_psnr, r.delta_ssim, loss);
        if let Some(d) = &r.diverged {
            let _ = write!(out, "  diverged at {d}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub size: usize,
    pub delta_psnr: f64,
    pub delta_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSweep {
    pub points: Vec<SweepPoint>,
    /// ΔPSNR is non-decreasing in the tile size.
    pub monotonic: bool,
}

impl PatchSweep {
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6} {:>9} {:>9}\n", "size", "ΔPSNR", "ΔSSIM");
        for p in &self.points {
            let _ = writeln!(out, "{:>6} {:>9.4} {:>9.5}", p.size, p.delta_psnr, p.delta_ssim);
        }
        let _ = writeln!(out, "monotonic: {}", if self.monotonic { "yes" } else { "no" });
        out
    }
}

/// Scores the same model with tiled inference at each size, in ascending
/// size order.
pub fn run_patch_sweep<T: Element>(model: &Model<T>, pairs: &[ImagePair], sizes: &[usize]) -> Result<PatchSweep>
where
    Model<T>: Sync,
{
    if pairs.is_empty() || sizes.is_empty() {
        return Err(Error::usage("patch sweep needs at least one pair and one size"));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let points = sizes
        .iter()
        .map(|&size| {
            let agg = evaluate(model, pairs, size, PadMode::Reflect)?
                .aggregate()
                .expect("non-empty pair set");
            Ok(SweepPoint {
                size,
                delta_psnr: agg.delta_psnr,
                delta_ssim: agg.delta_ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let monotonic = points.windows(2).all(|w| w[1].delta_psnr >= w[0].delta_psnr);
    Ok(PatchSweep { points, monotonic })
}
