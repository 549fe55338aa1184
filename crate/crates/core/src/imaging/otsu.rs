//! Otsu's threshold over a 256-bin histogram.

use super::Image;
use crate::error::{Error, Result};

pub const BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Otsu {
    /// Largest bin of the background class.
    pub bin: u8,
    /// `(bin + 0.5) / 255`, the boundary between the two classes in `[0, 1]`.
    pub threshold: f64,
    /// `true` for the brighter (foreground) class.
    pub mask: Vec<bool>,
}

/// Histogram bin of a `[0, 1]` value.
pub fn bin_of(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Between-class variance up to the constant factor `1/n²`, from exact
/// class counts and bin-index sums.
pub fn between_class(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    if n0 == 0 || n1 == 0 {
        return f64::NEG_INFINITY;
    }
    // n0·n1·(μ0 − μ1)² = (s0·n1 − s1·n0)² / (n0·n1).
    let d = (s0 as i128 * n1 as i128 - s1 as i128 * n0 as i128) as f64;
    d * d / (n0 as f64 * n1 as f64)
}

/// Threshold maximizing the between-class variance; the first maximum wins.
pub fn otsu_threshold(img: &Image) -> Result<Otsu> {
    let mut hist = [0u64; BINS];
    for &v in img.data() {
        hist[bin_of(v)] += 1;
    }
    if hist.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Degenerate(
            "Otsu threshold of a constant image is undefined".into(),
        ));
    }
    let n: u64 = hist.iter().sum();
    let total: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();

    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (t, &c) in hist.iter().enumerate().take(BINS - 1) {
        n0 += c;
        s0 += t as u64 * c;
        let score = between_class(n0, s0, n - n0, total - s0);
        if score > best.0 {
            best = (score, t);
        }
    }
    let bin = best.1;
    Ok(Otsu {
        bin: bin as u8,
        threshold: (bin as f64 + 0.5) / 255.0,
        mask: img.data().iter().map(|&v| bin_of(v) > bin).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive search that partitions the pixels directly at each
    /// candidate threshold.
    fn oracle(img: &Image) -> usize {
        let bins: Vec<u64> = img.data().iter().map(|&v| bin_of(v) as u64).collect();
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..255u64 {
            let (lo, hi): (Vec<u64>, Vec<u64>) = bins.iter().partition(|&&b| b <= t);
            let score = between_class(
                lo.len() as u64,
                lo.iter().sum(),
                hi.len() as u64,
                hi.iter().sum(),
            );
            if score > best.0 {
                best = (score, t as usize);
            }
        }
        best.1
    }

    #[test]
    fn two_valued_image_separates_exactly() {
        let img = Tensor::from_f64(&[2, 3], &[0.2, 0.8, 0.8, 0.2, 0.2, 0.8]).unwrap();
        let o = otsu_threshold(&img).unwrap();
        assert!(o.threshold > 0.2 && o.threshold < 0.8);
        assert_eq!(o.mask, vec![false, true, true, false, false, true]);
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (h, w) = (rng.random_range(2..20), rng.random_range(2..20));
            let img = Tensor::new(&[h, w], (0..h * w).map(|_| rng.random::<f64>()).collect()).unwrap();
            if let Ok(o) = otsu_threshold(&img) {
                assert_eq!(o.bin as usize, oracle(&img));
            }
        }
    }

    #[test]
    fn inversion_swaps_classes() {
        let vals = [0.1, 0.15, 0.2, 0.7, 0.9, 0.95, 0.12, 0.85];
        let img = Tensor::from_f64(&[2, 4], &vals).unwrap();
        let inv = img.map(|v| 1.0 - v);
        let (a, b) = (otsu_threshold(&img).unwrap(), otsu_threshold(&inv).unwrap());
        assert!(a.mask.iter().zip(&b.mask).all(|(x, y)| x != y));
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Tensor::full(&[4, 4], 0.3);
        assert!(matches!(otsu_threshold(&img), Err(Error::Degenerate(_))));
    }
}
