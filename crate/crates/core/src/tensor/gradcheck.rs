use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Largest tolerated relative error.
    pub tol: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub abs_floor: f64,
    /// Check only this many randomly drawn coordinates (over all params).
    pub sample: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-5,
            abs_floor: 1e-4,
            sample: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(param index, flat coordinate)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub passed: bool,
    /// Coordinates whose step had to shrink because a ReLU switched sides
    /// between `θ - ε` and `θ + ε`.
    pub shrunk_steps: usize,
}

/// Halvings tried before giving up on finding a kink-free interval.
const MAX_HALVINGS: u32 = 24;

fn eval<T: Element, F>(f: &F, params: &[Tensor<T>]) -> Result<(Tape<T>, Vec<Var>, Var)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::usage("finite-difference target must be scalar"));
    }
    if !v.all_finite() {
        return Err(Error::Numeric("function value is not finite".into()));
    }
    Ok((tape, vars, out))
}

fn scalar<T: Element, F>(f: &F, params: &[Tensor<T>]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, _, out) = eval(f, params)?;
    Ok((tape.value(out).data()[0].as_f64(), tape.kink_pattern()))
}

/// Compares tape gradients of the scalar function `f` against central
/// differences at `params`.
pub fn finite_diff_check<T: Element, F>(
    f: F,
    params: &[Tensor<T>],
    cfg: &GradCheckConfig,
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let (tape, vars, out) = eval(&f, params)?;
    let mut grads = tape.backward(out)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    compare_with_finite_differences(f, params, &analytic, cfg)
}

/// Checks caller-supplied `analytic` gradients against central differences.
///
/// A central difference is only meaningful when both probes sit on the same
/// smooth piece. If some ReLU input changes sign between `θ - ε` and `θ + ε`
/// the step is halved until the activation patterns agree.
pub fn compare_with_finite_differences<T: Element, F>(
    f: F,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    cfg: &GradCheckConfig,
) -> Result<FiniteDiffReport>
where
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.numel();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::numel).sum();
    let coords: Vec<usize> = match cfg.sample {
        Some(n) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut idx = sample(&mut rng, total, n).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let mut work = params.to_vec();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut shrunk_steps = 0;
    for &flat in &coords {
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let i = flat - offsets[p];
        let orig = work[p].data()[i];
        let mut eps = cfg.eps;
        let mut halvings = 0;
        let numeric = loop {
            work[p].data_mut()[i] = T::from_f64(orig.as_f64() + eps);
            let (plus, plus_kinks) = scalar(&f, &work)?;
            work[p].data_mut()[i] = T::from_f64(orig.as_f64() - eps);
            let (minus, minus_kinks) = scalar(&f, &work)?;
            if plus_kinks == minus_kinks || halvings == MAX_HALVINGS {
                break (plus - minus) / (2.0 * eps);
            }
            eps *= 0.5;
            halvings += 1;
        };
        work[p].data_mut()[i] = orig;
        if halvings > 0 {
            shrunk_steps += 1;
        }

        let exact = analytic[p].data()[i].as_f64();
        let denom = numeric.abs().max(exact.abs()).max(cfg.abs_floor);
        let rel = (numeric - exact).abs() / denom;
        if rel > max_rel || worst.is_none() {
            max_rel = max_rel.max(rel);
            worst = Some((p, i));
        }
    }
    Ok(FiniteDiffReport {
        checked: coords.len(),
        max_rel_err: max_rel,
        worst,
        passed: max_rel <= cfg.tol,
        shrunk_steps,
    })
}
