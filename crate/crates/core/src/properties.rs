//! Randomized permutation property suites for the attention operators.

use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    batch_aware_attention, learned_query_attention, self_attention, shared_reference_attention, AttentionParams,
    LearnedQuery, NormMode, Projection,
};
use crate::error::{Error, Result};
use crate::permutation::{apply_permutation, check_equivariance, check_invariance, make_permutation, PermutationKind, PermutationSpec};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckOp {
    SelfAttention,
    LearnedQuery,
    SharedReference,
    BatchAware,
}

impl CheckOp {
    pub const ALL: [CheckOp; 4] = [Self::SelfAttention, Self::LearnedQuery, Self::SharedReference, Self::BatchAware];

    pub fn name(self) -> &'static str {
        match self {
            Self::SelfAttention => "self-attention",
            Self::LearnedQuery => "learned-query",
            Self::SharedReference => "shared-reference",
            Self::BatchAware => "batch-aware",
        }
    }

    /// The property the operator is known to have.
    pub fn natural_expectation(self) -> Expect {
        match self {
            Self::LearnedQuery => Expect::Invariant,
            _ => Expect::Equivariant,
        }
    }
}

impl FromStr for CheckOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|op| op.name() == s.replace('_', "-"))
            .ok_or_else(|| Error::config(format!("unknown operator {s:?}")))
    }
}

impl fmt::Display for CheckOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Equivariant,
    Invariant,
}

impl FromStr for Expect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariant" => Ok(Self::Equivariant),
            "invariant" => Ok(Self::Invariant),
            other => Err(Error::config(format!("unknown property {other:?}"))),
        }
    }
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Equivariant => "equivariance",
            Self::Invariant => "invariance",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub trials: usize,
    pub seed: u64,
    pub tol: f64,
    pub norm: NormMode,
    /// Reference counts drawn from for the shared-reference operator.
    pub refs: Vec<usize>,
    /// Inclusive range of spatial grid sides; `s = w·h`.
    pub side: (usize, usize),
    /// Inclusive range of feature counts.
    pub channels: (usize, usize),
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            tol: 1e-10,
            norm: NormMode::Division,
            refs: vec![1, 16, 64],
            side: (2, 8),
            channels: (1, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub op: CheckOp,
    pub expect: Expect,
    pub trials: usize,
    pub max_err: f64,
    pub tol: f64,
    /// Smallest output difference between two distinct inputs; only
    /// computed for invariance, where a constant operator passes trivially.
    pub control_min_diff: Option<f64>,
    pub passed: bool,
}

/// Below this the operator counts as constant in the positive control.
pub const CONTROL_MIN_DIFF: f64 = 1e-6;

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} trials, {} max err {:.3e} {} {:.0e}",
            self.op,
            if self.passed { "PASS" } else { "FAIL" },
            self.trials,
            self.expect,
            self.max_err,
            if self.max_err <= self.tol { "≤" } else { ">" },
            self.tol
        )?;
        if let Some(d) = self.control_min_diff {
            write!(f, "; non-constant control min diff {d:.3e}")?;
        }
        Ok(())
    }
}

fn random_projection(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Projection<f64> {
    Projection::new(Tensor::randn(&[cin, cout], 1.0, rng), Tensor::randn(&[cout], 0.5, rng)).expect("consistent shapes")
}

/// Unit-scale random projections (the small init scale would make the
/// attention term numerically negligible) and `refs` random references.
pub fn random_params(c: usize, refs: usize, norm: NormMode, rng: &mut ChaCha8Rng) -> AttentionParams<f64> {
    let c1 = (c / 2).max(1);
    AttentionParams {
        q: random_projection(c, c1, rng),
        k: random_projection(c, c1, rng),
        v: random_projection(c, c, rng),
        refs: (refs > 0).then(|| Tensor::randn(&[refs, c], 1.0, rng)),
        norm,
    }
}

/// A random permutation of a `w×h` grid: any geometric kind that applies,
/// or a shuffle.
pub fn random_permutation(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Result<PermutationSpec> {
    let kind = match rng.random_range(0..5) {
        0 if w == h => PermutationKind::Rotation90,
        1 => PermutationKind::FlipH,
        2 => PermutationKind::FlipV,
        3 => PermutationKind::CyclicShift {
            dx: rng.random_range(-(w as i64)..w as i64) as isize,
            dy: rng.random_range(-(h as i64)..h as i64) as isize,
        },
        _ => PermutationKind::Random { seed: rng.random() },
    };
    make_permutation(kind, w, h)
}

struct Trial {
    x: Tensor<f64>,
    spec: PermutationSpec,
    c: usize,
    w: usize,
    h: usize,
}

fn draw_trial(cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> Result<Trial> {
    let w = rng.random_range(cfg.side.0..=cfg.side.1);
    let h = rng.random_range(cfg.side.0..=cfg.side.1);
    let c = rng.random_range(cfg.channels.0..=cfg.channels.1);
    let spec = random_permutation(w, h, rng)?;
    Ok(Trial {
        x: Tensor::randn(&[w * h, c], 1.0, rng),
        spec,
        c,
        w,
        h,
    })
}

/// Runs `cfg.trials` random trials of `expect` on `op`.
pub fn run_suite(op: CheckOp, expect: Expect, cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.trials == 0 {
        return Err(Error::usage("at least one trial is required"));
    }
    if cfg.side.0 == 0 || cfg.side.0 > cfg.side.1 || cfg.channels.0 == 0 || cfg.channels.0 > cfg.channels.1 {
        return Err(Error::config("empty sampling range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut max_err = 0.0f64;
    let mut control = f64::INFINITY;
    for _ in 0..cfg.trials {
        let t = draw_trial(cfg, &mut rng)?;
        let err = match op {
            CheckOp::SelfAttention | CheckOp::SharedReference => {
                let refs = if op == CheckOp::SharedReference {
                    *cfg.refs.choose(&mut rng).unwrap_or(&0)
                } else {
                    0
                };
                let p = random_params(t.c, refs, cfg.norm, &mut rng);
                let f = |x: &Tensor<f64>| {
                    if op == CheckOp::SelfAttention {
                        self_attention(x, &p)
                    } else {
                        shared_reference_attention(x, &p)
                    }
                };
                if expect == Expect::Invariant {
                    let other = Tensor::randn(t.x.shape(), 1.0, &mut rng);
                    control = control.min(f(&t.x)?.max_abs_diff(&f(&other)?)?);
                }
                single_property(f, &t, expect)?
            }
            CheckOp::LearnedQuery => {
                let p = random_params(t.c, 0, cfg.norm, &mut rng);
                // Equivariance needs s_q = s to be defined at all.
                let size = match expect {
                    Expect::Equivariant => t.w * t.h,
                    Expect::Invariant => rng.random_range(1..=16),
                };
                let lq = LearnedQuery::random(size, p.k.out_features(), 1.0, &mut rng);
                let f = |x: &Tensor<f64>| learned_query_attention(x, &p, &lq);
                if expect == Expect::Invariant {
                    let other = Tensor::randn(t.x.shape(), 1.0, &mut rng);
                    control = control.min(f(&t.x)?.max_abs_diff(&f(&other)?)?);
                }
                single_property(f, &t, expect)?
            }
            CheckOp::BatchAware => {
                let p = random_params(t.c, 0, cfg.norm, &mut rng);
                let n = rng.random_range(1..=4);
                let mut xs = vec![t.x.clone()];
                xs.extend((1..n).map(|_| Tensor::randn(t.x.shape(), 1.0, &mut rng)));
                let err = batch_property(&xs, &p, &t.spec, expect, &mut rng)?;
                if expect == Expect::Invariant {
                    let mut ys = xs.clone();
                    ys[0] = Tensor::randn(t.x.shape(), 1.0, &mut rng);
                    let (a, b) = (batch_aware_attention(&xs, &p)?, batch_aware_attention(&ys, &p)?);
                    control = control.min(a[0].max_abs_diff(&b[0])?);
                }
                err
            }
        };
        max_err = max_err.max(err);
    }
    let control_min_diff = (expect == Expect::Invariant).then_some(control);
    let passed = max_err <= cfg.tol && control_min_diff.is_none_or(|d| d > CONTROL_MIN_DIFF);
    Ok(SuiteReport {
        op,
        expect,
        trials: cfg.trials,
        max_err,
        tol: cfg.tol,
        control_min_diff,
        passed,
    })
}

fn single_property<F>(f: F, t: &Trial, expect: Expect) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let report = match expect {
        Expect::Equivariant => check_equivariance(f, &t.x, &t.spec, 0.0)?,
        Expect::Invariant => check_invariance(f, &t.x, &t.spec, 0.0)?,
    };
    Ok(report.max_abs_err)
}

/// Equivariance: permuting `x_0` permutes `Y_0`, and reordering the batch
/// reorders the outputs. Invariance: permuting every other instance (key and
/// value content only, from `Y_0`'s point of view) leaves `Y_0` unchanged.
fn batch_property(
    xs: &[Tensor<f64>],
    p: &AttentionParams<f64>,
    spec: &PermutationSpec,
    expect: Expect,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let base = batch_aware_attention(xs, p)?;
    let mut err = 0.0f64;
    match expect {
        Expect::Equivariant => {
            let mut moved = xs.to_vec();
            moved[0] = apply_permutation(spec, &xs[0])?;
            let out = batch_aware_attention(&moved, p)?;
            err = err.max(out[0].max_abs_diff(&apply_permutation(spec, &base[0])?)?);
        }
        Expect::Invariant => {
            let mut moved = xs.to_vec();
            for x in moved.iter_mut().skip(1) {
                *x = apply_permutation(spec, x)?;
            }
            let out = batch_aware_attention(&moved, p)?;
            err = err.max(out[0].max_abs_diff(&base[0])?);
        }
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(rng);
    let shuffled: Vec<Tensor<f64>> = order.iter().map(|&i| xs[i].clone()).collect();
    let out = batch_aware_attention(&shuffled, p)?;
    for (j, &i) in order.iter().enumerate() {
        err = err.max(out[j].max_abs_diff(&base[i])?);
    }
    Ok(err)
}
