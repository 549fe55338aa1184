//! Attention operators over spatially flattened feature maps `[s×c]`.
//!
//! All four operators share one parameterization: three pointwise
//! projections `q`, `k`, `v` (a `[c×c']` weight plus a `[c']` bias) and an
//! optional learnable reference matrix `R: [r×c]`. The output spatial size
//! follows the query source and the output feature size follows `v`.
//!
//! Each operator comes in two forms: a tape form (`*_on`) used by the model
//! and for differentiation, and a plain form that evaluates on a scratch
//! tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// How `Q·Kᵀ` is normalized before it weights the values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormMode {
    /// Divide by the number of key positions.
    #[default]
    Division,
    /// Row-wise softmax.
    Softmax,
}

impl std::str::FromStr for NormMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "division" => Ok(Self::Division),
            "softmax" => Ok(Self::Softmax),
            other => Err(Error::config(format!("unknown norm mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for NormMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Division => "division",
            Self::Softmax => "softmax",
        })
    }
}

/// Pointwise (1×1) linear map with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> Projection<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, out) = weight.dims2()?;
        if bias.shape() != [out] {
            return Err(Error::dim(format!(
                "bias {:?} does not match projection width {out}",
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// `N(0, std²)` weights and zero bias.
    pub fn random<R: Rng + ?Sized>(cin: usize, cout: usize, std: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[cin, cout], std, rng),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            weight: Tensor::eye(c),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Projection parameters shared by every attention operator.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<T> {
    pub q: Projection<T>,
    pub k: Projection<T>,
    pub v: Projection<T>,
    /// Shared references `[r×c]`; `None` means `r = 0`.
    pub refs: Option<Tensor<T>>,
    pub norm: NormMode,
}

/// Standard deviation of the random projection and reference init.
pub const INIT_STD: f64 = 0.02;

impl<T: Element> AttentionParams<T> {
    /// Random init with `c1 = c/2` (at least 1) and `c2 = c`.
    pub fn init<R: Rng + ?Sized>(c: usize, refs: usize, norm: NormMode, rng: &mut R) -> Self {
        let c1 = (c / 2).max(1);
        Self {
            q: Projection::random(c, c1, INIT_STD, rng),
            k: Projection::random(c, c1, INIT_STD, rng),
            v: Projection::random(c, c, INIT_STD, rng),
            refs: (refs > 0).then(|| Tensor::randn(&[refs, c], INIT_STD, rng)),
            norm,
        }
    }

    /// Identity projections (`c1 = c2 = c`), zero bias, no references.
    pub fn identity(c: usize, norm: NormMode) -> Self {
        Self {
            q: Projection::identity(c),
            k: Projection::identity(c),
            v: Projection::identity(c),
            refs: None,
            norm,
        }
    }

    pub fn with_refs(mut self, refs: Tensor<T>) -> Self {
        self.refs = Some(refs);
        self
    }

    pub fn in_features(&self) -> usize {
        self.q.in_features()
    }

    pub fn ref_count(&self) -> usize {
        self.refs.as_ref().map_or(0, |r| r.shape()[0])
    }

    /// Registers every tensor on `tape`, as parameters or as constants.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> AttentionVars {
        let mut reg = |t: &Tensor<T>| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        AttentionVars {
            wq: reg(&self.q.weight),
            bq: reg(&self.q.bias),
            wk: reg(&self.k.weight),
            bk: reg(&self.k.bias),
            wv: reg(&self.v.weight),
            bv: reg(&self.v.bias),
            refs: self.refs.as_ref().map(&mut reg),
            norm: self.norm,
        }
    }
}

/// An input-independent query matrix `[s_q×c1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedQuery<T> {
    pub query: Tensor<T>,
}

impl<T: Element> LearnedQuery<T> {
    pub fn new(query: Tensor<T>) -> Result<Self> {
        query.dims2()?;
        Ok(Self { query })
    }

    pub fn random<R: Rng + ?Sized>(size: usize, c1: usize, std: f64, rng: &mut R) -> Self {
        Self {
            query: Tensor::randn(&[size, c1], std, rng),
        }
    }

    pub fn size(&self) -> usize {
        self.query.shape()[0]
    }
}

/// [`AttentionParams`] recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub refs: Option<Var>,
    pub norm: NormMode,
}

impl AttentionVars {
    fn project<T: Element>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var> {
        let (_, c) = tape.value(x).dims2()?;
        let cin = tape.shape(w)[0];
        if c != cin {
            return Err(Error::dim(format!(
                "input has {c} features but the projection expects {cin}"
            )));
        }
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn query<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Self::project(tape, x, self.wq, self.bq)
    }

    pub fn key<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Self::project(tape, x, self.wk, self.bk)
    }

    pub fn value<T: Element>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        Self::project(tape, x, self.wv, self.bv)
    }

    /// Keys and values of the references, `(k(R), v(R))`.
    pub fn ref_key_value<T: Element>(&self, tape: &mut Tape<T>) -> Result<Option<(Var, Var)>> {
        let Some(r) = self.refs else {
            return Ok(None);
        };
        Ok(Some((self.key(tape, r)?, self.value(tape, r)?)))
    }
}

/// `Normalize(scores)` for a `[sq×sk]` score matrix.
pub fn normalize<T: Element>(scores: &Tensor<T>, mode: NormMode, sk: usize) -> Result<Tensor<T>> {
    if sk == 0 {
        return Err(Error::dim("normalization over zero key positions"));
    }
    let mut tape = Tape::new();
    let s = tape.constant(scores.clone());
    let out = normalize_on(&mut tape, s, mode, sk)?;
    Ok(tape.value(out).clone())
}

fn normalize_on<T: Element>(tape: &mut Tape<T>, scores: Var, mode: NormMode, sk: usize) -> Result<Var> {
    match mode {
        NormMode::Division => Ok(tape.scale(scores, T::one() / T::from_f64(sk as f64))),
        NormMode::Softmax => tape.softmax_rows(scores),
    }
}

/// `Normalize(q·kᵀ)·v`, normalizing over the rows of `k`.
pub fn attend<T: Element>(tape: &mut Tape<T>, q: Var, k: Var, v: Var, mode: NormMode) -> Result<Var> {
    let (sk, _) = tape.value(k).dims2()?;
    let (sv, _) = tape.value(v).dims2()?;
    if sk != sv {
        return Err(Error::dim(format!("{sk} keys but {sv} values")));
    }
    let scores = tape.matmul_t(q, false, k, true)?;
    let weights = normalize_on(tape, scores, mode, sk)?;
    tape.matmul(weights, v)
}

pub fn self_attention_on<T: Element>(tape: &mut Tape<T>, x: Var, p: &AttentionVars) -> Result<Var> {
    let q = p.query(tape, x)?;
    let k = p.key(tape, x)?;
    let v = p.value(tape, x)?;
    attend(tape, q, k, v, p.norm)
}

pub fn learned_query_on<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    p: &AttentionVars,
    query: Var,
) -> Result<Var> {
    let c1 = tape.shape(p.wk)[1];
    let (_, qc) = tape.value(query).dims2()?;
    if qc != c1 {
        return Err(Error::dim(format!(
            "learned query has {qc} features but keys have {c1}"
        )));
    }
    let k = p.key(tape, x)?;
    let v = p.value(tape, x)?;
    attend(tape, query, k, v, p.norm)
}

/// Keys and values over `[R; x]`, references first.
fn augmented_key_value<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    p: &AttentionVars,
    ref_kv: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let kx = p.key(tape, x)?;
    let vx = p.value(tape, x)?;
    match ref_kv {
        None => Ok((kx, vx)),
        Some((kr, vr)) => Ok((tape.concat_rows(&[kr, kx])?, tape.concat_rows(&[vr, vx])?)),
    }
}

fn check_refs<T: Element>(tape: &Tape<T>, x: Var, p: &AttentionVars) -> Result<()> {
    if let Some(r) = p.refs {
        let (_, rc) = tape.value(r).dims2()?;
        let (_, c) = tape.value(x).dims2()?;
        if rc != c {
            return Err(Error::dim(format!(
                "references have {rc} features but the input has {c}"
            )));
        }
    }
    Ok(())
}

/// Shared-reference attention with precomputed reference keys/values, for
/// callers that apply it to many instances.
pub fn shared_reference_with<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    p: &AttentionVars,
    ref_kv: Option<(Var, Var)>,
) -> Result<Var> {
    check_refs(tape, x, p)?;
    let q = p.query(tape, x)?;
    let (k, v) = augmented_key_value(tape, x, p, ref_kv)?;
    attend(tape, q, k, v, p.norm)
}

pub fn shared_reference_on<T: Element>(tape: &mut Tape<T>, x: Var, p: &AttentionVars) -> Result<Var> {
    check_refs(tape, x, p)?;
    let ref_kv = p.ref_key_value(tape)?;
    shared_reference_with(tape, x, p, ref_kv)
}

/// Batch-aware attention: every instance queries the keys and values of the
/// whole batch. Returns one output per input, in order.
pub fn batch_aware_on<T: Element>(tape: &mut Tape<T>, xs: &[Var], p: &AttentionVars) -> Result<Vec<Var>> {
    let first = *xs
        .first()
        .ok_or_else(|| Error::usage("batch-aware attention needs at least one instance"))?;
    let shape = tape.shape(first).to_vec();
    if let Some(bad) = xs.iter().find(|&&x| tape.shape(x) != shape.as_slice()) {
        return Err(Error::dim(format!(
            "batch instances differ in shape: {shape:?} vs {:?}",
            tape.shape(*bad)
        )));
    }
    let all = tape.concat_rows(xs)?;
    let k = p.key(tape, all)?;
    let v = p.value(tape, all)?;
    xs.iter()
        .map(|&x| {
            let q = p.query(tape, x)?;
            attend(tape, q, k, v, p.norm)
        })
        .collect()
}

fn eval_single<T: Element>(
    x: &Tensor<T>,
    p: &AttentionParams<T>,
    f: impl FnOnce(&mut Tape<T>, Var, &AttentionVars) -> Result<Var>,
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false);
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv, &vars)?;
    Ok(tape.value(out).clone())
}

/// `Normalize(q(x)·k(x)ᵀ)·v(x)`.
pub fn self_attention<T: Element>(x: &Tensor<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    eval_single(x, p, |t, x, v| self_attention_on(t, x, v))
}

/// `Normalize(Q·k(x)ᵀ)·v(x)` with an input-independent `Q`; the output has
/// `lq.size()` rows whatever the input size.
pub fn learned_query_attention<T: Element>(
    x: &Tensor<T>,
    p: &AttentionParams<T>,
    lq: &LearnedQuery<T>,
) -> Result<Tensor<T>> {
    eval_single(x, p, |t, x, v| {
        let q = t.constant(lq.query.clone());
        learned_query_on(t, x, v, q)
    })
}

/// Attention whose keys and values come from `[R; x]`; with division
/// normalization the prefactor is `1/(r + s)`.
pub fn shared_reference_attention<T: Element>(x: &Tensor<T>, p: &AttentionParams<T>) -> Result<Tensor<T>> {
    eval_single(x, p, |t, x, v| shared_reference_on(t, x, v))
}

pub fn batch_aware_attention<T: Element>(xs: &[Tensor<T>], p: &AttentionParams<T>) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false);
    let inputs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let outs = batch_aware_on(&mut tape, &inputs, &vars)?;
    Ok(outs.into_iter().map(|o| tape.value(o).clone()).collect())
}
