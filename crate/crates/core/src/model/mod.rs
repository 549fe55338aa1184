//! Depth-3 U-Net with an attention block at the bottleneck.
//!
//! Inputs and outputs are NHWC `[N, H, W, 1]` with `H` and `W` divisible by
//! 4. Each level runs two 3×3 conv + ReLU layers; a 3×3 stride-2 conv
//! downsamples and a 2×2 stride-2 transposed conv upsamples; skips are
//! channel concatenations. Channels are `b → 2b → 4b` for base width `b`.
//! The attention block works on the flattened bottleneck `[s×4b]` of each
//! instance and adds its output back to its input.

mod checkpoint;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, Entry, FORMAT_VERSION, MAGIC};

use crate::attention::{
    batch_aware_on, learned_query_on, shared_reference_with, AttentionParams, AttentionVars, LearnedQuery,
    NormMode, INIT_STD,
};
use crate::error::{Error, Result};
use crate::imaging::{image_dims, resize_bilinear, Image};
use crate::kv::KeyValues;
use crate::tensor::{Boundary, ConvSpec, Element, Tape, Tensor, Var};

/// What sits at the bottleneck, and how it routes the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Train: first half through shared-reference attention, second half
    /// through batch-aware attention. Predict: shared-reference only.
    #[default]
    Aea,
    /// Shared-reference attention in both modes.
    SrOnly,
    /// Train: batch-aware over the whole batch. Predict: self-attention.
    BaOnly,
    /// Self-attention (no references) in both modes.
    SelfOnly,
    /// Input-independent learned query; needs a fixed bottleneck size.
    LearnedQuery,
    /// Two 3×3 convs instead of attention (plain U-Net).
    None,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Aea,
        Variant::SrOnly,
        Variant::BaOnly,
        Variant::SelfOnly,
        Variant::LearnedQuery,
        Variant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Aea => "aea",
            Variant::SrOnly => "sr_only",
            Variant::BaOnly => "ba_only",
            Variant::SelfOnly => "self_only",
            Variant::LearnedQuery => "learned_query",
            Variant::None => "none",
        }
    }

    /// Whether the shared references exist for this variant.
    pub fn uses_refs(self) -> bool {
        matches!(self, Variant::Aea | Variant::SrOnly)
    }

    pub fn has_attention(self) -> bool {
        self != Variant::None
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| Error::config(format!("unknown variant {s:?}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Predict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub base_channels: usize,
    /// Number of shared references `r` (ignored by variants without them).
    pub refs: usize,
    pub variant: Variant,
    pub norm: NormMode,
    /// Wrap-around convolution borders (used by equivariance tests).
    pub periodic: bool,
    /// Learned-query rows; must equal the bottleneck size `H·W/16`.
    pub query_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            refs: 64,
            variant: Variant::Aea,
            norm: NormMode::Division,
            periodic: false,
            query_size: 0,
        }
    }
}

pub const MODEL_KEYS: [&str; 6] = ["base_channels", "refs", "variant", "norm", "periodic", "query_size"];

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if self.variant == Variant::LearnedQuery && self.query_size == 0 {
            return Err(Error::config("learned_query needs query_size = bottleneck positions"));
        }
        Ok(())
    }

    /// References actually allocated.
    pub fn effective_refs(&self) -> usize {
        if self.variant.uses_refs() {
            self.refs
        } else {
            0
        }
    }

    pub fn bottleneck_channels(&self) -> usize {
        4 * self.base_channels
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("base_channels", self.base_channels);
        kv.set("refs", self.refs);
        kv.set("variant", self.variant);
        kv.set("norm", self.norm);
        kv.set("periodic", self.periodic);
        kv.set("query_size", self.query_size);
        kv
    }

    /// Reads the model keys present in `kv` over the defaults; call
    /// [`ModelConfig::validate`] before use.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            base_channels: kv.parse_opt("base_channels")?.unwrap_or(d.base_channels),
            refs: kv.parse_opt("refs")?.unwrap_or(d.refs),
            variant: kv.parse_opt("variant")?.unwrap_or(d.variant),
            norm: kv.parse_opt("norm")?.unwrap_or(d.norm),
            periodic: kv.parse_opt("periodic")?.unwrap_or(d.periodic),
            query_size: kv.parse_opt("query_size")?.unwrap_or(d.query_size),
        })
    }

    /// 64-bit FNV-1a of the rendered config.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_kv().render().as_bytes())
    }

    fn conv_spec(&self, stride: usize) -> ConvSpec {
        let spec = ConvSpec::same(stride);
        if self.periodic {
            spec.with_boundary(Boundary::Periodic)
        } else {
            spec
        }
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// `(A_R group, batch-aware group)` sizes for a training batch of `n`: the
/// first `⌊n/2⌋` instances use shared references, except that a single
/// instance goes to the shared-reference branch alone.
pub fn branch_groups(n: usize) -> (usize, usize) {
    if n == 1 {
        (1, 0)
    } else {
        (n / 2, n - n / 2)
    }
}

/// Conv layers as `(name, kernel, cin, cout, transposed)`.
fn conv_layers(cfg: &ModelConfig) -> Vec<(&'static str, usize, usize, usize, bool)> {
    let b = cfg.base_channels;
    let mut layers = vec![
        ("enc1.0", 3, 1, b, false),
        ("enc1.1", 3, b, b, false),
        ("down1", 3, b, 2 * b, false),
        ("enc2.0", 3, 2 * b, 2 * b, false),
        ("enc2.1", 3, 2 * b, 2 * b, false),
        ("down2", 3, 2 * b, 4 * b, false),
        ("enc3.0", 3, 4 * b, 4 * b, false),
        ("enc3.1", 3, 4 * b, 4 * b, false),
        ("up2", 2, 4 * b, 2 * b, true),
        ("dec2.0", 3, 4 * b, 2 * b, false),
        ("dec2.1", 3, 2 * b, 2 * b, false),
        ("up1", 2, 2 * b, b, true),
        ("dec1.0", 3, 2 * b, b, false),
        ("dec1.1", 3, b, b, false),
        ("out", 1, b, 1, false),
    ];
    if cfg.variant == Variant::None {
        layers.push(("mid.0", 3, 4 * b, 4 * b, false));
        layers.push(("mid.1", 3, 4 * b, 4 * b, false));
    }
    layers
}

const ATTN_KEYS: [&str; 6] = ["attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv"];

/// Parameters keyed by name; iteration order is the sorted name order.
pub type ParamStore<T> = BTreeMap<String, Tensor<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamStore<T>,
}

/// Model parameters recorded on a tape, keyed like the [`ParamStore`].
pub type ModelVars = BTreeMap<String, Var>;

impl<T: Element> Model<T> {
    /// Fresh model: He-uniform conv weights, zero biases, `N(0, 0.02²)`
    /// attention projections and references.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, k, cin, cout, transposed) in conv_layers(&config) {
            // A transposed layer maps cin → cout with a [k,k,cout,cin] kernel.
            let shape = if transposed { [k, k, cout, cin] } else { [k, k, cin, cout] };
            let bound = (6.0 / (k * k * cin) as f64).sqrt();
            params.insert(format!("{name}.w"), Tensor::uniform(&shape, bound, &mut rng));
            params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        }
        if config.variant.has_attention() {
            let c = config.bottleneck_channels();
            let p = AttentionParams::<T>::init(c, config.effective_refs(), config.norm, &mut rng);
            for (key, t) in ATTN_KEYS.iter().zip([&p.q.weight, &p.q.bias, &p.k.weight, &p.k.bias, &p.v.weight, &p.v.bias]) {
                params.insert(key.to_string(), t.clone());
            }
            if let Some(r) = p.refs {
                params.insert("attn.refs".into(), r);
            }
            if config.variant == Variant::LearnedQuery {
                let lq = LearnedQuery::<T>::random(config.query_size, p.k.out_features(), INIT_STD, &mut rng);
                params.insert("attn.lq".into(), lq.query);
            }
        }
        Ok(Self { config, params })
    }

    /// Rebuilds a model from a parameter store, checking names and shapes
    /// against a fresh model of `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let template = Self::new(config.clone(), 0)?;
        if template.params.len() != params.len() {
            return Err(Error::config(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for (name, t) in &template.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::dim(format!(
                        "parameter {name}: expected {:?}, found {:?}",
                        t.shape(),
                        p.shape()
                    )))
                }
                None => return Err(Error::config(format!("missing parameter {name}"))),
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// The bottleneck attention parameters, when the variant has them.
    pub fn attention_params(&self) -> Option<AttentionParams<T>> {
        let g = |k: &str| self.params[k].clone();
        self.config.variant.has_attention().then(|| AttentionParams {
            q: crate::attention::Projection { weight: g("attn.wq"), bias: g("attn.bq") },
            k: crate::attention::Projection { weight: g("attn.wk"), bias: g("attn.bk") },
            v: crate::attention::Projection { weight: g("attn.wv"), bias: g("attn.bv") },
            refs: self.params.get("attn.refs").cloned(),
            norm: self.config.norm,
        })
    }

    /// Records every parameter on `tape`.
    pub fn register(&self, tape: &mut Tape<T>, trainable: bool) -> ModelVars {
        self.params
            .iter()
            .map(|(k, v)| {
                let var = if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), var)
            })
            .collect()
    }

    /// Forward pass on a scratch tape.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = forward_on(&self.config, &mut tape, &vars, xv, mode)?;
        Ok(tape.value(y).clone())
    }

    /// Predict-mode output for a batch of equally sized images.
    pub fn predict_images(&self, imgs: &[Image]) -> Result<Vec<Image>> {
        let x = stack_images::<T>(imgs)?;
        let y = self.forward(&x, Mode::Predict)?;
        unstack_images(&y)
    }

    pub fn predict_image(&self, img: &Image) -> Result<Image> {
        Ok(self.predict_images(std::slice::from_ref(img))?.remove(0))
    }

    /// Writes the config and `param/<name>` entries.
    pub fn write_to(&self, ckpt: &mut Checkpoint) {
        ckpt.insert_bytes("meta/model_config", self.config.to_kv().render().into_bytes());
        for (k, v) in &self.params {
            ckpt.insert_tensor(format!("param/{k}"), v);
        }
    }

    pub fn read_from(ckpt: &Checkpoint) -> Result<Self> {
        let text = std::str::from_utf8(ckpt.bytes("meta/model_config")?)
            .map_err(|_| Error::config("model config is not UTF-8"))?;
        let config = ModelConfig::from_kv(&KeyValues::parse(text)?)?;
        Self::from_params(config, ckpt.tensors_with_prefix("param/")?)
    }
}

/// Stacks `[H×W]` images into `[N, H, W, 1]`.
pub fn stack_images<T: Element>(imgs: &[Image]) -> Result<Tensor<T>> {
    let first = imgs.first().ok_or_else(|| Error::usage("empty image batch"))?;
    let (h, w) = image_dims(first)?;
    let mut data = Vec::with_capacity(imgs.len() * h * w);
    for img in imgs {
        if image_dims(img)? != (h, w) {
            return Err(Error::dim("images in a batch must share one size"));
        }
        data.extend(img.data().iter().map(|&v| T::from_f64(v)));
    }
    Tensor::new(&[imgs.len(), h, w, 1], data)
}

/// Splits `[N, H, W, 1]` into `N` images.
pub fn unstack_images<T: Element>(x: &Tensor<T>) -> Result<Vec<Image>> {
    let &[n, h, w, 1] = x.shape() else {
        return Err(Error::dim(format!("expected [N, H, W, 1], got {:?}", x.shape())));
    };
    x.data()
        .chunks(h * w)
        .take(n)
        .map(|c| Tensor::new(&[h, w], c.iter().map(|v| v.as_f64()).collect()))
        .collect()
}

fn var(vars: &ModelVars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::config(format!("model has no parameter {name}")))
}

fn conv<T: Element>(
    cfg: &ModelConfig,
    tape: &mut Tape<T>,
    vars: &ModelVars,
    name: &str,
    x: Var,
    stride: usize,
    relu: bool,
) -> Result<Var> {
    let y = tape.conv2d(x, var(vars, &format!("{name}.w"))?, cfg.conv_spec(stride))?;
    let y = tape.add_bias(y, var(vars, &format!("{name}.b"))?)?;
    Ok(if relu { tape.relu(y) } else { y })
}

fn up<T: Element>(cfg: &ModelConfig, tape: &mut Tape<T>, vars: &ModelVars, name: &str, x: Var) -> Result<Var> {
    let y = tape.conv2d_transpose(x, var(vars, &format!("{name}.w"))?, cfg.conv_spec(2))?;
    let y = tape.add_bias(y, var(vars, &format!("{name}.b"))?)?;
    Ok(tape.relu(y))
}

/// Encoder outputs: full-resolution skip, half-resolution skip, bottleneck.
pub fn encoder_on<T: Element>(
    cfg: &ModelConfig,
    tape: &mut Tape<T>,
    vars: &ModelVars,
    x: Var,
) -> Result<(Var, Var, Var)> {
    let shape = tape.shape(x).to_vec();
    match shape.as_slice() {
        &[_, h, w, 1] if h % 4 == 0 && w % 4 == 0 => {}
        &[_, h, w, 1] => {
            return Err(Error::dim(format!(
                "input {h}×{w} is not divisible by 4; pad it (see tile_and_stitch)"
            )))
        }
        other => return Err(Error::dim(format!("expected [N, H, W, 1] input, got {other:?}"))),
    }
    let e1 = conv(cfg, tape, vars, "enc1.0", x, 1, true)?;
    let e1 = conv(cfg, tape, vars, "enc1.1", e1, 1, true)?;
    let d1 = conv(cfg, tape, vars, "down1", e1, 2, true)?;
    let e2 = conv(cfg, tape, vars, "enc2.0", d1, 1, true)?;
    let e2 = conv(cfg, tape, vars, "enc2.1", e2, 1, true)?;
    let d2 = conv(cfg, tape, vars, "down2", e2, 2, true)?;
    let e3 = conv(cfg, tape, vars, "enc3.0", d2, 1, true)?;
    let e3 = conv(cfg, tape, vars, "enc3.1", e3, 1, true)?;
    Ok((e1, e2, e3))
}

/// The attention parameters recorded in `vars`.
pub fn attention_vars(cfg: &ModelConfig, vars: &ModelVars) -> Result<AttentionVars> {
    Ok(AttentionVars {
        wq: var(vars, "attn.wq")?,
        bq: var(vars, "attn.bq")?,
        wk: var(vars, "attn.wk")?,
        bk: var(vars, "attn.bk")?,
        wv: var(vars, "attn.wv")?,
        bv: var(vars, "attn.bv")?,
        refs: vars.get("attn.refs").copied(),
        norm: cfg.norm,
    })
}

/// The attention block on a batch of flattened instances `[s×c]`,
/// including the residual addition. Outputs keep the input order.
pub fn attention_block_on<T: Element>(
    tape: &mut Tape<T>,
    xs: &[Var],
    p: &AttentionVars,
    variant: Variant,
    learned_query: Option<Var>,
    mode: Mode,
) -> Result<Vec<Var>> {
    if xs.is_empty() {
        return Err(Error::usage("attention block needs at least one instance"));
    }
    let n = xs.len();
    let (n_ref, n_batch) = match (variant, mode) {
        (Variant::Aea, Mode::Train) => branch_groups(n),
        (Variant::BaOnly, Mode::Train) => (0, n),
        _ => (n, 0),
    };
    let mut outs = Vec::with_capacity(n);
    if variant == Variant::LearnedQuery {
        let q = learned_query.ok_or_else(|| Error::usage("learned_query variant without a query"))?;
        for &x in xs {
            let y = learned_query_on(tape, x, p, q)?;
            if tape.shape(y) != tape.shape(x) {
                return Err(Error::dim(format!(
                    "learned query yields {:?} rows but the bottleneck has {:?}",
                    tape.shape(y),
                    tape.shape(x)
                )));
            }
            outs.push(y);
        }
    } else {
        if n_ref > 0 {
            let ref_kv = p.ref_key_value(tape)?;
            for &x in &xs[..n_ref] {
                outs.push(shared_reference_with(tape, x, p, ref_kv)?);
            }
        }
        if n_batch > 0 {
            outs.extend(batch_aware_on(tape, &xs[n_ref..], p)?);
        }
    }
    xs.iter().zip(outs).map(|(&x, y)| tape.add(x, y)).collect()
}

/// Bottleneck block on `[N, h, w, c]`.
fn bottleneck_on<T: Element>(
    cfg: &ModelConfig,
    tape: &mut Tape<T>,
    vars: &ModelVars,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    if cfg.variant == Variant::None {
        let m = conv(cfg, tape, vars, "mid.0", x, 1, true)?;
        return conv(cfg, tape, vars, "mid.1", m, 1, true);
    }
    let shape = tape.shape(x).to_vec();
    let (n, s, c) = (shape[0], shape[1] * shape[2], shape[3]);
    let flat = tape.reshape(x, &[n * s, c])?;
    let xs = (0..n)
        .map(|i| tape.slice_rows(flat, i * s, s))
        .collect::<Result<Vec<_>>>()?;
    let p = attention_vars(cfg, vars)?;
    let lq = vars.get("attn.lq").copied();
    let ys = attention_block_on(tape, &xs, &p, cfg.variant, lq, mode)?;
    let merged = tape.concat_rows(&ys)?;
    tape.reshape(merged, &shape)
}

/// Full forward pass of `[N, H, W, 1]` to `[N, H, W, 1]`.
pub fn forward_on<T: Element>(
    cfg: &ModelConfig,
    tape: &mut Tape<T>,
    vars: &ModelVars,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let (e1, e2, e3) = encoder_on(cfg, tape, vars, x)?;
    let m = bottleneck_on(cfg, tape, vars, e3, mode)?;
    let u2 = up(cfg, tape, vars, "up2", m)?;
    let c2 = tape.concat_channels(u2, e2)?;
    let d2 = conv(cfg, tape, vars, "dec2.0", c2, 1, true)?;
    let d2 = conv(cfg, tape, vars, "dec2.1", d2, 1, true)?;
    let u1 = up(cfg, tape, vars, "up1", d2)?;
    let c1 = tape.concat_channels(u1, e1)?;
    let d1 = conv(cfg, tape, vars, "dec1.0", c1, 1, true)?;
    let d1 = conv(cfg, tape, vars, "dec1.1", d1, 1, true)?;
    conv(cfg, tape, vars, "out", d1, 1, false)
}

/// Plain-tensor attention block over flattened instances, for probing the
/// block in isolation.
pub fn attention_block_forward<T: Element>(
    xs: &[Tensor<T>],
    p: &AttentionParams<T>,
    variant: Variant,
    mode: Mode,
) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape, false);
    let inputs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let outs = attention_block_on(&mut tape, &inputs, &vars, variant, None, mode)?;
    Ok(outs.into_iter().map(|o| tape.value(o).clone()).collect())
}

/// Relevance of each bottleneck position to the abstract pixels
/// `ref_indices`: `q(f)·k(r_j)ᵀ` folded to the bottleneck grid, bilinearly
/// upsampled to the input size and min-max normalized (a flat map becomes
/// all zeros).
pub fn relevance_heatmap<T: Element>(img: &Image, model: &Model<T>, ref_indices: &[usize]) -> Result<Vec<Image>> {
    let r = model.params.get("attn.refs").map_or(0, |t| t.shape()[0]);
    if let Some(&bad) = ref_indices.iter().find(|&&j| j >= r) {
        return Err(Error::usage(format!(
            "reference index {bad} out of range: the model has {r} references"
        )));
    }
    let (h, w) = image_dims(img)?;
    let cfg = &model.config;
    let mut tape = Tape::new();
    let vars = model.register(&mut tape, false);
    let x = tape.constant(stack_images::<T>(std::slice::from_ref(img))?);
    let (_, _, e3) = encoder_on(cfg, &mut tape, &vars, x)?;
    let shape = tape.shape(e3).to_vec();
    let (bh, bw, c) = (shape[1], shape[2], shape[3]);
    let flat = tape.reshape(e3, &[bh * bw, c])?;
    let p = attention_vars(cfg, &vars)?;
    let q = p.query(&mut tape, flat)?;
    let refs = p.refs.ok_or_else(|| Error::usage("model has no shared references"))?;
    let k = p.key(&mut tape, refs)?;
    let scores = tape.matmul_t(q, false, k, true)?;
    let scores = tape.value(scores);

    ref_indices
        .iter()
        .map(|&j| {
            let col: Vec<f64> = (0..bh * bw).map(|i| scores.at2(i, j).as_f64()).collect();
            let up = resize_bilinear(&Tensor::new(&[bh, bw], col)?, h, w)?;
            let (lo, hi) = up
                .data()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            Ok(if hi > lo { up.map(|v| (v - lo) / (hi - lo)) } else { Tensor::zeros(&[h, w]) })
        })
        .collect()
}

#[cfg(test)]
mod tests;
