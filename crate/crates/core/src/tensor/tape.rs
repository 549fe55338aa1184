//! Linear reverse-mode tape.
//!
//! Every operation appends one node holding its forward value. `backward`
//! walks the nodes from the loss down to the first one, visiting each once.

use super::conv::{as_batch_shape, Geometry};
use super::{matmul_t, ConvSpec, Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, ta: bool, b: Var, tb: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddBias { x: Var, bias: Var },
    Relu(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows { a: Var, start: usize },
    ConcatChannels(Var, Var),
    Conv { x: Var, k: Var, geom: Geometry },
    ConvTranspose { x: Var, k: Var, geom: Geometry },
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// Single-owner: a tape is mutated by every recorded op and must not be
/// shared between threads while recording.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not influence the loss
    /// through a differentiable path.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn rank_err<T: Element>(what: &str, t: &Tensor<T>) -> Error {
    Error::dim(format!("{what}: unexpected shape {:?}", t.shape()))
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A differentiable leaf (model parameter or input under test).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Sign pattern (`input > 0`) of every ReLU on the tape, in record
    /// order. Two evaluations with equal patterns lie on the same smooth
    /// piece of the function.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|&v| v > T::zero()))
            .collect()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    /// `op(a)·op(b)` with optional transposes.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let value = matmul_t(self.value(a), ta, self.value(b), tb)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::MatMul { a, ta, b, tb }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.needs(&[a]);
        self.push(value, Op::Scale(a, s), ng)
    }

    /// Adds a `[c]` bias along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let b = self.value(bias);
        let c = *self.value(x).shape().last().unwrap_or(&0);
        if b.numel() != c || b.rank() != 1 {
            return Err(Error::dim(format!(
                "bias {:?} does not match trailing extent {c}",
                b.shape()
            )));
        }
        let mut value = self.value(x).clone();
        let bd = b.data().to_vec();
        for row in value.data_mut().chunks_mut(c) {
            for (v, &bb) in row.iter_mut().zip(&bd) {
                *v += bb;
            }
        }
        let ng = self.needs(&[x, bias]);
        Ok(self.push(value, Op::AddBias { x, bias }, ng))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(T::zero()));
        let ng = self.needs(&[a]);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (_, c) = self.value(a).dims2()?;
        let mut value = self.value(a).clone();
        for row in value.data_mut().chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Stacks matrices along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::vstack(&values)?;
        let ng = self.needs(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).rows(start, len)?;
        let ng = self.needs(&[a]);
        Ok(self.push(value, Op::SliceRows { a, start }, ng))
    }

    /// Concatenates along the last (channel) axis; leading extents must agree.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim(format!(
                "channel concat needs matching leading extents: {sa:?} vs {sb:?}"
            )));
        }
        let (ca, cb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let mut data = Vec::with_capacity(va.numel() + vb.numel());
        for (ra, rb) in va.data().chunks(ca).zip(vb.data().chunks(cb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let value = Tensor::new(&shape, data)?;
        let ng = self.needs(&[a, b]);
        Ok(self.push(value, Op::ConcatChannels(a, b), ng))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let (shape, squeeze) = as_batch_shape(self.shape(x))?;
        let geom = Geometry::forward(shape, self.value(k), spec)?;
        let data = geom.forward_op(self.value(x).data(), self.value(k).data());
        let out = geom.out_shape();
        let value = Tensor::new(if squeeze { &out[1..] } else { &out }, data)?;
        let ng = self.needs(&[x, k]);
        Ok(self.push(value, Op::Conv { x, k, geom }, ng))
    }

    pub fn conv2d_transpose(&mut self, x: Var, k: Var, spec: ConvSpec) -> Result<Var> {
        let (shape, squeeze) = as_batch_shape(self.shape(x))?;
        let geom = Geometry::transposed(shape, self.value(k), spec)?;
        let data = geom.adjoint_op(self.value(x).data(), self.value(k).data());
        let out = geom.in_shape();
        let value = Tensor::new(if squeeze { &out[1..] } else { &out }, data)?;
        let ng = self.needs(&[x, k]);
        Ok(self.push(value, Op::ConvTranspose { x, k, geom }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(&[a]);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(t.sum() / T::from_f64(t.numel() as f64));
        let ng = self.needs(&[a]);
        self.push(value, Op::Mean(a), ng)
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.value(pred).sub(self.value(target))?;
        let n = T::from_f64(diff.numel() as f64);
        let value = Tensor::scalar(diff.data().iter().map(|&d| d * d).sum::<T>() / n);
        let ng = self.needs(&[pred, target]);
        Ok(self.push(value, Op::Mse(pred, target), ng))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        if !self.nodes[v.0].needs_grad {
            return Ok(());
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, ta, b, tb } => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.nodes[a.0].needs_grad {
                    let da = match (ta, tb) {
                        (false, false) => matmul_t(g, false, bv, true)?,
                        (false, true) => matmul_t(g, false, bv, false)?,
                        (true, false) => matmul_t(bv, false, g, true)?,
                        (true, true) => matmul_t(bv, true, g, true)?,
                    };
                    self.accumulate(grads, a, da)?;
                }
                if self.nodes[b.0].needs_grad {
                    let db = match (ta, tb) {
                        (false, false) => matmul_t(av, true, g, false)?,
                        (false, true) => matmul_t(g, true, av, false)?,
                        (true, false) => matmul_t(av, false, g, false)?,
                        (true, true) => matmul_t(g, true, av, true)?,
                    };
                    self.accumulate(grads, b, db)?;
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.scale(-T::one()))?;
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                self.accumulate(grads, a, g.zip_map(bv, |x, y| x * y)?)?;
                self.accumulate(grads, b, g.zip_map(av, |x, y| x * y)?)?;
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s))?,
            &Op::AddBias { x, bias } => {
                self.accumulate(grads, x, g.clone())?;
                if self.nodes[bias.0].needs_grad {
                    let c = self.value(bias).numel();
                    let mut db = vec![T::zero(); c];
                    for row in g.data().chunks(c) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, bias, Tensor::new(&[c], db)?)?;
                }
            }
            &Op::Relu(a) => {
                let dx = g.zip_map(&node.value, |gv, y| if y > T::zero() { gv } else { T::zero() })?;
                self.accumulate(grads, a, dx)?;
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (_, c) = y.dims2()?;
                let mut dx = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
                    let dotp: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dotp)));
                }
                self.accumulate(grads, a, Tensor::new(y.shape(), dx)?)?;
            }
            &Op::Reshape(a) => {
                let dx = g.reshape(self.shape(a))?;
                self.accumulate(grads, a, dx)?;
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (r, _) = self.value(p).dims2()?;
                    if self.nodes[p.0].needs_grad {
                        self.accumulate(grads, p, g.rows(start, r)?)?;
                    }
                    start += r;
                }
            }
            &Op::SliceRows { a, start } => {
                let (r, c) = self.value(a).dims2()?;
                let mut dx = Tensor::zeros(&[r, c]);
                dx.data_mut()[start * c..start * c + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, a, dx)?;
            }
            &Op::ConcatChannels(a, b) => {
                let ca = *self.shape(a).last().ok_or_else(|| rank_err("concat", g))?;
                let cb = *self.shape(b).last().ok_or_else(|| rank_err("concat", g))?;
                let mut da = Vec::with_capacity(self.value(a).numel());
                let mut db = Vec::with_capacity(self.value(b).numel());
                for row in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, a, Tensor::new(self.shape(a), da)?)?;
                self.accumulate(grads, b, Tensor::new(self.shape(b), db)?)?;
            }
            &Op::Conv { x, k, ref geom } => {
                if self.nodes[x.0].needs_grad {
                    let dx = geom.adjoint_op(g.data(), self.value(k).data());
                    self.accumulate(grads, x, Tensor::new(self.shape(x), dx)?)?;
                }
                if self.nodes[k.0].needs_grad {
                    let dk = geom.kernel_grad(self.value(x).data(), g.data());
                    self.accumulate(grads, k, Tensor::new(self.shape(k), dk)?)?;
                }
            }
            &Op::ConvTranspose { x, k, ref geom } => {
                // y = Cᵀx, so dx = C·dy and dk mirrors the forward kernel gradient
                // with the roles of input and cotangent exchanged.
                if self.nodes[x.0].needs_grad {
                    let dx = geom.forward_op(g.data(), self.value(k).data());
                    self.accumulate(grads, x, Tensor::new(self.shape(x), dx)?)?;
                }
                if self.nodes[k.0].needs_grad {
                    let dk = geom.kernel_grad(g.data(), self.value(x).data());
                    self.accumulate(grads, k, Tensor::new(self.shape(k), dk)?)?;
                }
            }
            &Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, a, Tensor::full(self.shape(a), gv))?;
            }
            &Op::Mean(a) => {
                let n = T::from_f64(self.value(a).numel() as f64);
                self.accumulate(grads, a, Tensor::full(self.shape(a), g.data()[0] / n))?;
            }
            &Op::Mse(p, t) => {
                let n = T::from_f64(self.value(p).numel() as f64);
                let coef = T::from_f64(2.0) * g.data()[0] / n;
                let d = self.value(p).zip_map(self.value(t), |a, b| (a - b) * coef)?;
                if self.nodes[t.0].needs_grad {
                    self.accumulate(grads, t, d.scale(-T::one()))?;
                }
                self.accumulate(grads, p, d)?;
            }
        }
        Ok(())
    }
}
