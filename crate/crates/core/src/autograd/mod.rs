//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations append nodes in execution order; [`Tape::backward`] walks the
//! tape in reverse. Leaves may borrow their values (model parameters) so a
//! forward pass never copies weights.

pub(crate) mod kernels;

use std::borrow::Cow;

use kernels::ConvDims;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Element, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: usize, w: usize, b: usize },
    ConvTranspose2d { x: usize, w: usize, b: usize },
    MaxPool2 { x: usize, argmax: Vec<usize> },
    Upsample2 { x: usize },
    Relu { x: usize },
    Identity { x: usize },
    Concat { a: usize, b: usize },
    Add { a: usize, b: usize },
    Scale { x: usize, s: T },
    Softmax { x: usize },
    LayerNorm { x: usize, g: usize, b: usize, xhat: Vec<T>, rstd: Vec<T> },
    MatMul { a: usize, b: usize, batch: usize, p: usize, q: usize, r: usize, broadcast_b: bool },
    Reshape { x: usize },
    TransposeLast2 { x: usize },
    Mse { a: usize, b: usize },
    Sum { x: usize },
}

struct Node<'a, T: Element> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
    grad: Option<Tensor<T>>,
}

/// Below this input size, folding the kernel costs more than it saves.
const FUSED_UPSAMPLE_MIN_PIXELS: usize = 64;

pub struct Tape<'a, T: Element> {
    nodes: Vec<Node<'a, T>>,
    grad_enabled: bool,
}

impl<'a, T: Element> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Element> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never tracks gradients (inference).
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    /// Borrowed trainable leaf tagged with its parameter-store index.
    pub fn param(&mut self, value: &'a Tensor<T>, index: usize) -> Var {
        let v = self.push(Cow::Borrowed(value), Op::Leaf, true);
        self.nodes[v.0].param = Some(index);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// `(parameter index, gradient)` for every parameter leaf with a gradient.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.grad.as_ref()?)))
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, i: usize) -> &[T] {
        self.nodes[i].value.data()
    }

    fn conv_dims(&self, op: &'static str, x: Var, w: Var, b: Var, transposed: bool) -> Result<ConvDims> {
        let (n, c_in, h, wd) = self.value(x).dims4(op)?;
        let ws = self.shape(w);
        let (k, c_out, w_in) = match *ws {
            [a, b, k1, k2] if k1 == k2 && k1 % 2 == 1 => {
                if transposed {
                    (k1, b, a)
                } else {
                    (k1, a, b)
                }
            }
            _ => return Err(Error::shape(op, format!("kernel shape {ws:?} must be [_, _, k, k] with odd k"))),
        };
        if w_in != c_in {
            return Err(Error::shape(op, format!("input has {c_in} channels, kernel expects {w_in}")));
        }
        if self.shape(b) != [c_out] {
            return Err(Error::shape(op, format!("bias shape {:?}, expected [{c_out}]", self.shape(b))));
        }
        Ok(ConvDims { n, c_in, c_out, h, w: wd, k })
    }

    /// Stride-1, same-padded cross-correlation; kernel `[c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = self.conv_dims("conv2d", x, w, b, false)?;
        let out = kernels::conv2d_forward(self.data(x.0), self.data(w.0), self.data(b.0), d, false);
        let value = Tensor::new(vec![d.n, d.c_out, d.h, d.w], out)?;
        Ok(self.push_op(value, Op::Conv2d { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0]))
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// `relu(conv2d(x, w, b))`, in a single pass when nothing needs a
    /// gradient.
    pub fn conv2d_relu(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        if self.tracked(&[x, w, b]) {
            let y = self.conv2d(x, w, b)?;
            return Ok(self.relu(y));
        }
        let d = self.conv_dims("conv2d", x, w, b, false)?;
        let out = kernels::conv2d_forward(self.data(x.0), self.data(w.0), self.data(b.0), d, true);
        let value = Tensor::new(vec![d.n, d.c_out, d.h, d.w], out)?;
        Ok(self.push(Cow::Owned(value), Op::Leaf, false))
    }

    /// Adjoint of [`Tape::conv2d`]; kernel `[c_in, c_out, k, k]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = self.conv_dims("conv_transpose2d", x, w, b, true)?;
        let out = kernels::conv_transpose2d_forward(self.data(x.0), self.data(w.0), self.data(b.0), d);
        let value = Tensor::new(vec![d.n, d.c_out, d.h, d.w], out)?;
        Ok(self.push_op(value, Op::ConvTranspose2d { x: x.0, w: w.0, b: b.0 }, &[x.0, w.0, b.0]))
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("maxpool2", format!("spatial dims {h}×{w} must be even")));
        }
        if !self.tracked(&[x]) {
            let out = kernels::maxpool2_values(self.data(x.0), n * c, h, w);
            let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
            return Ok(self.push(Cow::Owned(value), Op::Leaf, false));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.data(x.0), n * c, h, w);
        let value = Tensor::new(vec![n, c, h / 2, w / 2], out)?;
        Ok(self.push_op(value, Op::MaxPool2 { x: x.0, argmax }, &[x.0]))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4("upsample2")?;
        let out = kernels::upsample2_forward(self.data(x.0), n * c, h, w);
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.push_op(value, Op::Upsample2 { x: x.0 }, &[x.0]))
    }

    /// `conv2d(upsample2(x), w, b)`. When nothing upstream needs a gradient,
    /// the kernel is 3×3 and the input is not tiny, this runs as one kernel
    /// on the input grid.
    pub fn upsample_conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.upsample_conv2d_with(x, w, b, false)
    }

    /// `relu(upsample_conv2d(x, w, b))`.
    pub fn upsample_conv2d_relu(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.upsample_conv2d_with(x, w, b, true)
    }

    fn upsample_conv2d_with(&mut self, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
        let tracked = self.tracked(&[x, w, b]);
        let (_, _, h, wd) = self.value(x).dims4("upsample_conv2d")?;
        if tracked || self.shape(w).get(2) != Some(&3) || h * wd < FUSED_UPSAMPLE_MIN_PIXELS {
            let up = self.upsample2(x)?;
            return if relu { self.conv2d_relu(up, w, b) } else { self.conv2d(up, w, b) };
        }
        let d = self.conv_dims("upsample_conv2d", x, w, b, false)?;
        let out = kernels::upsample_conv3_forward(self.data(x.0), self.data(w.0), self.data(b.0), d, relu);
        let value = Tensor::new(vec![d.n, d.c_out, 2 * d.h, 2 * d.w], out)?;
        Ok(self.push(Cow::Owned(value), Op::Leaf, false))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push_op(value, Op::Relu { x: x.0 }, &[x.0])
    }

    /// Linear (identity) activation.
    pub fn identity(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.push_op(value, Op::Identity { x: x.0 }, &[x.0])
    }

    /// Stacks `a` then `b` along axis 1.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape("concat_channels", format!("{sa:?} vs {sb:?}")));
        }
        let n = sa[0];
        let inner: usize = sa[2..].iter().product();
        let (ca, cb) = (sa[1] * inner, sb[1] * inner);
        let mut shape = sa.to_vec();
        shape[1] += sb[1];
        let (da, db) = (self.data(a.0), self.data(b.0));
        let mut out = Vec::with_capacity(n * (ca + cb));
        for i in 0..n {
            out.extend_from_slice(&da[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&db[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::Concat { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let data = self.data(a.0).iter().zip(self.data(b.0)).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push_op(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|&v| v * s).collect())
            .expect("same shape");
        self.push_op(value, Op::Scale { x: x.0, s }, &[x.0])
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let l = *src.shape().last().expect("rank >= 1");
        let value = Tensor::new(src.shape().to_vec(), kernels::softmax_rows(src.data(), l)).expect("same shape");
        self.push_op(value, Op::Softmax { x: x.0 }, &[x.0])
    }

    /// Normalises over the last axis with affine `gain`/`shift` of that length.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Result<Var> {
        let e = *self.shape(x).last().expect("rank >= 1");
        if self.shape(gain) != [e] || self.shape(shift) != [e] {
            return Err(Error::shape("layer_norm", format!("affine params must be [{e}]")));
        }
        let (out, xhat, rstd) = kernels::layer_norm_forward(self.data(x.0), self.data(gain.0), self.data(shift.0), e);
        let value = Tensor::new(self.shape(x).to_vec(), out)?;
        Ok(self.push_op(
            value,
            Op::LayerNorm { x: x.0, g: gain.0, b: shift.0, xhat, rstd },
            &[x.0, gain.0, shift.0],
        ))
    }

    /// Batched product `[..., P, Q] · [..., Q, R]`. Leading dims must match,
    /// or `b` may be a plain `[Q, R]` matrix broadcast over the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::shape("matmul", "operands need rank >= 2"));
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (q2, r) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if q != q2 {
            return Err(Error::shape("matmul", format!("inner dims {q} vs {q2}")));
        }
        let lead_a = &sa[..sa.len() - 2];
        let lead_b = &sb[..sb.len() - 2];
        let broadcast_b = lead_b.is_empty() && !lead_a.is_empty();
        if !broadcast_b && lead_a != lead_b {
            return Err(Error::shape("matmul", format!("batch dims {lead_a:?} vs {lead_b:?}")));
        }
        let batch: usize = lead_a.iter().product();
        let (da, db) = (self.data(a.0), self.data(b.0));
        let mut out = vec![T::zero(); batch * p * r];
        for i in 0..batch {
            let bi = if broadcast_b { 0 } else { i };
            gemm(
                p,
                q,
                r,
                &da[i * p * q..(i + 1) * p * q],
                false,
                &db[bi * q * r..(bi + 1) * q * r],
                false,
                &mut out[i * p * r..(i + 1) * p * r],
                false,
            );
        }
        let mut shape = lead_a.to_vec();
        shape.extend([p, r]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::MatMul { a: a.0, b: b.0, batch, p, q, r, broadcast_b }, &[a.0, b.0]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape.to_vec())?;
        Ok(self.push_op(value, Op::Reshape { x: x.0 }, &[x.0]))
    }

    pub fn transpose_last2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::shape("transpose_last2", "rank >= 2 required"));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s[..s.len() - 2].iter().product();
        let out = kernels::transpose_last2(self.data(x.0), batch, rows, cols);
        let mut shape = s;
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let value = Tensor::new(shape, out)?;
        Ok(self.push_op(value, Op::TransposeLast2 { x: x.0 }, &[x.0]))
    }

    /// Mean squared error over all elements, as a one-element tensor.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::shape(
                "mse_loss",
                format!("{:?} vs {:?}", self.shape(pred), self.shape(target)),
            ));
        }
        let count = T::from_f64(self.value(pred).len() as f64);
        let sum: T = self
            .data(pred.0)
            .iter()
            .zip(self.data(target.0))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let value = Tensor::scalar(sum / count);
        Ok(self.push_op(value, Op::Mse { a: pred.0, b: target.0 }, &[pred.0, target.0]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.data(x.0).iter().copied().sum());
        self.push_op(value, Op::Sum { x: x.0 }, &[x.0])
    }

    /// Back-propagates from a one-element `loss`, accumulating into the
    /// `grad` of every reachable leaf that requires it.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
        }
        for (i, g) in grads.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            let (Some(g), Op::Leaf) = (g, &node.op) else { continue };
            match &mut node.grad {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, v)| *a += v),
                None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
            }
        }
        Ok(())
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b } | &Op::ConvTranspose2d { x, w, b } => {
                let transposed = matches!(node.op, Op::ConvTranspose2d { .. });
                let d = self.conv_dims("backward", Var(x), Var(w), Var(b), transposed)?;
                let need = [self.needs(x), self.needs(w), self.needs(b)];
                let gr = if transposed {
                    kernels::conv_transpose2d_backward(self.data(x), self.data(w), g, d, need)
                } else {
                    kernels::conv2d_backward(self.data(x), self.data(w), g, d, need)
                };
                accumulate(grads, x, gr.dx);
                accumulate(grads, w, gr.dw);
                accumulate(grads, b, gr.db);
            }
            Op::MaxPool2 { x, argmax } => {
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); self.nodes[*x].value.len()];
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        dx[idx] += gv;
                    }
                    accumulate(grads, *x, Some(dx));
                }
            }
            &Op::Upsample2 { x } => {
                if self.needs(x) {
                    let (n, c, h, w) = self.nodes[x].value.dims4("upsample2")?;
                    accumulate(grads, x, Some(kernels::upsample2_backward(g, n * c, h, w)));
                }
            }
            &Op::Relu { x } => {
                if self.needs(x) {
                    let dx = self
                        .data(x)
                        .iter()
                        .zip(g)
                        .map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() })
                        .collect();
                    accumulate(grads, x, Some(dx));
                }
            }
            &Op::Identity { x } | &Op::Reshape { x } => {
                if self.needs(x) {
                    accumulate(grads, x, Some(g.to_vec()));
                }
            }
            &Op::Concat { a, b } => {
                let sa = self.nodes[a].value.shape();
                let n = sa[0];
                let ca = self.nodes[a].value.len() / n;
                let cb = self.nodes[b].value.len() / n;
                let mut da = Vec::with_capacity(n * ca);
                let mut db = Vec::with_capacity(n * cb);
                for chunk in g.chunks(ca + cb) {
                    da.extend_from_slice(&chunk[..ca]);
                    db.extend_from_slice(&chunk[ca..]);
                }
                if self.needs(a) {
                    accumulate(grads, a, Some(da));
                }
                if self.needs(b) {
                    accumulate(grads, b, Some(db));
                }
            }
            &Op::Add { a, b } => {
                if self.needs(a) {
                    accumulate(grads, a, Some(g.to_vec()));
                }
                if self.needs(b) {
                    accumulate(grads, b, Some(g.to_vec()));
                }
            }
            &Op::Scale { x, s } => {
                if self.needs(x) {
                    accumulate(grads, x, Some(g.iter().map(|&v| v * s).collect()));
                }
            }
            &Op::Softmax { x } => {
                if self.needs(x) {
                    let l = *node.value.shape().last().expect("rank >= 1");
                    accumulate(grads, x, Some(kernels::softmax_rows_backward(node.value.data(), g, l)));
                }
            }
            Op::LayerNorm { x, g: gain, b, xhat, rstd } => {
                let e = *node.value.shape().last().expect("rank >= 1");
                let (dx, dg, db) = kernels::layer_norm_backward(xhat, rstd, self.data(*gain), g, e);
                if self.needs(*x) {
                    accumulate(grads, *x, Some(dx));
                }
                if self.needs(*gain) {
                    accumulate(grads, *gain, Some(dg));
                }
                if self.needs(*b) {
                    accumulate(grads, *b, Some(db));
                }
            }
            &Op::MatMul { a, b, batch, p, q, r, broadcast_b } => {
                let (da_src, db_src) = (self.data(a), self.data(b));
                if self.needs(a) {
                    let mut da = vec![T::zero(); batch * p * q];
                    for i in 0..batch {
                        let bi = if broadcast_b { 0 } else { i };
                        gemm(
                            p,
                            r,
                            q,
                            &g[i * p * r..(i + 1) * p * r],
                            false,
                            &db_src[bi * q * r..(bi + 1) * q * r],
                            true,
                            &mut da[i * p * q..(i + 1) * p * q],
                            false,
                        );
                    }
                    accumulate(grads, a, Some(da));
                }
                if self.needs(b) {
                    let nb = if broadcast_b { 1 } else { batch };
                    let mut db = vec![T::zero(); nb * q * r];
                    for i in 0..batch {
                        let bi = if broadcast_b { 0 } else { i };
                        gemm(
                            q,
                            p,
                            r,
                            &da_src[i * p * q..(i + 1) * p * q],
                            true,
                            &g[i * p * r..(i + 1) * p * r],
                            false,
                            &mut db[bi * q * r..(bi + 1) * q * r],
                            true,
                        );
                    }
                    accumulate(grads, b, Some(db));
                }
            }
            &Op::TransposeLast2 { x } => {
                if self.needs(x) {
                    let s = node.value.shape();
                    let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
                    let batch = s[..s.len() - 2].iter().product();
                    accumulate(grads, x, Some(kernels::transpose_last2(g, batch, rows, cols)));
                }
            }
            &Op::Mse { a, b } => {
                let count = T::from_f64(self.nodes[a].value.len() as f64);
                let scale = T::from_f64(2.0) * g[0] / count;
                let diff: Vec<T> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| (x - y) * scale).collect();
                if self.needs(b) {
                    accumulate(grads, b, Some(diff.iter().map(|&v| -v).collect()));
                }
                if self.needs(a) {
                    accumulate(grads, a, Some(diff));
                }
            }
            &Op::Sum { x } => {
                if self.needs(x) {
                    accumulate(grads, x, Some(vec![g[0]; self.nodes[x].value.len()]));
                }
            }
        }
        Ok(())
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Vec<T>>], idx: usize, contribution: Option<Vec<T>>) {
    let Some(c) = contribution else { return };
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(c).for_each(|(a, v)| *a += v),
        slot @ None => *slot = Some(c),
    }
}
