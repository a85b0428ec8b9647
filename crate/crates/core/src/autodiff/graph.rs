//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s in the order
//! they are created, which is a topological order. [`Graph::backward`] walks
//! the record once in reverse.
//!
//! Broadcasting is limited to leading-axis expansion: for binary element-wise
//! ops one operand's shape must equal the other's or be a suffix of it
//! (`[C]` against `[N, T, C]`, or a scalar against anything). Batched
//! `matmul` accepts equal batch extents or a rank-2 operand shared across the
//! other's batch.

use std::collections::HashMap;

use super::kernels::{self, axis_split};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds and their attributes. Axes are already resolved to
/// non-negative indices.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Concat { axis: usize },
    Softmax { axis: usize },
    Exp,
    Log,
    Abs,
    Huber { delta: f64 },
    /// Parameter-free normalisation over the last axis.
    LayerNorm { eps: f64 },
    L2Normalize { eps: f64 },
    Mean { axis: usize },
    Sum { axis: usize },
    Relu,
    Sigmoid,
    Slice { axis: usize, start: usize, end: usize },
    Reshape { shape: Vec<usize> },
    TransposeLastTwo,
    Permute { axes: Vec<usize> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Abs => "abs",
            OpKind::Huber { .. } => "huber",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::L2Normalize { .. } => "l2_normalize",
            OpKind::Mean { .. } => "mean",
            OpKind::Sum { .. } => "sum",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Slice { .. } => "slice",
            OpKind::Reshape { .. } => "reshape",
            OpKind::TransposeLastTwo => "transpose_last_two",
            OpKind::Permute { .. } => "permute",
        }
    }
}

struct Node {
    value: Tensor,
    kind: Option<OpKind>,
    inputs: Vec<Var>,
    saved: Vec<f64>,
    requires_grad: bool,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    track_params: bool,
    bound: HashMap<ParamId, Var>,
    bindings: Vec<(ParamId, Var)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// Graph whose parameter leaves require gradients.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
            track_params: true,
            bound: HashMap::new(),
            bindings: Vec::new(),
        }
    }

    /// Graph for evaluation only; parameter leaves do not require gradients.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, kind: Option<OpKind>, inputs: Vec<Var>, saved: Vec<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            kind,
            inputs,
            saved,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, None, Vec::new(), Vec::new(), requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a stored parameter as a leaf. Binding the same id twice returns
    /// the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let track = self.track_params;
        let v = self.leaf(store.get(id).value.clone(), track);
        self.bound.insert(id, v);
        self.bindings.push((id, v));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `kind` applied to `inputs`.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let (value, saved) = forward(&kind, &values)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, Some(kind), inputs.to_vec(), saved, requires_grad))
    }

    fn axis(&self, v: Var, axis: isize) -> Result<usize> {
        let rank = self.shape(v).len() as isize;
        let a = if axis < 0 { rank + axis } else { axis };
        if a < 0 || a >= rank {
            return Err(Error::InvalidShape {
                shape: self.shape(v).to_vec(),
                reason: format!("axis {axis} out of range"),
            });
        }
        Ok(a as usize)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: isize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::InvalidInput("concat of zero tensors".into()))?;
        let axis = self.axis(first, axis)?;
        self.apply(OpKind::Concat { axis }, parts)
    }

    pub fn softmax(&mut self, a: Var, axis: isize) -> Result<Var> {
        let axis = self.axis(a, axis)?;
        self.apply(OpKind::Softmax { axis }, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Abs, &[a])
    }

    pub fn huber(&mut self, a: Var, delta: f64) -> Result<Var> {
        self.apply(OpKind::Huber { delta }, &[a])
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.apply(OpKind::LayerNorm { eps }, &[a])
    }

    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::L2Normalize { eps: 1e-12 }, &[a])
    }

    pub fn mean(&mut self, a: Var, axis: isize) -> Result<Var> {
        let axis = self.axis(a, axis)?;
        self.apply(OpKind::Mean { axis }, &[a])
    }

    pub fn sum(&mut self, a: Var, axis: isize) -> Result<Var> {
        let axis = self.axis(a, axis)?;
        self.apply(OpKind::Sum { axis }, &[a])
    }

    /// Sum of every element, as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.sum(flat, 0)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let flat = self.reshape(a, &[n])?;
        self.mean(flat, 0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn slice(&mut self, a: Var, axis: isize, start: usize, end: usize) -> Result<Var> {
        let axis = self.axis(a, axis)?;
        self.apply(OpKind::Slice { axis, start, end }, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.apply(OpKind::Reshape { shape: shape.to_vec() }, &[a])
    }

    pub fn transpose_last_two(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::TransposeLastTwo, &[a])
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        self.apply(OpKind::Permute { axes: axes.to_vec() }, &[a])
    }

    /// Propagates d`loss` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_value = &self.nodes[loss.0].value;
        if loss_value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        self.backward_done = true;
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(kind) = &node.kind else { continue };
            let Some(g) = self.grads[i].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let input_grads = backward_rule(kind, &inputs, &node.value, &node.saved, &g, &needs);
            for (v, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                match &mut self.grads[v.0] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.nodes[v.0].value.shape().to_vec(), g.clone()).ok()
    }

    /// Adds the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(id, v) in &self.bindings {
            if let Some(Some(g)) = self.grads.get(v.0) {
                let p = store.get_mut(id);
                for (a, b) in p.grad.data_mut().iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn binary_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a == b || is_suffix(b, a) {
        Ok(a.to_vec())
    } else if is_suffix(a, b) {
        Ok(b.to_vec())
    } else {
        Err(Error::shape(op, a, b))
    }
}

fn binary_map(a: &Tensor, b: &Tensor, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let data = if na == n && nb == n {
        ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
    } else {
        (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect()
    };
    Tensor::new(shape, data).expect("broadcast shape")
}

fn reduce_to(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for chunk in g.chunks(n) {
        for (o, v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

struct MatMulPlan {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a_shared: bool,
    b_shared: bool,
    out_shape: Vec<usize>,
}

fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatMulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (ra, rb) = (a.len(), b.len());
    let (m, k) = (a[ra - 2], a[ra - 1]);
    let (k2, n) = (b[rb - 2], b[rb - 1]);
    if k != k2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (ba, bb) = (&a[..ra - 2], &b[..rb - 2]);
    let (batch_shape, a_shared, b_shared) = if ba == bb {
        (ba.to_vec(), false, false)
    } else if bb.is_empty() {
        (ba.to_vec(), false, true)
    } else if ba.is_empty() {
        (bb.to_vec(), true, false)
    } else {
        return Err(Error::shape("matmul", a, b));
    };
    let batch = batch_shape.iter().product();
    let mut out_shape = batch_shape;
    out_shape.extend([m, n]);
    Ok(MatMulPlan {
        batch,
        m,
        k,
        n,
        a_shared,
        b_shared,
        out_shape,
    })
}

fn same_except(op: &'static str, shapes: &[&[usize]], axis: usize) -> Result<()> {
    let first = shapes[0];
    for s in &shapes[1..] {
        let ok = s.len() == first.len()
            && s.iter()
                .zip(first)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !ok {
            return Err(Error::shape(op, first, s));
        }
    }
    Ok(())
}

fn forward(kind: &OpKind, x: &[&Tensor]) -> Result<(Tensor, Vec<f64>)> {
    let arity = match kind {
        OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
        OpKind::Concat { .. } => x.len().max(1),
        _ => 1,
    };
    if x.len() != arity {
        return Err(Error::InvalidInput(format!(
            "{} expects {arity} inputs, got {}",
            kind.name(),
            x.len()
        )));
    }
    let unary = |f: &dyn Fn(f64) -> f64| Ok((x[0].map(f), Vec::new()));
    match kind {
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            let p = matmul_plan(a.shape(), b.shape())?;
            let mut c = vec![0.0; p.batch * p.m * p.n];
            let (sa, sb, sc) = (p.m * p.k, p.k * p.n, p.m * p.n);
            if p.b_shared {
                kernels::gemm(a.data(), b.data(), &mut c, p.batch * p.m, p.k, p.n);
            } else {
                for i in 0..p.batch {
                    let ai = if p.a_shared { a.data() } else { &a.data()[i * sa..(i + 1) * sa] };
                    kernels::gemm(ai, &b.data()[i * sb..(i + 1) * sb], &mut c[i * sc..(i + 1) * sc], p.m, p.k, p.n);
                }
            }
            Ok((Tensor::new(p.out_shape, c)?, Vec::new()))
        }
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (x[0], x[1]);
            let shape = binary_shape(kind.name(), a.shape(), b.shape())?;
            let t = match kind {
                OpKind::Add => binary_map(a, b, shape, |p, q| p + q),
                OpKind::Sub => binary_map(a, b, shape, |p, q| p - q),
                _ => binary_map(a, b, shape, |p, q| p * q),
            };
            Ok((t, Vec::new()))
        }
        OpKind::Scale(c) => {
            let c = *c;
            unary(&|v| v * c)
        }
        OpKind::Concat { axis } => {
            let axis = *axis;
            let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
            if axis >= shapes[0].len() {
                return Err(Error::InvalidInput("concat axis out of range".into()));
            }
            same_except("concat", &shapes, axis)?;
            let mut out_shape = shapes[0].to_vec();
            out_shape[axis] = shapes.iter().map(|s| s[axis]).sum();
            let (outer, _, inner) = axis_split(shapes[0], axis);
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for t in x {
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Ok((Tensor::new(out_shape, data)?, Vec::new()))
        }
        OpKind::Softmax { axis } => {
            let t = x[0];
            let (outer, len, inner) = axis_split(t.shape(), *axis);
            let src = t.data();
            let mut out = vec![0.0; src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut mx = f64::NEG_INFINITY;
                    for l in 0..len {
                        mx = mx.max(src[at(l)]);
                    }
                    let mut s = 0.0;
                    for l in 0..len {
                        let e = (src[at(l)] - mx).exp();
                        out[at(l)] = e;
                        s += e;
                    }
                    for l in 0..len {
                        out[at(l)] /= s;
                    }
                }
            }
            Ok((Tensor::new(t.shape().to_vec(), out)?, Vec::new()))
        }
        OpKind::Exp => unary(&f64::exp),
        OpKind::Log => unary(&f64::ln),
        OpKind::Abs => unary(&f64::abs),
        OpKind::Huber { delta } => {
            let d = *delta;
            unary(&|v| {
                let a = v.abs();
                if a <= d {
                    0.5 * v * v
                } else {
                    d * (a - 0.5 * d)
                }
            })
        }
        OpKind::Relu => unary(&|v| v.max(0.0)),
        OpKind::Sigmoid => unary(&|v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        }),
        OpKind::LayerNorm { eps } => {
            let t = x[0];
            let c = *t.shape().last().ok_or_else(|| Error::shape("layer_norm", t.shape(), &[]))?;
            let mut out = vec![0.0; t.numel()];
            let mut inv = Vec::with_capacity(t.numel() / c);
            for (row, o) in t.data().chunks(c).zip(out.chunks_mut(c)) {
                let mean = row.iter().sum::<f64>() / c as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                let is = 1.0 / (var + eps).sqrt();
                for (y, v) in o.iter_mut().zip(row) {
                    *y = (v - mean) * is;
                }
                inv.push(is);
            }
            Ok((Tensor::new(t.shape().to_vec(), out)?, inv))
        }
        OpKind::L2Normalize { eps } => {
            let t = x[0];
            let c = *t.shape().last().ok_or_else(|| Error::shape("l2_normalize", t.shape(), &[]))?;
            let mut out = vec![0.0; t.numel()];
            let mut denom = Vec::with_capacity(t.numel() / c);
            for (row, o) in t.data().chunks(c).zip(out.chunks_mut(c)) {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                // negative marks the clamped branch
                let d = if norm > *eps { norm } else { -*eps };
                for (y, v) in o.iter_mut().zip(row) {
                    *y = v / d.abs();
                }
                denom.push(d);
            }
            Ok((Tensor::new(t.shape().to_vec(), out)?, denom))
        }
        OpKind::Mean { axis } | OpKind::Sum { axis } => {
            let t = x[0];
            let (outer, len, inner) = axis_split(t.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            let src = t.data();
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        out[o * inner + i] += src[base + i];
                    }
                }
            }
            if matches!(kind, OpKind::Mean { .. }) {
                for v in &mut out {
                    *v /= len as f64;
                }
            }
            let mut shape = t.shape().to_vec();
            shape.remove(*axis);
            Ok((Tensor::new(shape, out)?, Vec::new()))
        }
        OpKind::Slice { axis, start, end } => {
            let t = x[0];
            let (outer, len, inner) = axis_split(t.shape(), *axis);
            if start >= end || *end > len {
                return Err(Error::InvalidInput(format!(
                    "slice {start}..{end} out of range for axis of length {len} in {:?}",
                    t.shape()
                )));
            }
            let w = end - start;
            let mut data = Vec::with_capacity(outer * w * inner);
            for o in 0..outer {
                let base = (o * len + start) * inner;
                data.extend_from_slice(&t.data()[base..base + w * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[*axis] = w;
            Ok((Tensor::new(shape, data)?, Vec::new()))
        }
        OpKind::Reshape { shape } => {
            let t = x[0];
            let n: usize = shape.iter().product();
            if n != t.numel() || shape.contains(&0) {
                return Err(Error::shape("reshape", t.shape(), shape));
            }
            Ok((Tensor::new(shape.clone(), t.data().to_vec())?, Vec::new()))
        }
        OpKind::TransposeLastTwo => {
            let t = x[0];
            let r = t.rank();
            if r < 2 {
                return Err(Error::shape("transpose_last_two", t.shape(), &[]));
            }
            let mut axes: Vec<usize> = (0..r).collect();
            axes.swap(r - 2, r - 1);
            permute_forward(t, &axes)
        }
        OpKind::Permute { axes } => {
            let t = x[0];
            let mut seen = vec![false; t.rank()];
            let valid = axes.len() == t.rank()
                && axes.iter().all(|&a| a < t.rank() && !std::mem::replace(&mut seen[a], true));
            if !valid {
                return Err(Error::shape("permute", t.shape(), axes));
            }
            permute_forward(t, axes)
        }
    }
}

fn permute_forward(t: &Tensor, axes: &[usize]) -> Result<(Tensor, Vec<f64>)> {
    let data = kernels::permute(t.data(), t.shape(), axes);
    let shape: Vec<usize> = axes.iter().map(|&a| t.shape()[a]).collect();
    Ok((Tensor::new(shape, data)?, Vec::new()))
}

fn backward_rule(
    kind: &OpKind,
    x: &[&Tensor],
    y: &Tensor,
    saved: &[f64],
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Vec<f64>>> {
    let elementwise = |f: &dyn Fn(f64, f64, f64) -> f64| -> Vec<Option<Vec<f64>>> {
        if !needs[0] {
            return vec![None];
        }
        let out = x[0]
            .data()
            .iter()
            .zip(y.data())
            .zip(g)
            .map(|((&xv, &yv), &gv)| f(xv, yv, gv))
            .collect();
        vec![Some(out)]
    };
    match kind {
        OpKind::MatMul => {
            let (a, b) = (x[0], x[1]);
            let p = matmul_plan(a.shape(), b.shape()).expect("validated in forward");
            let (sa, sb, sc) = (p.m * p.k, p.k * p.n, p.m * p.n);
            let ga = needs[0].then(|| {
                let mut ga = vec![0.0; a.numel()];
                if p.b_shared {
                    kernels::gemm_nt(g, b.data(), &mut ga, p.batch * p.m, p.n, p.k);
                } else {
                    for i in 0..p.batch {
                        let gi = &g[i * sc..(i + 1) * sc];
                        let bi = &b.data()[i * sb..(i + 1) * sb];
                        let dst = if p.a_shared { &mut ga[..] } else { &mut ga[i * sa..(i + 1) * sa] };
                        kernels::gemm_nt(gi, bi, dst, p.m, p.n, p.k);
                    }
                }
                ga
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![0.0; b.numel()];
                if p.b_shared {
                    kernels::gemm_tn(a.data(), g, &mut gb, p.batch * p.m, p.k, p.n);
                } else {
                    for i in 0..p.batch {
                        let gi = &g[i * sc..(i + 1) * sc];
                        let ai = if p.a_shared { a.data() } else { &a.data()[i * sa..(i + 1) * sa] };
                        kernels::gemm_tn(ai, gi, &mut gb[i * sb..(i + 1) * sb], p.m, p.k, p.n);
                    }
                }
                gb
            });
            vec![ga, gb]
        }
        OpKind::Add | OpKind::Sub => {
            let ga = needs[0].then(|| reduce_to(g, x[0].numel()));
            let gb = needs[1].then(|| {
                let mut r = reduce_to(g, x[1].numel());
                if matches!(kind, OpKind::Sub) {
                    r.iter_mut().for_each(|v| *v = -*v);
                }
                r
            });
            vec![ga, gb]
        }
        OpKind::Mul => {
            let (a, b) = (x[0], x[1]);
            let (ad, bd) = (a.data(), b.data());
            let (na, nb) = (ad.len(), bd.len());
            let ga = needs[0].then(|| {
                let full: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * bd[i % nb]).collect();
                reduce_to(&full, na)
            });
            let gb = needs[1].then(|| {
                let full: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * ad[i % na]).collect();
                reduce_to(&full, nb)
            });
            vec![ga, gb]
        }
        OpKind::Scale(c) => vec![needs[0].then(|| g.iter().map(|v| v * c).collect())],
        OpKind::Concat { axis } => {
            let (outer, _, inner) = axis_split(y.shape(), *axis);
            let total = y.shape()[*axis] * inner;
            let mut offset = 0;
            x.iter()
                .zip(needs)
                .map(|(t, &need)| {
                    let chunk = t.shape()[*axis] * inner;
                    let start = offset;
                    offset += chunk;
                    need.then(|| {
                        let mut out = Vec::with_capacity(t.numel());
                        for o in 0..outer {
                            let base = o * total + start;
                            out.extend_from_slice(&g[base..base + chunk]);
                        }
                        out
                    })
                })
                .collect()
        }
        OpKind::Softmax { axis } => {
            if !needs[0] {
                return vec![None];
            }
            let (outer, len, inner) = axis_split(y.shape(), *axis);
            let yd = y.data();
            let mut out = vec![0.0; yd.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |l: usize| (o * len + l) * inner + i;
                    let mut s = 0.0;
                    for l in 0..len {
                        s += g[at(l)] * yd[at(l)];
                    }
                    for l in 0..len {
                        out[at(l)] = yd[at(l)] * (g[at(l)] - s);
                    }
                }
            }
            vec![Some(out)]
        }
        OpKind::Exp => elementwise(&|_, yv, gv| gv * yv),
        OpKind::Log => elementwise(&|xv, _, gv| gv / xv),
        OpKind::Abs => elementwise(&|xv, _, gv| gv * sign(xv)),
        OpKind::Huber { delta } => {
            let d = *delta;
            elementwise(&|xv, _, gv| if xv.abs() <= d { gv * xv } else { gv * d * sign(xv) })
        }
        OpKind::Relu => elementwise(&|xv, _, gv| if xv > 0.0 { gv } else { 0.0 }),
        OpKind::Sigmoid => elementwise(&|_, yv, gv| gv * yv * (1.0 - yv)),
        OpKind::LayerNorm { .. } => {
            if !needs[0] {
                return vec![None];
            }
            let c = *y.shape().last().expect("rank checked");
            let mut out = vec![0.0; y.numel()];
            for (((yr, gr), o), &is) in y.data().chunks(c).zip(g.chunks(c)).zip(out.chunks_mut(c)).zip(saved) {
                let mg = gr.iter().sum::<f64>() / c as f64;
                let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                for ((ov, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                    *ov = is * (gv - mg - yv * mgy);
                }
            }
            vec![Some(out)]
        }
        OpKind::L2Normalize { .. } => {
            if !needs[0] {
                return vec![None];
            }
            let c = *y.shape().last().expect("rank checked");
            let mut out = vec![0.0; y.numel()];
            for (((yr, gr), o), &d) in y.data().chunks(c).zip(g.chunks(c)).zip(out.chunks_mut(c)).zip(saved) {
                if d < 0.0 {
                    for (ov, gv) in o.iter_mut().zip(gr) {
                        *ov = gv / -d;
                    }
                } else {
                    let yg = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>();
                    for ((ov, gv), yv) in o.iter_mut().zip(gr).zip(yr) {
                        *ov = (gv - yv * yg) / d;
                    }
                }
            }
            vec![Some(out)]
        }
        OpKind::Mean { axis } | OpKind::Sum { axis } => {
            if !needs[0] {
                return vec![None];
            }
            let (outer, len, inner) = axis_split(x[0].shape(), *axis);
            let f = if matches!(kind, OpKind::Mean { .. }) { 1.0 / len as f64 } else { 1.0 };
            let mut out = vec![0.0; x[0].numel()];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        out[base + i] = g[o * inner + i] * f;
                    }
                }
            }
            vec![Some(out)]
        }
        OpKind::Slice { axis, start, end } => {
            if !needs[0] {
                return vec![None];
            }
            let (outer, len, inner) = axis_split(x[0].shape(), *axis);
            let w = end - start;
            let mut out = vec![0.0; x[0].numel()];
            for o in 0..outer {
                let base = (o * len + start) * inner;
                out[base..base + w * inner].copy_from_slice(&g[o * w * inner..(o + 1) * w * inner]);
            }
            vec![Some(out)]
        }
        OpKind::Reshape { .. } => vec![needs[0].then(|| g.to_vec())],
        OpKind::TransposeLastTwo => {
            if !needs[0] {
                return vec![None];
            }
            let r = y.rank();
            let mut axes: Vec<usize> = (0..r).collect();
            axes.swap(r - 2, r - 1);
            vec![Some(kernels::permute(g, y.shape(), &axes))]
        }
        OpKind::Permute { axes } => {
            if !needs[0] {
                return vec![None];
            }
            let inv = kernels::inverse_permutation(axes);
            vec![Some(kernels::permute(g, y.shape(), &inv))]
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
