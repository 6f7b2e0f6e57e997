use std::sync::Arc;

use super::conv::{conv3d_backward, conv3d_forward, Padding};
use crate::error::{Error, Result};
use crate::tensor::{MatmulPlan, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Log(Var),
    Exp(Var),
    Sum(Var),
    SumAxis(Var, usize),
    MatMul(Var, Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>, usize),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    ApplyAlong(Var, usize, Arc<Tensor>),
    Conv3d(Var, Var, Padding),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Log(..) => "log",
            Op::Exp(..) => "exp",
            Op::Sum(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::MatMul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::ApplyAlong(..) => "apply_along",
            Op::Conv3d(..) => "conv3d",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Test hook: multiplies every input gradient produced by ops named `op` by
/// `factor` during backward. Used as a negative control for gradient checks.
#[derive(Clone, Debug)]
pub struct BackwardFault {
    pub op: &'static str,
    pub factor: f64,
}

/// Append-only record of primitive operations. Node order is a topological
/// order, so backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<BackwardFault>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of `shape` when `v` did not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: BackwardFault) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(fault),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, &[])
    }

    /// A detached input: it never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant, &[])
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let out = self.value(a).zip_broadcast(self.value(b), name, f)?;
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|v| v + s);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).sum_axis(axis)?;
        Ok(self.push(out, Op::SumAxis(a, axis), &[a]))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::contract("mean", format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · weight + bias` over the trailing axis; `weight` is `[in, out]`,
    /// `bias` is `[out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        let rank = self.shape(y).len();
        let out = *self.shape(bias).last().unwrap_or(&0);
        let mut bshape = vec![1; rank];
        bshape[rank - 1] = out;
        let b = self.reshape(bias, &bshape)?;
        self.add(y, b)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).softmax(axis)?;
        Ok(self.push(out, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out = self.value(a).log_softmax(axis)?;
        Ok(self.push(out, Op::LogSoftmax(a, axis), &[a]))
    }

    /// Layer normalization over the trailing axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, epsilon: f64) -> Result<Var> {
        if epsilon <= 0.0 {
            return Err(Error::contract("layer_norm", "epsilon must be positive"));
        }
        let xs = self.value(x);
        let c = *xs.shape().last().expect("rank >= 1");
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::shape("layer_norm", xs.shape(), self.shape(gamma)));
        }
        let rows = xs.numel() / c;
        let mut xhat = xs.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut xhat.data_mut()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + epsilon).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let g = self.value(gamma).data().to_vec();
        let b = self.value(beta).data().to_vec();
        let mut out = xhat.clone();
        for row in out.data_mut().chunks_mut(c) {
            for ((v, gv), bv) in row.iter_mut().zip(&g).zip(&b) {
                *v = *v * gv + bv;
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let parts: Vec<&Tensor> = xs.iter().map(|&v| self.value(v)).collect();
        let out = Tensor::concat(&parts, axis)?;
        Ok(self.push(out, Op::Concat(xs.to_vec(), axis), xs))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_axis(axis, start, len)?;
        Ok(self.push(out, Op::Slice { x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let out = self.value(x).permute(perm)?;
        Ok(self.push(out, Op::Permute(x, perm.to_vec()), &[x]))
    }

    /// Applies a constant linear map along one axis (see [`Tensor::apply_along`]).
    pub fn apply_along(&mut self, x: Var, axis: usize, m: Arc<Tensor>) -> Result<Var> {
        let out = self.value(x).apply_along(axis, &m)?;
        Ok(self.push(out, Op::ApplyAlong(x, axis, m), &[x]))
    }

    /// Same-size 3D convolution: `x` is `[X, Y, Z, Cin]`, `w` is `[k, k, k, Cin, Cout]`.
    pub fn conv3d(&mut self, x: Var, w: Var, padding: Padding) -> Result<Var> {
        let out = conv3d_forward(self.value(x), self.value(w), padding)?;
        Ok(self.push(out, Op::Conv3d(x, w, padding), &[x, w]))
    }

    /// Reverse sweep from `output`, seeding it with ones (so a non-scalar
    /// output is differentiated through its sum).
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::ones(self.shape(output)));
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            let mut contributions = self.node_backward(node, &g)?;
            if let Some(f) = &self.fault {
                if f.op == node.op.name() {
                    for (_, t) in contributions.iter_mut() {
                        *t = t.scale(f.factor);
                    }
                }
            }
            for (v, t) in contributions {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(t.data())
                        .for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(t),
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        let out = &node.value;
        Ok(match &node.op {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) => vec![
                (*a, g.reduce_to(val(*a).shape())),
                (*b, g.reduce_to(val(*b).shape())),
            ],
            Op::Sub(a, b) => vec![
                (*a, g.reduce_to(val(*a).shape())),
                (*b, g.reduce_to(val(*b).shape()).scale(-1.0)),
            ],
            Op::Mul(a, b) => {
                let ga = g.zip_broadcast(val(*b), "mul", |x, y| x * y)?;
                let gb = g.zip_broadcast(val(*a), "mul", |x, y| x * y)?;
                vec![
                    (*a, ga.reduce_to(val(*a).shape())),
                    (*b, gb.reduce_to(val(*b).shape())),
                ]
            }
            Op::Div(a, b) => {
                let ga = g.zip_broadcast(val(*b), "div", |x, y| x / y)?;
                let gy: Vec<f64> = g.data().iter().zip(out.data()).map(|(x, y)| x * y).collect();
                let gy = Tensor::new(out.shape().to_vec(), gy)?;
                let gb = gy.zip_broadcast(val(*b), "div", |x, y| -x / y)?;
                vec![
                    (*a, ga.reduce_to(val(*a).shape())),
                    (*b, gb.reduce_to(val(*b).shape())),
                ]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => {
                let x = val(*a);
                let d = x.zip_broadcast(g, "relu", |xv, gv| if xv > 0.0 { gv } else { 0.0 })?;
                vec![(*a, d)]
            }
            Op::Log(a) => vec![(*a, g.zip_broadcast(val(*a), "log", |gv, xv| gv / xv)?)],
            Op::Exp(a) => vec![(*a, g.zip_broadcast(out, "exp", |gv, yv| gv * yv)?)],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::SumAxis(a, axis) => {
                let x = val(*a);
                let (outer, n, inner) = x.axis_split(*axis);
                let gd = g.data();
                let d = Tensor::from_fn(x.shape(), |i| {
                    let o = i / (n * inner);
                    let k = i % inner;
                    gd[o * inner + k]
                });
                debug_assert_eq!(gd.len(), outer * inner);
                vec![(*a, d)]
            }
            Op::MatMul(a, b) => {
                let (da, db) = matmul_backward(val(*a), val(*b), g)?;
                vec![(*a, da), (*b, db)]
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = out.axis_split(*axis);
                let y = out.data();
                let gd = g.data();
                let mut d = Tensor::zeros(out.shape());
                let dd = d.data_mut();
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + k;
                        let dot: f64 = (0..n).map(|i| gd[at(i)] * y[at(i)]).sum();
                        for i in 0..n {
                            dd[at(i)] = y[at(i)] * (gd[at(i)] - dot);
                        }
                    }
                }
                vec![(*a, d)]
            }
            Op::LogSoftmax(a, axis) => {
                let (outer, n, inner) = out.axis_split(*axis);
                let y = out.data();
                let gd = g.data();
                let mut d = Tensor::zeros(out.shape());
                let dd = d.data_mut();
                for o in 0..outer {
                    for k in 0..inner {
                        let at = |i: usize| (o * n + i) * inner + k;
                        let gs: f64 = (0..n).map(|i| gd[at(i)]).sum();
                        for i in 0..n {
                            dd[at(i)] = gd[at(i)] - y[at(i)].exp() * gs;
                        }
                    }
                }
                vec![(*a, d)]
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = val(*gamma).numel();
                let gam = val(*gamma).data();
                let mut dx = Tensor::zeros(xhat.shape());
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                let gd = g.data();
                let xh = xhat.data();
                let dxd = dx.data_mut();
                for (r, is) in inv_std.iter().enumerate() {
                    let span = r * c..(r + 1) * c;
                    let (grow, xrow) = (&gd[span.clone()], &xh[span.clone()]);
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        dgamma[j] += grow[j] * xrow[j];
                        dbeta[j] += grow[j];
                        let dxh = grow[j] * gam[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xrow[j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    for j in 0..c {
                        let dxh = grow[j] * gam[j];
                        dxd[r * c + j] = is * (dxh - mean_dxhat - xrow[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    (*x, dx),
                    (*gamma, Tensor::new(vec![c], dgamma)?),
                    (*beta, Tensor::new(vec![c], dbeta)?),
                ]
            }
            Op::Concat(xs, axis) => {
                let mut start = 0;
                let mut res = Vec::with_capacity(xs.len());
                for &v in xs {
                    let len = val(v).shape()[*axis];
                    res.push((v, g.slice_axis(*axis, start, len)?));
                    start += len;
                }
                res
            }
            Op::Slice { x, axis, start } => {
                let xs = val(*x);
                let (outer, n, inner) = xs.axis_split(*axis);
                let len = g.shape()[*axis];
                let mut d = Tensor::zeros(xs.shape());
                let dd = d.data_mut();
                let gd = g.data();
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    dd[dst..dst + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, d)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape())?)],
            Op::Permute(x, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                vec![(*x, g.permute(&inv)?)]
            }
            Op::ApplyAlong(x, axis, m) => vec![(*x, g.apply_along(*axis, &m.transpose_last())?)],
            Op::Conv3d(x, w, padding) => {
                let (dx, dw) = conv3d_backward(val(*x), val(*w), g, *padding)?;
                vec![(*x, dx), (*w, dw)]
            }
        })
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor)> {
    let p = MatmulPlan::new(a.shape(), b.shape())?;
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    let (m, k, n) = (p.m, p.k, p.n);
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    for bt in 0..p.batch {
        let ao = p.a_batch(bt) * m * k;
        let bo = p.b_batch(bt) * k * n;
        let go = bt * m * n;
        {
            let dad = da.data_mut();
            // dA = dC · Bᵀ
            for i in 0..m {
                for q in 0..k {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += gd[go + i * n + j] * bd[bo + q * n + j];
                    }
                    dad[ao + i * k + q] += acc;
                }
            }
        }
        let dbd = db.data_mut();
        // dB = Aᵀ · dC
        for i in 0..m {
            for q in 0..k {
                let av = ad[ao + i * k + q];
                if av == 0.0 {
                    continue;
                }
                for j in 0..n {
                    dbd[bo + q * n + j] += av * gd[go + i * n + j];
                }
            }
        }
    }
    Ok((da, db))
}
