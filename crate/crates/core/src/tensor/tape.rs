use std::cell::{Cell, Ref, RefCell};
use std::fmt;

use rand::Rng;

use super::kernels::{self, axis_split};
use super::Tensor;
use crate::error::{Error, Result};

/// Loss reduction used by [`Var::cross_entropy`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over non-pad positions.
    Mean,
    /// Sum over non-pad positions.
    Sum,
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(usize),
    Dropout(usize, Vec<f64>),
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        pad: usize,
        probs: Vec<f64>,
        scale: f64,
    },
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
///
/// Nodes are appended in evaluation order, which is a valid topological
/// order of the graph; backward visits them in exact reverse.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a leaf, or `None` if the var is not a differentiable leaf.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input (masks, positional tables, frozen memory).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, inputs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Usage("concat of zero tensors".into()))?;
        let (value, ids) = {
            let nodes = self.nodes.borrow();
            let base = nodes[first.id].value.shape().to_vec();
            if axis >= base.len() {
                return Err(Error::Usage(format!("concat axis {axis} out of range for {base:?}")));
            }
            let mut out_shape = base.clone();
            out_shape[axis] = 0;
            for v in inputs {
                let s = nodes[v.id].value.shape();
                let agrees = s.len() == base.len()
                    && s.iter()
                        .zip(&base)
                        .enumerate()
                        .all(|(d, (a, b))| d == axis || a == b);
                if !agrees {
                    return Err(Error::dim("concat", &base, s));
                }
                out_shape[axis] += s[axis];
            }
            let (outer, _, inner) = axis_split(&out_shape, axis);
            let mut data = Vec::with_capacity(out_shape.iter().product());
            for o in 0..outer {
                for v in inputs {
                    let t = &nodes[v.id].value;
                    let chunk = t.shape()[axis] * inner;
                    data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            (Tensor::new(&out_shape, data)?, inputs.iter().map(|v| v.id).collect::<Vec<_>>())
        };
        let rg = self.requires(&ids);
        Ok(self.push(value, Op::Concat { inputs: ids, axis }, rg))
    }

    /// Reverse pass from a scalar loss.
    ///
    /// A tape supports a single backward pass; a second call is a usage error.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if self.consumed.replace(true) {
            return Err(Error::Usage("backward already ran on this tape".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut leaves: Vec<Option<Tensor>> = vec![None; nodes.len()];
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[id].take() {
                Some(g) => g,
                None => {
                    if matches!(node.op, Op::Leaf) {
                        leaves[id] = Some(Tensor::zeros(node.value.shape()));
                    }
                    continue;
                }
            };
            backprop_node(&nodes, id, g, &mut grads, &mut leaves)?;
        }
        // Leaves after the loss never influenced it.
        for (id, node) in nodes.iter().enumerate().skip(loss.id + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                leaves[id] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, contribution: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn backprop_node(
    nodes: &[Node],
    id: usize,
    g: Vec<f64>,
    grads: &mut [Option<Vec<f64>>],
    leaves: &mut [Option<Tensor>],
) -> Result<()> {
    let node = &nodes[id];
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {
            leaves[id] = Some(Tensor::new(node.value.shape(), g)?);
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *b, g.clone());
            accumulate(nodes, grads, *a, g);
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *b, g.iter().map(|x| -x).collect());
            accumulate(nodes, grads, *a, g);
        }
        Op::Mul(a, b) => {
            let av = val(*a).data();
            let bv = val(*b).data();
            let ga = g.iter().zip(bv).map(|(g, b)| g * b).collect();
            let gb = g.iter().zip(av).map(|(g, a)| g * a).collect();
            accumulate(nodes, grads, *a, ga);
            accumulate(nodes, grads, *b, gb);
        }
        Op::Scale(a, c) => {
            accumulate(nodes, grads, *a, g.iter().map(|x| x * c).collect());
        }
        Op::AddBias(x, b) => {
            let n = val(*b).numel();
            let mut gb = vec![0.0; n];
            for row in g.chunks(n) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            accumulate(nodes, grads, *b, gb);
            accumulate(nodes, grads, *x, g);
        }
        Op::MatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (m, k, n) = (at.shape()[0], at.shape()[1], bt.shape()[1]);
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                kernels::mm_nt(&g, bt.data(), &mut ga, m, n, k);
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                kernels::mm_tn(at.data(), &g, &mut gb, k, m, n);
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::BatchMatMul(a, b) => {
            let (at, bt) = (val(*a), val(*b));
            let (batch, m, k, n) = (at.shape()[0], at.shape()[1], at.shape()[2], bt.shape()[2]);
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; batch * m * k];
                for i in 0..batch {
                    kernels::mm_nt(
                        &g[i * m * n..(i + 1) * m * n],
                        &bt.data()[i * k * n..(i + 1) * k * n],
                        &mut ga[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                accumulate(nodes, grads, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; batch * k * n];
                for i in 0..batch {
                    kernels::mm_tn(
                        &at.data()[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut gb[i * k * n..(i + 1) * k * n],
                        k,
                        m,
                        n,
                    );
                }
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, g),
        Op::Permute(a, perm) => {
            let inv = kernels::inverse_permutation(perm);
            let (back, _) = kernels::permute(&g, node.value.shape(), &inv);
            accumulate(nodes, grads, *a, back);
        }
        Op::Softmax(a, axis) => {
            let y = node.value.data();
            let (outer, len, inner) = axis_split(node.value.shape(), *axis);
            let mut gx = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len)
                        .map(|t| g[base + t * inner] * y[base + t * inner])
                        .sum();
                    for t in 0..len {
                        let p = base + t * inner;
                        gx[p] = y[p] * (g[p] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *a, gx);
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gamma = val(*gain).data();
            let n = gamma.len();
            let mut g_gain = vec![0.0; n];
            let mut g_bias = vec![0.0; n];
            let mut gx = vec![0.0; g.len()];
            for (r, (g_row, xh_row)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                let mut sum_gxh = 0.0;
                let mut sum_gxh_xh = 0.0;
                for j in 0..n {
                    g_bias[j] += g_row[j];
                    g_gain[j] += g_row[j] * xh_row[j];
                    let gxh = g_row[j] * gamma[j];
                    sum_gxh += gxh;
                    sum_gxh_xh += gxh * xh_row[j];
                }
                let scale = inv_std[r] / n as f64;
                for j in 0..n {
                    let gxh = g_row[j] * gamma[j];
                    gx[r * n + j] = scale * (n as f64 * gxh - sum_gxh - xh_row[j] * sum_gxh_xh);
                }
            }
            accumulate(nodes, grads, *gain, g_gain);
            accumulate(nodes, grads, *bias, g_bias);
            accumulate(nodes, grads, *x, gx);
        }
        Op::Relu(a) => {
            let xv = val(*a).data();
            let gx = g
                .iter()
                .zip(xv)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, gx);
        }
        Op::Dropout(a, mask) => {
            accumulate(nodes, grads, *a, g.iter().zip(mask).map(|(g, m)| g * m).collect());
        }
        Op::Embedding { table, ids } => {
            if nodes[*table].requires_grad {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut gt = vec![0.0; tv.numel()];
                for (r, &tok) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt[tok * d + j] += g[r * d + j];
                    }
                }
                accumulate(nodes, grads, *table, gt);
            }
        }
        Op::Concat { inputs, axis } => {
            let out_shape = node.value.shape();
            let (outer, _, inner) = axis_split(out_shape, *axis);
            let mut parts: Vec<Vec<f64>> =
                inputs.iter().map(|&i| Vec::with_capacity(val(i).numel())).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (k, &i) in inputs.iter().enumerate() {
                    let chunk = val(i).shape()[*axis] * inner;
                    parts[k].extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            for (&i, part) in inputs.iter().zip(parts) {
                accumulate(nodes, grads, i, part);
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            pad,
            probs,
            scale,
        } => {
            let v = val(*logits).shape()[1];
            let mut gx = vec![0.0; probs.len()];
            let s = g[0] * scale;
            for (t, &target) in targets.iter().enumerate() {
                if target == *pad {
                    continue;
                }
                for j in 0..v {
                    gx[t * v + j] = s * probs[t * v + j];
                }
                gx[t * v + target] -= s;
            }
            accumulate(nodes, grads, *logits, gx);
        }
        Op::Sum(a) => {
            let n = val(*a).numel();
            accumulate(nodes, grads, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(*a).numel();
            accumulate(nodes, grads, *a, vec![g[0] / n as f64; n]);
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars belong to different tapes"
        );
    }

    fn elementwise(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(Error::dim(name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(a.shape(), data)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, op(self.id, other.id), rg))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(&self, c: f64) -> Var<'t> {
        let value = {
            let a = self.value();
            Tensor::from_fn(a.shape(), |i| a.data()[i] * c)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Scale(self.id, c), rg)
    }

    /// Adds a `[n]` bias to every length-`n` row along the last axis.
    pub fn add_bias(&self, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&bias);
        let value = {
            let x = self.value();
            let b = bias.value();
            let n = *x.shape().last().unwrap();
            if b.shape() != [n] {
                return Err(Error::dim("add_bias", x.shape(), b.shape()));
            }
            let mut data = x.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(b.data()) {
                    *v += bv;
                }
            }
            Tensor::new(x.shape(), data)?
        };
        let rg = self.tape.requires(&[self.id, bias.id]);
        Ok(self.tape.push(value, Op::AddBias(self.id, bias.id), rg))
    }

    /// Matrix product of `[m,k]` and `[k,n]`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let a = self.value();
            let b = other.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(Error::dim("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let mut out = vec![0.0; m * n];
            kernels::mm_nn(a.data(), b.data(), &mut out, m, k, n);
            Tensor::new(&[m, n], out)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    /// Batched matrix product of `[B,m,k]` and `[B,k,n]`.
    pub fn bmm(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let value = {
            let a = self.value();
            let b = other.value();
            let (sa, sb) = (a.shape(), b.shape());
            if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(Error::dim("bmm", sa, sb));
            }
            let (batch, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
            let mut out = vec![0.0; batch * m * n];
            for i in 0..batch {
                kernels::mm_nn(
                    &a.data()[i * m * k..(i + 1) * m * k],
                    &b.data()[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor::new(&[batch, m, n], out)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::BatchMatMul(self.id, other.id), rg))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.value().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Reshape(self.id), rg))
    }

    /// Reorders axes; output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            let mut seen = vec![false; a.rank()];
            let valid = perm.len() == a.rank()
                && perm
                    .iter()
                    .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(Error::dim("permute", a.shape(), perm));
            }
            let (data, shape) = kernels::permute(a.data(), a.shape(), perm);
            Tensor::new(&shape, data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Permute(self.id, perm.to_vec()), rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let rank = self.value().rank();
        if rank < 2 {
            return Err(Error::dim("transpose", &self.shape(), &[2]));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let value = {
            let a = self.value();
            if axis >= a.rank() {
                return Err(Error::Usage(format!("softmax axis {axis} out of range for {:?}", a.shape())));
            }
            if a.data().iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric("softmax input contains NaN".into()));
            }
            let mut data = a.data().to_vec();
            kernels::softmax_in_place(&mut data, a.shape(), axis);
            Tensor::new(a.shape(), data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(value, Op::Softmax(self.id, axis), rg))
    }

    /// Normalizes each last-axis row to zero mean and unit variance, then
    /// applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(&gain);
        self.same_tape(&bias);
        let (value, xhat, inv_std) = {
            let x = self.value();
            let gv = gain.value();
            let bv = bias.value();
            let n = *x.shape().last().unwrap();
            if gv.shape() != [n] {
                return Err(Error::dim("layer_norm", x.shape(), gv.shape()));
            }
            if bv.shape() != [n] {
                return Err(Error::dim("layer_norm", x.shape(), bv.shape()));
            }
            let rows = x.numel() / n;
            let mut xhat = Vec::with_capacity(x.numel());
            let mut inv_std = Vec::with_capacity(rows);
            let mut out = Vec::with_capacity(x.numel());
            for row in x.data().chunks(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                inv_std.push(is);
                for (j, v) in row.iter().enumerate() {
                    let h = (v - mean) * is;
                    xhat.push(h);
                    out.push(h * gv.data()[j] + bv.data()[j]);
                }
            }
            (Tensor::new(x.shape(), out)?, xhat, inv_std)
        };
        let rg = self.tape.requires(&[self.id, gain.id, bias.id]);
        Ok(self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    pub fn relu(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            Tensor::from_fn(a.shape(), |i| a.data()[i].max(0.0))
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Relu(self.id), rg)
    }

    /// Inverted dropout: each entry is zeroed with probability `rate` and
    /// survivors are scaled by `1/(1-rate)`. Pass `None` for evaluation,
    /// where this is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: Option<&mut R>) -> Var<'t> {
        let Some(rng) = rng else { return *self };
        if rate <= 0.0 {
            return *self;
        }
        let keep = 1.0 - rate;
        let (value, mask) = {
            let a = self.value();
            let mask: Vec<f64> = (0..a.numel())
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let data = a.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Tensor::new(a.shape(), data).expect("same shape"), mask)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Dropout(self.id, mask), rg)
    }

    /// Gathers rows of a `[V,d]` table; gradients scatter-add back.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t>> {
        let value = {
            let t = self.value();
            if t.rank() != 2 {
                return Err(Error::dim("embedding", t.shape(), &[0, 0]));
            }
            let (v, d) = (t.shape()[0], t.shape()[1]);
            if ids.is_empty() {
                return Err(Error::Usage("embedding lookup of zero ids".into()));
            }
            let mut data = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= v {
                    return Err(Error::Index(format!("token id {id} outside vocabulary of {v}")));
                }
                data.extend_from_slice(t.row(id));
            }
            Tensor::new(&[ids.len(), d], data)?
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            value,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Negative log-likelihood of `targets` under row-wise softmax of
    /// `[T,V]` logits, skipping positions whose target is `pad`.
    pub fn cross_entropy(&self, targets: &[usize], pad: usize, reduction: Reduction) -> Result<Var<'t>> {
        let (value, probs, scale) = {
            let l = self.value();
            if l.rank() != 2 || l.shape()[0] != targets.len() {
                return Err(Error::dim("cross_entropy", l.shape(), &[targets.len()]));
            }
            let v = l.shape()[1];
            let count = targets.iter().filter(|&&t| t != pad).count();
            if count == 0 {
                return Err(Error::Usage("cross_entropy over a batch with only padding targets".into()));
            }
            if let Some(&bad) = targets.iter().find(|&&t| t != pad && t >= v) {
                return Err(Error::Index(format!("target {bad} outside vocabulary of {v}")));
            }
            let mut probs = l.data().to_vec();
            let mut nll = 0.0;
            for (t, row) in probs.chunks_mut(v).enumerate() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                if targets[t] != pad {
                    nll += lse - row[targets[t]];
                }
                for x in row.iter_mut() {
                    *x = (*x - lse).exp();
                }
            }
            let scale = match reduction {
                Reduction::Mean => 1.0 / count as f64,
                Reduction::Sum => 1.0,
            };
            (Tensor::scalar(nll * scale), probs, scale)
        };
        let rg = self.requires_grad();
        Ok(self.tape.push(
            value,
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                pad,
                probs,
                scale,
            },
            rg,
        ))
    }

    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.value().data().iter().sum());
        let rg = self.requires_grad();
        self.tape.push(value, Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t> {
        let value = {
            let a = self.value();
            Tensor::scalar(a.data().iter().sum::<f64>() / a.numel() as f64)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Mean(self.id), rg)
    }
}
