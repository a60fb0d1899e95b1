//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] appends one node holding its output value and
//! the input ids its backward rule needs. Inputs always precede outputs, so
//! walking the arena from the back is a valid reverse topological order and
//! visits each node once.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::diffcore::tensor::{broadcast_shape, numel_of, BroadcastPlan};
use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    AddScalar(usize),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Narrow {
        src: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        srcs: Vec<usize>,
        axis: usize,
    },
    SumAxis {
        src: usize,
        axis: usize,
        mean: bool,
    },
    SumAll {
        src: usize,
        mean: bool,
    },
    LayerNorm {
        src: usize,
        inv_std: Vec<S>,
    },
    GeluTanh(usize),
    Silu(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Square(usize),
    Softmax(usize),
    Embedding {
        table: usize,
        indices: Vec<usize>,
    },
}

impl<S> Op<S> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Permute(..) => "permute",
            Op::Reshape(..) => "reshape",
            Op::Narrow { .. } => "narrow",
            Op::Concat { .. } => "concat",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll { .. } => "sum",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GeluTanh(..) => "gelu_tanh",
            Op::Silu(..) => "silu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Tanh(..) => "tanh",
            Op::Square(..) => "square",
            Op::Softmax(..) => "softmax",
            Op::Embedding { .. } => "embedding",
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    grad: Option<Tensor<S>>,
}

struct Inner<S> {
    nodes: Vec<Node<S>>,
    check_finite: bool,
}

/// Recording context. Cloning shares the same arena.
pub struct Tape<S: Scalar = f32> {
    inner: Rc<RefCell<Inner<S>>>,
}

impl<S: Scalar> Clone for Tape<S> {
    fn clone(&self) -> Self {
        Tape {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<S: Scalar = f32> {
    tape: Tape<S>,
    id: usize,
}

impl<S: Scalar> Clone for Var<S> {
    fn clone(&self) -> Self {
        Var {
            tape: self.tape.clone(),
            id: self.id,
        }
    }
}

impl<S: Scalar> fmt::Debug for Var<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.tape.inner.borrow();
        let node = &inner.nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("op", &node.op.name())
            .field("shape", &node.value.shape())
            .finish()
    }
}

impl<S: Scalar> Tape<S> {
    /// Finite-value assertions follow `debug_assertions` by default.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Tape {
            inner: Rc::new(RefCell::new(Inner {
                nodes: Vec::new(),
                check_finite,
            })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Var<S> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A leaf whose gradient is accumulated by [`Var::backward`].
    pub fn param(&self, value: Tensor<S>) -> Var<S> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<S>) -> Var<S> {
        self.leaf(value, false)
    }

    /// Clears accumulated gradients on every leaf.
    pub fn zero_grad(&self) {
        for node in self.inner.borrow_mut().nodes.iter_mut() {
            node.grad = None;
        }
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<S> {
        let mut inner = self.inner.borrow_mut();
        if inner.check_finite && !matches!(op, Op::Leaf) {
            assert!(
                value.all_finite(),
                "non-finite output from `{}` (shape {:?})",
                op.name(),
                value.shape()
            );
        }
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var {
            tape: self.clone(),
            id,
        }
    }

    fn same(&self, other: &Tape<S>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

fn gelu_tanh_scalar(x: f64) -> (f64, f64) {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    let u = K * (x + A * x * x * x);
    let th = u.tanh();
    let y = 0.5 * x * (1.0 + th);
    let du = K * (1.0 + 3.0 * A * x * x);
    let dy = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
    (y, dy)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<S: Scalar> Var<S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &Tape<S> {
        &self.tape
    }

    pub fn value(&self) -> Ref<'_, Tensor<S>> {
        Ref::map(self.tape.inner.borrow(), |inner| {
            &inner.nodes[self.id].value
        })
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    /// Accumulated gradient of a leaf after [`Var::backward`].
    pub fn grad(&self) -> Option<Tensor<S>> {
        self.tape.inner.borrow().nodes[self.id].grad.clone()
    }

    fn rg(&self) -> bool {
        self.requires_grad()
    }

    fn unary(&self, op: Op<S>, value: Tensor<S>) -> Var<S> {
        let rg = self.rg();
        self.tape.push(value, op, rg)
    }

    fn check_tape(&self, other: &Var<S>) {
        assert!(
            self.tape.same(&other.tape),
            "operands recorded on different tapes"
        );
    }

    fn broadcast_binary(
        &self,
        other: &Var<S>,
        name: &'static str,
        f: impl Fn(S, S) -> S,
    ) -> Result<Tensor<S>> {
        self.check_tape(other);
        let inner = self.tape.inner.borrow();
        let a = &inner.nodes[self.id].value;
        let b = &inner.nodes[other.id].value;
        if a.shape() == b.shape() {
            return Ok(a.zip_map(b, f));
        }
        let shape = broadcast_shape(a.shape(), b.shape())
            .ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
        let amap = BroadcastPlan::new(&shape, a.shape()).index_map();
        let bmap = BroadcastPlan::new(&shape, b.shape()).index_map();
        let (ad, bd) = (a.data(), b.data());
        let data = amap
            .iter()
            .zip(&bmap)
            .map(|(&i, &j)| f(ad[i], bd[j]))
            .collect();
        Ok(Tensor::from_parts(shape, data))
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&self, other: &Var<S>) -> Result<Var<S>> {
        let out = self.broadcast_binary(other, "add", |a, b| a + b)?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Add(self.id, other.id), rg))
    }

    pub fn sub(&self, other: &Var<S>) -> Result<Var<S>> {
        let out = self.broadcast_binary(other, "sub", |a, b| a - b)?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Sub(self.id, other.id), rg))
    }

    pub fn mul(&self, other: &Var<S>) -> Result<Var<S>> {
        let out = self.broadcast_binary(other, "mul", |a, b| a * b)?;
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::Mul(self.id, other.id), rg))
    }

    pub fn scale(&self, k: f64) -> Var<S> {
        let k = S::from_f64(k);
        let out = self.value().map(|x| x * k);
        self.unary(Op::Scale(self.id, k), out)
    }

    pub fn neg(&self) -> Var<S> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Var<S> {
        let c = S::from_f64(c);
        let out = self.value().map(|x| x + c);
        self.unary(Op::AddScalar(self.id), out)
    }

    pub fn matmul(&self, other: &Var<S>) -> Result<Var<S>> {
        self.check_tape(other);
        let out = {
            let inner = self.tape.inner.borrow();
            inner.nodes[self.id]
                .value
                .matmul(&inner.nodes[other.id].value)?
        };
        let rg = self.rg() || other.rg();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<S>> {
        let out = self.value().permute(perm)?;
        Ok(self.unary(Op::Permute(self.id, perm.to_vec()), out))
    }

    pub fn transpose_last(&self) -> Result<Var<S>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(Error::shape("transpose", &self.shape(), &[]));
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<S>> {
        let out = self.value().reshape(shape.to_vec())?;
        Ok(self.unary(Op::Reshape(self.id), out))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<S>> {
        let out = self.value().narrow(axis, start, len)?;
        Ok(self.unary(
            Op::Narrow {
                src: self.id,
                axis,
                start,
            },
            out,
        ))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Var<S>>> {
        let total: usize = sizes.iter().sum();
        let shape = self.shape();
        if axis >= shape.len() || total != shape[axis] {
            return Err(Error::shape("split", &shape, sizes));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let part = self.narrow(axis, start, len);
                start += len;
                part
            })
            .collect()
    }

    pub fn concat(parts: &[Var<S>], axis: usize) -> Result<Var<S>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        for p in parts {
            first.check_tape(p);
        }
        let out = {
            let inner = first.tape.inner.borrow();
            let vals: Vec<&Tensor<S>> = parts.iter().map(|p| &inner.nodes[p.id].value).collect();
            Tensor::concat(&vals, axis)?
        };
        let rg = parts.iter().any(|p| p.rg());
        let srcs = parts.iter().map(|p| p.id).collect();
        Ok(first.tape.push(out, Op::Concat { srcs, axis }, rg))
    }

    fn reduce_axis(&self, axis: usize, keepdim: bool, mean: bool) -> Result<Var<S>> {
        let out = {
            let v = self.value();
            let shape = v.shape();
            if axis >= shape.len() {
                return Err(Error::shape("reduce", shape, &[axis]));
            }
            let outer = numel_of(&shape[..axis]);
            let extent = shape[axis];
            let inner_n = numel_of(&shape[axis + 1..]);
            let mut data = vec![S::zero(); outer * inner_n];
            let d = v.data();
            for o in 0..outer {
                for e in 0..extent {
                    let base = (o * extent + e) * inner_n;
                    for i in 0..inner_n {
                        data[o * inner_n + i] += d[base + i];
                    }
                }
            }
            if mean {
                let k = S::from_f64(1.0 / extent as f64);
                data.iter_mut().for_each(|x| *x *= k);
            }
            let mut out_shape = shape.to_vec();
            if keepdim {
                out_shape[axis] = 1;
            } else {
                out_shape.remove(axis);
            }
            Tensor::from_parts(out_shape, data)
        };
        Ok(self.unary(
            Op::SumAxis {
                src: self.id,
                axis,
                mean,
            },
            out,
        ))
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Var<S>> {
        self.reduce_axis(axis, keepdim, false)
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Var<S>> {
        self.reduce_axis(axis, keepdim, true)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Var<S> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(
            Op::SumAll {
                src: self.id,
                mean: false,
            },
            out,
        )
    }

    pub fn mean(&self) -> Var<S> {
        let v = {
            let t = self.value();
            t.sum() / S::from_f64(t.numel() as f64)
        };
        self.unary(
            Op::SumAll {
                src: self.id,
                mean: true,
            },
            Tensor::scalar(v),
        )
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    /// No affine transform is applied.
    pub fn layer_norm(&self, eps: f64) -> Var<S> {
        let (out, inv_std) = {
            let v = self.value();
            let d = *v.shape().last().expect("layer_norm on a scalar");
            let rows = v.numel() / d;
            let mut out = Vec::with_capacity(v.numel());
            let mut inv_std = Vec::with_capacity(rows);
            let nd = S::from_f64(d as f64);
            let eps = S::from_f64(eps);
            for row in v.data().chunks_exact(d) {
                let mean = row.iter().copied().sum::<S>() / nd;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / nd;
                let denom = var + eps;
                let is = if denom > S::zero() {
                    S::one() / denom.sqrt()
                } else {
                    S::zero()
                };
                out.extend(row.iter().map(|&x| (x - mean) * is));
                inv_std.push(is);
            }
            (Tensor::from_parts(v.shape().to_vec(), out), inv_std)
        };
        self.unary(
            Op::LayerNorm {
                src: self.id,
                inv_std,
            },
            out,
        )
    }

    /// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
    pub fn gelu_tanh(&self) -> Var<S> {
        let out = self
            .value()
            .map(|x| S::from_f64(gelu_tanh_scalar(x.as_f64()).0));
        self.unary(Op::GeluTanh(self.id), out)
    }

    /// `x·sigmoid(x)`
    pub fn silu(&self) -> Var<S> {
        let out = self.value().map(|x| {
            let xf = x.as_f64();
            S::from_f64(xf * sigmoid(xf))
        });
        self.unary(Op::Silu(self.id), out)
    }

    pub fn exp(&self) -> Var<S> {
        let out = self.value().map(|x| x.exp());
        self.unary(Op::Exp(self.id), out)
    }

    pub fn log(&self) -> Var<S> {
        let out = self.value().map(|x| x.ln());
        self.unary(Op::Log(self.id), out)
    }

    pub fn tanh(&self) -> Var<S> {
        let out = self.value().map(|x| x.tanh());
        self.unary(Op::Tanh(self.id), out)
    }

    pub fn square(&self) -> Var<S> {
        let out = self.value().map(|x| x * x);
        self.unary(Op::Square(self.id), out)
    }

    /// Max-subtracted softmax over the last axis.
    pub fn softmax_lastdim(&self) -> Var<S> {
        let out = {
            let v = self.value();
            let d = *v.shape().last().expect("softmax on a scalar");
            let mut out = Vec::with_capacity(v.numel());
            for row in v.data().chunks_exact(d) {
                let m = row.iter().copied().fold(S::neg_infinity(), S::max);
                let start = out.len();
                out.extend(row.iter().map(|&x| (x - m).exp()));
                let z: S = out[start..].iter().copied().sum();
                out[start..].iter_mut().for_each(|x| *x /= z);
            }
            Tensor::from_parts(v.shape().to_vec(), out)
        };
        self.unary(Op::Softmax(self.id), out)
    }

    /// Copy of the value that does not propagate gradients.
    pub fn detach(&self) -> Var<S> {
        self.tape.constant(self.to_tensor())
    }

    /// Gathers rows of a `[rows, d]` table: output is `[indices.len(), d]`.
    pub fn embedding(&self, indices: &[usize]) -> Result<Var<S>> {
        let out = {
            let table = self.value();
            let shape = table.shape();
            if shape.len() != 2 {
                return Err(Error::shape("embedding", shape, &[indices.len()]));
            }
            let (rows, d) = (shape[0], shape[1]);
            let mut out = Vec::with_capacity(indices.len() * d);
            for &i in indices {
                if i >= rows {
                    return Err(Error::Index {
                        what: "embedding table",
                        index: i,
                        limit: rows,
                    });
                }
                out.extend_from_slice(&table.data()[i * d..(i + 1) * d]);
            }
            Tensor::new([indices.len(), d], out)?
        };
        Ok(self.unary(
            Op::Embedding {
                table: self.id,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    /// Accumulates d(self)/d(leaf) into every leaf that requires gradients.
    ///
    /// Gradients add onto whatever the leaves already hold, so calling this
    /// twice doubles them. Use [`Tape::zero_grad`] in between to reset.
    pub fn backward(&self) -> Result<()> {
        let shape = self.shape();
        if numel_of(&shape) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got shape {shape:?}"
            )));
        }
        let mut inner = self.tape.inner.borrow_mut();
        let n = self.id + 1;
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; n];
        grads[self.id] = Some(Tensor::full(shape, S::one()));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(g);
                continue;
            }
            let contributions = backward_rule(&inner.nodes, id, &g);
            for (src, contrib) in contributions {
                if !inner.nodes[src].requires_grad {
                    continue;
                }
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }

        for (id, g) in grads.into_iter().enumerate() {
            if let Some(g) = g {
                let node = &mut inner.nodes[id];
                if matches!(node.op, Op::Leaf) && node.requires_grad {
                    match &mut node.grad {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
        }
        Ok(())
    }
}

/// Gradient contributions from node `id` to each of its inputs.
fn backward_rule<S: Scalar>(
    nodes: &[Node<S>],
    id: usize,
    g: &Tensor<S>,
) -> Vec<(usize, Tensor<S>)> {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => Vec::new(),
        Op::Add(a, b) => vec![
            (*a, g.reduce_to(val(*a).shape())),
            (*b, g.reduce_to(val(*b).shape())),
        ],
        Op::Sub(a, b) => vec![
            (*a, g.reduce_to(val(*a).shape())),
            (*b, g.map(|x| -x).reduce_to(val(*b).shape())),
        ],
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let amap = BroadcastPlan::new(g.shape(), va.shape()).index_map();
            let bmap = BroadcastPlan::new(g.shape(), vb.shape()).index_map();
            let mut ga = vec![S::zero(); va.numel()];
            let mut gb = vec![S::zero(); vb.numel()];
            for (o, &gv) in g.data().iter().enumerate() {
                ga[amap[o]] += gv * vb.data()[bmap[o]];
                gb[bmap[o]] += gv * va.data()[amap[o]];
            }
            vec![
                (*a, Tensor::from_parts(va.shape().to_vec(), ga)),
                (*b, Tensor::from_parts(vb.shape().to_vec(), gb)),
            ]
        }
        Op::Scale(a, k) => {
            let k = *k;
            vec![(*a, g.map(|x| x * k))]
        }
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            // dA = dC·Bᵀ, dB = Aᵀ·dC
            let ga = g
                .matmul(&vb.transpose_last())
                .expect("matmul backward shapes");
            let gb = if vb.ndim() == 2 {
                let k = *va.shape().last().unwrap();
                let n = *vb.shape().last().unwrap();
                let a2 = va.reshape([va.numel() / k, k]).unwrap();
                let g2 = g.reshape([g.numel() / n, n]).unwrap();
                a2.transpose_last()
                    .matmul(&g2)
                    .expect("matmul backward shapes")
            } else {
                va.transpose_last()
                    .matmul(g)
                    .expect("matmul backward shapes")
            };
            vec![(*a, ga), (*b, gb)]
        }
        Op::Permute(a, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            vec![(*a, g.permute(&inv).expect("inverse permutation"))]
        }
        Op::Reshape(a) => vec![(
            *a,
            g.reshape(val(*a).shape().to_vec()).expect("reshape back"),
        )],
        Op::Narrow { src, axis, start } => {
            let shape = val(*src).shape();
            let axis = *axis;
            let outer = numel_of(&shape[..axis]);
            let inner = numel_of(&shape[axis + 1..]);
            let len = g.shape()[axis];
            let mut full = vec![S::zero(); numel_of(shape)];
            for o in 0..outer {
                let dst = (o * shape[axis] + start) * inner;
                let srcoff = o * len * inner;
                full[dst..dst + len * inner]
                    .copy_from_slice(&g.data()[srcoff..srcoff + len * inner]);
            }
            vec![(*src, Tensor::from_parts(shape.to_vec(), full))]
        }
        Op::Concat { srcs, axis } => {
            let mut start = 0;
            srcs.iter()
                .map(|&s| {
                    let len = val(s).shape()[*axis];
                    let part = g.narrow(*axis, start, len).expect("concat backward");
                    start += len;
                    (s, part)
                })
                .collect()
        }
        Op::SumAxis { src, axis, mean } => {
            let shape = val(*src).shape();
            let outer = numel_of(&shape[..*axis]);
            let extent = shape[*axis];
            let inner = numel_of(&shape[*axis + 1..]);
            let k = if *mean {
                S::from_f64(1.0 / extent as f64)
            } else {
                S::one()
            };
            let mut full = vec![S::zero(); numel_of(shape)];
            for o in 0..outer {
                for e in 0..extent {
                    for i in 0..inner {
                        full[(o * extent + e) * inner + i] = g.data()[o * inner + i] * k;
                    }
                }
            }
            vec![(*src, Tensor::from_parts(shape.to_vec(), full))]
        }
        Op::SumAll { src, mean } => {
            let shape = val(*src).shape();
            let mut gv = g.item();
            if *mean {
                gv /= S::from_f64(numel_of(shape) as f64);
            }
            vec![(*src, Tensor::full(shape.to_vec(), gv))]
        }
        Op::LayerNorm { src, inv_std } => {
            let d = *out.shape().last().unwrap();
            let nd = S::from_f64(d as f64);
            let mut dx = Vec::with_capacity(out.numel());
            for ((xhat, gr), &is) in out
                .data()
                .chunks_exact(d)
                .zip(g.data().chunks_exact(d))
                .zip(inv_std)
            {
                let mean_g = gr.iter().copied().sum::<S>() / nd;
                let mean_gx = gr.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<S>() / nd;
                dx.extend(
                    xhat.iter()
                        .zip(gr)
                        .map(|(&xh, &gv)| is * (gv - mean_g - xh * mean_gx)),
                );
            }
            vec![(*src, Tensor::from_parts(out.shape().to_vec(), dx))]
        }
        Op::GeluTanh(a) => {
            let x = val(*a);
            vec![(
                *a,
                x.zip_map(g, |x, gv| gv * S::from_f64(gelu_tanh_scalar(x.as_f64()).1)),
            )]
        }
        Op::Silu(a) => {
            let x = val(*a);
            vec![(
                *a,
                x.zip_map(g, |x, gv| {
                    let xf = x.as_f64();
                    let s = sigmoid(xf);
                    gv * S::from_f64(s * (1.0 + xf * (1.0 - s)))
                }),
            )]
        }
        Op::Exp(a) => vec![(*a, out.zip_map(g, |y, gv| y * gv))],
        Op::Log(a) => vec![(*a, val(*a).zip_map(g, |x, gv| gv / x))],
        Op::Tanh(a) => vec![(*a, out.zip_map(g, |y, gv| gv * (S::one() - y * y)))],
        Op::Square(a) => {
            let two = S::from_f64(2.0);
            vec![(*a, val(*a).zip_map(g, |x, gv| two * x * gv))]
        }
        Op::Softmax(a) => {
            let d = *out.shape().last().unwrap();
            let mut dx = Vec::with_capacity(out.numel());
            for (y, gr) in out.data().chunks_exact(d).zip(g.data().chunks_exact(d)) {
                let dot: S = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                dx.extend(y.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
            }
            vec![(*a, Tensor::from_parts(out.shape().to_vec(), dx))]
        }
        Op::Embedding { table, indices } => {
            let shape = val(*table).shape();
            let d = shape[1];
            let mut gt = vec![S::zero(); numel_of(shape)];
            for (row, &i) in indices.iter().enumerate() {
                for j in 0..d {
                    gt[i * d + j] += g.data()[row * d + j];
                }
            }
            vec![(*table, Tensor::from_parts(shape.to_vec(), gt))]
        }
    }
}
