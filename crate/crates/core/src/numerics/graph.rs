//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Node ids grow
//! monotonically and every op only references earlier ids, so the reverse
//! sweep is a single pass in descending id order.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{axis_split, broadcast_shape, for_each_broadcast, Bcast, Tensor};
use crate::scalar::Scalar;

/// Gradients keyed by parameter name.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, T),
    Offset(usize),
    MatMul(usize, usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Relu(usize),
    Silu(usize),
    Square(usize),
    Sqrt(usize),
    Clamp(usize, T, T),
    SumAll(usize),
    SumAxis(usize, usize),
    /// Argmax position along the reduced axis for every output element.
    MaxAxis(usize, usize, Vec<usize>),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Reshape(usize),
    /// Row gather along axis 0.
    IndexSelect(usize, Vec<usize>),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<String, usize>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), params: RefCell::new(HashMap::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// A constant leaf (data, noise, frozen activations).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// A parameter leaf. Repeated lookups of the same name share one node; the
    /// leaf is differentiable iff the stored tensor has `requires_grad` set.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var<'_, T>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { graph: self, id });
        }
        let tensor = store.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let rg = tensor.requires_grad();
        let var = self.push(tensor.clone(), Op::Param, rg);
        self.params.borrow_mut().insert(name.to_string(), var.id);
        Ok(var)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = nodes[loss.id].value.numel();
        if root != 1 {
            return Err(Error::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::full(nodes[loss.id].value.shape().to_vec(), T::one()));
        }
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf | Op::Param) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for input in op_inputs(&node.op) {
                if input >= id {
                    return Err(Error::GraphCycle(id));
                }
            }
            propagate(&nodes, id, &g, &mut grads);
        }
        let mut by_param = BTreeMap::new();
        for (name, &id) in self.params.borrow().iter() {
            if let Some(g) = grads[id].take() {
                by_param.insert(name.clone(), g);
            }
        }
        Ok(Gradients { by_param, leaves: grads })
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    by_param: BTreeMap<String, Tensor<T>>,
    leaves: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a constant or parameter leaf, if any flowed.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_param.get(name)
    }

    /// One gradient per parameter in `store`, zero-filled for parameters the
    /// loss never touched.
    pub fn for_store(mut self, store: &ParamStore<T>) -> GradMap<T> {
        store
            .iter()
            .map(|(name, t)| {
                let g = self.by_param.remove(name).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Gradient of a scalar `loss` for every parameter of `store`.
pub fn backward<T: Scalar>(loss: Var<'_, T>, store: &ParamStore<T>) -> Result<GradMap<T>> {
    Ok(loss.graph.backward(loss)?.for_store(store))
}

fn op_inputs<T>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf | Op::Param => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
        Op::Neg(a)
        | Op::Scale(a, _)
        | Op::Offset(a)
        | Op::Exp(a)
        | Op::Log(a)
        | Op::Softplus(a)
        | Op::Relu(a)
        | Op::Silu(a)
        | Op::Square(a)
        | Op::Sqrt(a)
        | Op::Clamp(a, _, _)
        | Op::SumAll(a)
        | Op::SumAxis(a, _)
        | Op::MaxAxis(a, _, _)
        | Op::Slice(a, _, _)
        | Op::Reshape(a)
        | Op::IndexSelect(a, _) => vec![*a],
        Op::Concat(ids, _) => ids.clone(),
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: usize, g: Tensor<T>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += *v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let map = Bcast::new(shape, g.shape());
    let mut out = Tensor::zeros(shape.to_vec());
    let data = out.data_mut();
    let gd = g.data();
    for_each_broadcast(g.shape(), &map, &Bcast::Same, |i, ia, _| data[ia] += gd[i]);
    out
}

fn unary_grad<T: Scalar>(g: &Tensor<T>, x: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = g.data().iter().zip(x.data()).map(|(&gi, &xi)| f(gi, xi)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let needs = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &*nodes[i].value;
    match &nodes[id].op {
        Op::Leaf | Op::Param => {}
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to(g, val(*a).shape()));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to(g, val(*b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, reduce_to(g, val(*a).shape()));
            }
            if needs(*b) {
                accumulate(grads, *b, reduce_to(&g.map(|v| -v), val(*b).shape()));
            }
        }
        Op::Mul(a, b) | Op::Div(a, b) => {
            let is_div = matches!(nodes[id].op, Op::Div(..));
            let (va, vb) = (val(*a), val(*b));
            let out = g.shape().to_vec();
            let (ma, mb) = (Bcast::new(va.shape(), &out), Bcast::new(vb.shape(), &out));
            let (ad, bd, gd) = (va.data(), vb.data(), g.data());
            if needs(*a) {
                let mut ga = Tensor::zeros(va.shape().to_vec());
                let gad = ga.data_mut();
                for_each_broadcast(&out, &ma, &mb, |i, ia, ib| {
                    gad[ia] += if is_div { gd[i] / bd[ib] } else { gd[i] * bd[ib] };
                });
                accumulate(grads, *a, ga);
            }
            if needs(*b) {
                let mut gb = Tensor::zeros(vb.shape().to_vec());
                let gbd = gb.data_mut();
                for_each_broadcast(&out, &ma, &mb, |i, ia, ib| {
                    gbd[ib] += if is_div { -gd[i] * ad[ia] / (bd[ib] * bd[ib]) } else { gd[i] * ad[ia] };
                });
                accumulate(grads, *b, gb);
            }
        }
        Op::Neg(a) => accumulate(grads, *a, g.map(|v| -v)),
        Op::Scale(a, s) => {
            let s = *s;
            accumulate(grads, *a, g.map(|v| v * s));
        }
        Op::Offset(a) => accumulate(grads, *a, g.clone()),
        Op::MatMul(a, b) => matmul_backward(val(*a), val(*b), g, *a, *b, needs(*a), needs(*b), grads),
        Op::Exp(a) => {
            let y = &nodes[id].value;
            accumulate(grads, *a, unary_grad(g, y, |gi, yi| gi * yi));
        }
        Op::Log(a) => accumulate(grads, *a, unary_grad(g, val(*a), |gi, xi| gi / xi)),
        Op::Softplus(a) => accumulate(grads, *a, unary_grad(g, val(*a), |gi, xi| gi * sigmoid(xi))),
        Op::Relu(a) => accumulate(
            grads,
            *a,
            unary_grad(g, val(*a), |gi, xi| if xi > T::zero() { gi } else { T::zero() }),
        ),
        Op::Silu(a) => accumulate(
            grads,
            *a,
            unary_grad(g, val(*a), |gi, xi| {
                let s = sigmoid(xi);
                gi * s * (T::one() + xi * (T::one() - s))
            }),
        ),
        Op::Square(a) => accumulate(grads, *a, unary_grad(g, val(*a), |gi, xi| gi * (xi + xi))),
        Op::Sqrt(a) => {
            let y = &nodes[id].value;
            accumulate(grads, *a, unary_grad(g, y, |gi, yi| gi / (yi + yi)));
        }
        Op::Clamp(a, lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            accumulate(
                grads,
                *a,
                unary_grad(g, val(*a), |gi, xi| if xi < lo || xi > hi { T::zero() } else { gi }),
            );
        }
        Op::SumAll(a) => {
            let gv = g.data()[0];
            accumulate(grads, *a, Tensor::full(val(*a).shape().to_vec(), gv));
        }
        Op::SumAxis(a, axis) => {
            let shape = val(*a).shape().to_vec();
            let (outer, len, inner) = axis_split(&shape, *axis);
            let mut ga = Tensor::zeros(shape);
            let gad = ga.data_mut();
            let gd = g.data();
            for o in 0..outer {
                for l in 0..len {
                    let dst = (o * len + l) * inner;
                    gad[dst..dst + inner].copy_from_slice(&gd[o * inner..(o + 1) * inner]);
                }
            }
            accumulate(grads, *a, ga);
        }
        Op::MaxAxis(a, axis, argmax) => {
            let shape = val(*a).shape().to_vec();
            let (_, len, inner) = axis_split(&shape, *axis);
            let mut ga = Tensor::zeros(shape);
            let gad = ga.data_mut();
            for (j, (&gv, &arg)) in g.data().iter().zip(argmax).enumerate() {
                let (o, i) = (j / inner, j % inner);
                gad[(o * len + arg) * inner + i] += gv;
            }
            accumulate(grads, *a, ga);
        }
        Op::Concat(ids, axis) => {
            let out_shape = g.shape().to_vec();
            let (outer, total, inner) = axis_split(&out_shape, *axis);
            let mut start = 0;
            for &i in ids {
                let len = val(i).shape()[*axis];
                if needs(i) {
                    accumulate(grads, i, slice_axis(g.data(), outer, total, inner, start, len, val(i).shape()));
                }
                start += len;
            }
        }
        Op::Slice(a, axis, start) => {
            let shape = val(*a).shape().to_vec();
            let (outer, total, inner) = axis_split(&shape, *axis);
            let len = g.shape()[*axis];
            let mut ga = Tensor::zeros(shape);
            let gad = ga.data_mut();
            let gd = g.data();
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                gad[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
            }
            accumulate(grads, *a, ga);
        }
        Op::Reshape(a) => {
            let t = g.clone().reshape(val(*a).shape().to_vec()).expect("same element count");
            accumulate(grads, *a, t);
        }
        Op::IndexSelect(a, rows) => {
            let shape = val(*a).shape().to_vec();
            let cols: usize = shape[1..].iter().product();
            let mut ga = Tensor::zeros(shape);
            let gad = ga.data_mut();
            let gd = g.data();
            for (k, &r) in rows.iter().enumerate() {
                for c in 0..cols {
                    gad[r * cols + c] += gd[k * cols + c];
                }
            }
            accumulate(grads, *a, ga);
        }
    }
}

fn slice_axis<T: Scalar>(
    data: &[T],
    outer: usize,
    total: usize,
    inner: usize,
    start: usize,
    len: usize,
    shape: &[usize],
) -> Tensor<T> {
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let src = (o * total + start) * inner;
        out.extend_from_slice(&data[src..src + len * inner]);
    }
    Tensor::new(shape.to_vec(), out).expect("slice shape")
}

/// Rows whose gradient is entirely zero contribute nothing to either input
/// gradient; after a max-reduction most rows are such rows, so they are
/// compacted away before the products.
#[allow(clippy::too_many_arguments)]
fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    ia: usize,
    ib: usize,
    need_a: bool,
    need_b: bool,
    grads: &mut [Option<Tensor<T>>],
) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let gd = g.data();
    let live: Vec<usize> = (0..m).filter(|&i| gd[i * n..(i + 1) * n].iter().any(|v| *v != T::zero())).collect();
    if live.is_empty() {
        return;
    }
    let sparse = live.len() * 2 < m;
    let (rows, g_rows, a_rows): (usize, Vec<T>, Vec<T>) = if sparse {
        let mut gr = Vec::with_capacity(live.len() * n);
        let mut ar = Vec::with_capacity(live.len() * k);
        for &i in &live {
            gr.extend_from_slice(&gd[i * n..(i + 1) * n]);
            ar.extend_from_slice(&a.data()[i * k..(i + 1) * k]);
        }
        (live.len(), gr, ar)
    } else {
        (m, Vec::new(), Vec::new())
    };
    let (gsrc, asrc): (&[T], &[T]) = if sparse { (&g_rows, &a_rows) } else { (gd, a.data()) };
    if need_a {
        // dA = dC · Bᵀ
        let mut da_rows = vec![T::zero(); rows * k];
        T::gemm(rows, n, k, gsrc, n as isize, 1, b.data(), 1, n as isize, T::zero(), &mut da_rows);
        let da = if sparse {
            let mut full = vec![T::zero(); m * k];
            for (r, &i) in live.iter().enumerate() {
                full[i * k..(i + 1) * k].copy_from_slice(&da_rows[r * k..(r + 1) * k]);
            }
            full
        } else {
            da_rows
        };
        accumulate(grads, ia, Tensor::new(vec![m, k], da).expect("dA shape"));
    }
    if need_b {
        // dB = Aᵀ · dC
        let mut db = vec![T::zero(); k * n];
        T::gemm(k, rows, n, asrc, 1, k as isize, gsrc, n as isize, 1, T::zero(), &mut db);
        accumulate(grads, ib, Tensor::new(vec![k, n], db).expect("dB shape"));
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, f: impl Fn(T) -> T, op: Op<T>) -> Var<'g, T> {
        let x = self.value();
        let rg = self.requires_grad();
        self.graph.push(x.map(f), op, rg)
    }

    fn binary(self, other: Var<'g, T>, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let out = broadcast_shape(a.shape(), b.shape())?;
        let (ma, mb) = (Bcast::new(a.shape(), &out), Bcast::new(b.shape(), &out));
        let n: usize = out.iter().product();
        let mut data = vec![T::zero(); n];
        let (ad, bd) = (a.data(), b.data());
        for_each_broadcast(&out, &ma, &mb, |i, ia, ib| data[i] = f(ad[ia], bd[ib]));
        let rg = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(Tensor::new(out, data)?, op, rg))
    }

    pub fn add(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        self.binary(other, |x, y| x / y, Op::Div(self.id, other.id))
    }

    pub fn neg(self) -> Var<'g, T> {
        self.unary(|x| -x, Op::Neg(self.id))
    }

    pub fn scale(self, s: T) -> Var<'g, T> {
        self.unary(|x| x * s, Op::Scale(self.id, s))
    }

    pub fn offset(self, c: T) -> Var<'g, T> {
        self.unary(|x| x + c, Op::Offset(self.id))
    }

    pub fn exp(self) -> Var<'g, T> {
        self.unary(|x| x.exp(), Op::Exp(self.id))
    }

    pub fn log(self) -> Var<'g, T> {
        self.unary(|x| x.ln(), Op::Log(self.id))
    }

    pub fn softplus(self) -> Var<'g, T> {
        self.unary(|x| x.max(T::zero()) + (-x.abs()).exp().ln_1p(), Op::Softplus(self.id))
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(|x| x.max(T::zero()), Op::Relu(self.id))
    }

    pub fn silu(self) -> Var<'g, T> {
        self.unary(|x| x * sigmoid(x), Op::Silu(self.id))
    }

    pub fn square(self) -> Var<'g, T> {
        self.unary(|x| x * x, Op::Square(self.id))
    }

    pub fn sqrt(self) -> Var<'g, T> {
        self.unary(|x| x.sqrt(), Op::Sqrt(self.id))
    }

    pub fn clamp(self, lo: T, hi: T) -> Var<'g, T> {
        self.unary(|x| x.max(lo).min(hi), Op::Clamp(self.id, lo, hi))
    }

    /// `(m×k) · (k×n)`.
    pub fn matmul(self, other: Var<'g, T>) -> Result<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut c = vec![T::zero(); m * n];
        T::gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, T::zero(), &mut c);
        let rg = self.graph.needs(&[self.id, other.id]);
        Ok(self.graph.push(Tensor::new(vec![m, n], c)?, Op::MatMul(self.id, other.id), rg))
    }

    pub fn sum(self) -> Var<'g, T> {
        let s = self.value().sum();
        let rg = self.requires_grad();
        self.graph.push(Tensor::scalar(s), Op::SumAll(self.id), rg)
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = self.value().numel();
        self.sum().scale(T::one() / T::lit(n as f64))
    }

    fn check_axis(&self, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {shape:?}")));
        }
        Ok(shape)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.check_axis(axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[src + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad();
        Ok(self.graph.push(Tensor::new(out_shape, out)?, Op::SumAxis(self.id, axis), rg))
    }

    /// Maximum over `axis`, removing it. Ties resolve to the first index.
    pub fn max_axis(self, axis: usize) -> Result<Var<'g, T>> {
        let shape = self.check_axis(axis)?;
        let (outer, len, inner) = axis_split(&shape, axis);
        let x = self.value();
        let xd = x.data();
        let mut out = vec![T::neg_infinity(); outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = (o * len + l) * inner;
                let dst = o * inner;
                for i in 0..inner {
                    if xd[src + i] > out[dst + i] {
                        out[dst + i] = xd[src + i];
                        arg[dst + i] = l;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.requires_grad();
        Ok(self.graph.push(Tensor::new(out_shape, out)?, Op::MaxAxis(self.id, axis, arg), rg))
    }

    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let shape = self.check_axis(axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Shape(format!("slice {start}..{} of axis {axis} in {shape:?}", start + len)));
        }
        let (outer, total, inner) = axis_split(&shape, axis);
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = slice_axis(self.value().data(), outer, total, inner, start, len, &out_shape);
        let rg = self.requires_grad();
        Ok(self.graph.push(t, Op::Slice(self.id, axis, start), rg))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'g, T>> {
        let t = (*self.value()).clone().reshape(shape)?;
        let rg = self.requires_grad();
        Ok(self.graph.push(t, Op::Reshape(self.id), rg))
    }

    /// Gathers rows (entries of axis 0); rows may repeat.
    pub fn index_select(self, rows: &[usize]) -> Result<Var<'g, T>> {
        let x = self.value();
        if x.rank() == 0 {
            return Err(Error::Shape("index_select on a scalar".into()));
        }
        let n = x.shape()[0];
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::OutOfRange(format!("row {bad} of {n}")));
        }
        if rows.is_empty() {
            return Err(Error::Empty("index_select rows"));
        }
        let cols: usize = x.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(&x.data()[r * cols..(r + 1) * cols]);
        }
        let mut shape = x.shape().to_vec();
        shape[0] = rows.len();
        let rg = self.requires_grad();
        Ok(self.graph.push(Tensor::new(shape, data)?, Op::IndexSelect(self.id, rows.to_vec()), rg))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(vars: &[Var<'g, T>], axis: usize) -> Result<Var<'g, T>> {
        let first = vars.first().ok_or(Error::Empty("concat inputs"))?;
        let graph = first.graph;
        let values: Vec<Rc<Tensor<T>>> = vars.iter().map(|v| v.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("concat axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &x)| d != axis && x != base[d]) {
                return Err(Error::Shape(format!("concat {base:?} with {s:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let ids: Vec<usize> = vars.iter().map(|v| v.id).collect();
        let rg = graph.needs(&ids);
        Ok(graph.push(Tensor::new(shape, data)?, Op::Concat(ids, axis), rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, t: Tensor<f64>) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert(name, t.with_requires_grad(true)).unwrap();
        s
    }

    #[test]
    fn sum_of_squares_gradient() {
        let store = store_with("w", Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = w.mul(w).unwrap().sum();
        let grads = backward(loss, &store).unwrap();
        assert_eq!(grads["w"].data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let mut store = store_with("w", Tensor::from_vec(vec![1.0, 2.0]));
        store.insert("b", Tensor::from_vec(vec![5.0]).with_requires_grad(true)).unwrap();
        let g = Graph::new();
        let c = g.constant(Tensor::from_vec(vec![3.0, 4.0]));
        let loss = c.square().sum();
        let grads = backward(loss, &store).unwrap();
        assert_eq!(grads["w"].data(), &[0.0, 0.0]);
        assert_eq!(grads["b"].data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let store = store_with("w", Tensor::from_vec(vec![1.0, 2.0]));
        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        assert!(matches!(backward(w.square(), &store), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shared_parameter_accumulates() {
        let store = store_with("w", Tensor::from_vec(vec![2.0]));
        let g = Graph::new();
        let a = g.param(&store, "w").unwrap();
        let b = g.param(&store, "w").unwrap();
        assert_eq!(a.id(), b.id());
        let loss = a.mul(b).unwrap().add(a).unwrap().sum();
        let grads = backward(loss, &store).unwrap();
        assert_eq!(grads["w"].data(), &[5.0]);
    }

    #[test]
    fn frozen_parameter_receives_no_gradient_flow() {
        let mut store = store_with("w", Tensor::from_vec(vec![2.0]));
        store.insert("frozen", Tensor::from_vec(vec![3.0])).unwrap();
        let g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let f = g.param(&store, "frozen").unwrap();
        assert!(!f.requires_grad());
        let loss = w.mul(f).unwrap().sum();
        let grads = backward(loss, &store).unwrap();
        assert_eq!(grads["w"].data(), &[3.0]);
        assert_eq!(grads["frozen"].data(), &[0.0]);
    }

    #[test]
    fn max_axis_routes_gradient_to_first_argmax() {
        let store = store_with("x", Tensor::new(vec![3, 2], vec![1.0, 5.0, 4.0, 5.0, 4.0, 0.0]).unwrap());
        let g = Graph::new();
        let x = g.param(&store, "x").unwrap();
        let m = x.max_axis(0).unwrap();
        assert_eq!(m.value().data(), &[4.0, 5.0]);
        let grads = backward(m.sum(), &store).unwrap();
        assert_eq!(grads["x"].data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_and_slice_are_inverse() {
        let g: Graph<f64> = Graph::new();
        let a = g.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap());
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        assert_eq!(c.slice(1, 2, 1).unwrap().value().data(), &[5.0, 6.0]);
        assert_eq!(c.slice(1, 0, 2).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(c.slice(1, 2, 2).is_err());
    }

    #[test]
    fn sparse_matmul_backward_matches_dense() {
        let a = Tensor::new(vec![4, 3], (0..12).map(|v| v as f64 * 0.5 - 2.0).collect()).unwrap();
        let b = Tensor::new(vec![3, 2], vec![1.0, -1.0, 0.5, 2.0, -0.3, 0.7]).unwrap();
        let mut store = ParamStore::new();
        store.insert("a", a.with_requires_grad(true)).unwrap();
        store.insert("b", b.with_requires_grad(true)).unwrap();
        // Weight mask selecting only one row of the product.
        let mask = Tensor::new(vec![4, 2], vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let g = Graph::new();
        let pa = g.param(&store, "a").unwrap();
        let pb = g.param(&store, "b").unwrap();
        let loss = pa.matmul(pb).unwrap().mul(g.constant(mask)).unwrap().sum();
        let grads = backward(loss, &store).unwrap();
        // Row 1 of A is [-0.5, 0, 0.5]; dB[k] = A[1,k] * [1, 2].
        assert_eq!(grads["b"].data(), &[-0.5, -1.0, 0.0, 0.0, 0.5, 1.0]);
        // dA row 1 = [1,2]·Bᵀ = [1-2, 0.5+4, -0.3+1.4]
        let da = grads["a"].data();
        assert_eq!(&da[0..3], &[0.0, 0.0, 0.0]);
        assert!((da[3] + 1.0).abs() < 1e-12 && (da[4] - 4.5).abs() < 1e-12 && (da[5] - 1.1).abs() < 1e-12);
    }
}
