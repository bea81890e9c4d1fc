//! Tape-based reverse-mode differentiation over dense arrays.
//!
//! A [`Graph`] owns every intermediate value of one forward pass. Each
//! operation appends a node that remembers its parents; [`Graph::backward`]
//! walks the nodes in reverse insertion order and accumulates adjoints.
//! Nodes built only from constants never receive a gradient buffer.
//!
//! Binary elementwise operations broadcast with NumPy rules; the backward
//! pass sums adjoints over the broadcast axes.

use std::cell::{Ref, RefCell};

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, Array3, ArrayD, ArrayView2, ArrayView3, ArrayViewD, Axis, Ix2, Ix3, IxDyn, Slice, Zip};

use super::Real;

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, F),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    Relu(usize),
    LeakyRelu(usize, F),
    Square(usize),
    SmoothL1(usize),
    SumAll(usize),
    SumAxis(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    MixAxis(usize, usize, usize),
    Linear(usize, usize, Option<usize>),
    Narrow(usize, usize, usize),
    Concat(Vec<usize>, usize),
    MaskedSoftmax(usize),
    LogSoftmax(usize),
    NormLast(usize),
}

struct Node<F> {
    value: ArrayD<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Graph<F: Real> {
    nodes: RefCell<Vec<Node<F>>>,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, F: Real> {
    graph: &'g Graph<F>,
    id: usize,
}

impl<F: Real> Clone for Var<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: Real> Copy for Var<'_, F> {}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Grads<F> {
    grads: Vec<Option<ArrayD<F>>>,
}

impl<F: Real> Grads<F> {
    /// Gradient of the loss with respect to `var`, if it was reached.
    pub fn get(&self, var: Var<'_, F>) -> Option<&ArrayD<F>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Like [`Grads::get`] but returns zeros for unreached variables.
    pub fn get_or_zeros(&self, var: Var<'_, F>) -> ArrayD<F> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(var.shape()),
        }
    }
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops every node recorded after `mark`. Vars created after the mark
    /// become dangling and must not be used again.
    pub fn truncate(&self, mark: usize) {
        self.nodes.borrow_mut().truncate(mark);
    }

    fn push(&self, value: ArrayD<F>, op: Op<F>, needs_grad: bool) -> Var<'_, F> {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A trainable leaf.
    pub fn param(&self, value: ArrayD<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: ArrayD<F>) -> Var<'_, F> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: F) -> Var<'_, F> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Reverse pass from a scalar (single-element) `loss`.
    pub fn backward(&self, loss: Var<'_, F>) -> Grads<F> {
        let nodes = self.nodes.borrow();
        assert_eq!(
            nodes[loss.id].value.len(),
            1,
            "backward requires a single-element loss"
        );
        let mut grads: Vec<Option<ArrayD<F>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(ArrayD::from_elem(nodes[loss.id].value.raw_dim(), F::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Grads { grads }
    }
}

fn accumulate<F: Real>(slot: &mut Option<ArrayD<F>>, g: ArrayD<F>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            match (da, db) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => panic!("shapes {a:?} and {b:?} do not broadcast"),
            }
        })
        .collect()
}

/// Sums `grad` down to `shape`, undoing broadcasting.
fn unbroadcast<F: Real>(grad: ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    if grad.shape() == shape {
        return grad;
    }
    let mut g = grad;
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, &dim) in shape.iter().enumerate() {
        if dim == 1 && g.shape()[axis] != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g
}

/// Copies a standard-layout array into a new shape with the same length.
fn reshaped<F: Real>(a: &ArrayD<F>, shape: &[usize]) -> ArrayD<F> {
    let data = match a.as_slice() {
        Some(s) => s.to_vec(),
        None => a.iter().copied().collect(),
    };
    ArrayD::from_shape_vec(IxDyn(shape), data)
        .unwrap_or_else(|_| panic!("cannot reshape {:?} to {:?}", a.shape(), shape))
}

/// `f` applied elementwise under broadcasting, walking the output one
/// last-axis row at a time.
fn zip_broadcast<F: Real>(a: &ArrayD<F>, b: &ArrayD<F>, f: impl Fn(F, F) -> F) -> ArrayD<F> {
    if a.shape() == b.shape() {
        if let (Some(x), Some(y)) = (a.as_slice(), b.as_slice()) {
            let data = x.iter().zip(y).map(|(&x, &y)| f(x, y)).collect();
            return ArrayD::from_shape_vec(a.raw_dim(), data).expect("same shape");
        }
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let (Some(xs), Some(ys)) = (a.as_slice(), b.as_slice()) else {
        let av = a.broadcast(IxDyn(&shape)).unwrap();
        let bv = b.broadcast(IxDyn(&shape)).unwrap();
        return Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y));
    };
    let nd = shape.len();
    let strides = |s: &[usize]| {
        let pad = nd - s.len();
        let mut out = vec![0usize; nd];
        let mut acc = 1;
        for i in (0..s.len()).rev() {
            out[pad + i] = if s[i] == 1 { 0 } else { acc };
            acc *= s[i];
        }
        out
    };
    let (sa, sb) = (strides(a.shape()), strides(b.shape()));
    let total: usize = shape.iter().product();
    let mut data = Vec::with_capacity(total);
    if nd == 0 {
        data.push(f(xs[0], ys[0]));
        return ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap();
    }
    let n = shape[nd - 1];
    let (ia, ib) = (sa[nd - 1], sb[nd - 1]);
    let mut idx = vec![0usize; nd - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    if n > 0 {
        for _ in 0..total / n {
            match (ia, ib) {
                (1, 1) => data.extend(xs[oa..oa + n].iter().zip(&ys[ob..ob + n]).map(|(&x, &y)| f(x, y))),
                (1, 0) => data.extend(xs[oa..oa + n].iter().map(|&x| f(x, ys[ob]))),
                (0, 1) => data.extend(ys[ob..ob + n].iter().map(|&y| f(xs[oa], y))),
                _ => data.extend((0..n).map(|_| f(xs[oa], ys[ob]))),
            }
            // Advance the outer odometer.
            for d in (0..nd - 1).rev() {
                idx[d] += 1;
                oa += sa[d];
                ob += sb[d];
                if idx[d] < shape[d] {
                    break;
                }
                oa -= sa[d] * idx[d];
                ob -= sb[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data).unwrap()
}

/// Splits a shape around `axis` into `(pre, n, post)`.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn mix_forward<F: Real>(x: &ArrayD<F>, m: &ArrayD<F>, axis: usize) -> ArrayD<F> {
    let (pre, n_in, post) = around(x.shape(), axis);
    let m2 = as2(m);
    assert_eq!(m2.ncols(), n_in, "mixing matrix {:?} on axis of {n_in}", m.shape());
    let n_out = m2.nrows();
    let xv = ArrayView3::from_shape((pre, n_in, post), x.as_slice().expect("standard layout")).unwrap();
    let mut out = Array3::<F>::zeros((pre, n_out, post));
    for p in 0..pre {
        let mut o = out.index_axis_mut(Axis(0), p);
        general_mat_mul(F::one(), &m2, &xv.index_axis(Axis(0), p), F::zero(), &mut o);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = n_out;
    out.into_shape_with_order(IxDyn(&shape)).unwrap()
}

/// Views a standard-layout array as `(rows, last)`.
fn rows_view<F: Real>(a: &ArrayD<F>) -> ArrayView2<'_, F> {
    let last = *a.shape().last().expect("linear on a scalar");
    ArrayView2::from_shape((a.len() / last.max(1), last), a.as_slice().expect("standard layout")).unwrap()
}

fn linear_forward<F: Real>(x: &ArrayD<F>, w: &ArrayD<F>, b: Option<&ArrayD<F>>) -> ArrayD<F> {
    let xv = rows_view(x);
    let w2 = as2(w);
    assert_eq!(xv.ncols(), w2.nrows(), "linear {:?} x {:?}", x.shape(), w.shape());
    let mut out = match b {
        Some(b) => {
            let b = b.view().into_shape_with_order(w2.ncols()).expect("bias is (out,)");
            b.broadcast((xv.nrows(), w2.ncols())).unwrap().to_owned()
        }
        None => ndarray::Array2::zeros((xv.nrows(), w2.ncols())),
    };
    let beta = if b.is_some() { F::one() } else { F::zero() };
    general_mat_mul(F::one(), &xv, &w2, beta, &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = w2.ncols();
    out.into_shape_with_order(IxDyn(&shape)).unwrap()
}

fn matmul2<F: Real>(a: ArrayView2<F>, b: ArrayView2<F>) -> ArrayD<F> {
    a.dot(&b).into_dyn()
}

fn as2<'a, F: Real>(a: &'a ArrayD<F>) -> ArrayView2<'a, F> {
    a.view()
        .into_dimensionality::<Ix2>()
        .expect("expected a 2-D array")
}

fn bmm<F: Real>(a: ArrayViewD<F>, b: ArrayViewD<F>, trans_a: bool, trans_b: bool) -> ArrayD<F> {
    let a = a.into_dimensionality::<Ix3>().expect("expected a 3-D array");
    let b = b.into_dimensionality::<Ix3>().expect("expected a 3-D array");
    let batch = a.shape()[0];
    assert_eq!(batch, b.shape()[0], "batch dimension mismatch");
    let m = if trans_a { a.shape()[2] } else { a.shape()[1] };
    let n = if trans_b { b.shape()[1] } else { b.shape()[2] };
    let mut out = ndarray::Array3::<F>::zeros((batch, m, n));
    for i in 0..batch {
        let ai = a.index_axis(Axis(0), i);
        let bi = b.index_axis(Axis(0), i);
        let ai = if trans_a { ai.reversed_axes() } else { ai };
        let bi = if trans_b { bi.reversed_axes() } else { bi };
        let mut oi = out.index_axis_mut(Axis(0), i);
        general_mat_mul(F::one(), &ai, &bi, F::zero(), &mut oi);
    }
    out.into_dyn()
}

fn backprop_node<F: Real>(
    nodes: &[Node<F>],
    id: usize,
    g: &ArrayD<F>,
    grads: &mut [Option<ArrayD<F>>],
) {
    let val = |i: usize| &nodes[i].value;
    let want = |i: usize| nodes[i].needs_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if want(*a) {
                accumulate(&mut grads[*a], unbroadcast(g.clone(), val(*a).shape()));
            }
            if want(*b) {
                accumulate(&mut grads[*b], unbroadcast(g.clone(), val(*b).shape()));
            }
        }
        Op::Sub(a, b) => {
            if want(*a) {
                accumulate(&mut grads[*a], unbroadcast(g.clone(), val(*a).shape()));
            }
            if want(*b) {
                accumulate(&mut grads[*b], unbroadcast(g.mapv(|x| -x), val(*b).shape()));
            }
        }
        Op::Mul(a, b) => {
            if want(*a) {
                let ga = g * val(*b);
                accumulate(&mut grads[*a], unbroadcast(ga, val(*a).shape()));
            }
            if want(*b) {
                let gb = g * val(*a);
                accumulate(&mut grads[*b], unbroadcast(gb, val(*b).shape()));
            }
        }
        Op::Neg(a) => accumulate(&mut grads[*a], g.mapv(|x| -x)),
        Op::Scale(a, c) => {
            let c = *c;
            accumulate(&mut grads[*a], g.mapv(|x| x * c));
        }
        Op::MatMul(a, b) => {
            let g2 = as2(g);
            if want(*a) {
                accumulate(&mut grads[*a], matmul2(g2, as2(val(*b)).t()));
            }
            if want(*b) {
                accumulate(&mut grads[*b], matmul2(as2(val(*a)).t(), g2));
            }
        }
        Op::BatchMatMul(a, b) => {
            if want(*a) {
                accumulate(&mut grads[*a], bmm(g.view(), val(*b).view(), false, true));
            }
            if want(*b) {
                accumulate(&mut grads[*b], bmm(val(*a).view(), g.view(), true, false));
            }
        }
        Op::Relu(a) => {
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                if x <= F::zero() {
                    *d = F::zero();
                }
            });
            accumulate(&mut grads[*a], ga);
        }
        Op::LeakyRelu(a, slope) => {
            let slope = *slope;
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                if x <= F::zero() {
                    *d *= slope;
                }
            });
            accumulate(&mut grads[*a], ga);
        }
        Op::Square(a) => {
            let two = F::cast(2.0);
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| *d *= two * x);
            accumulate(&mut grads[*a], ga);
        }
        Op::SmoothL1(a) => {
            let mut ga = g.clone();
            Zip::from(&mut ga).and(val(*a)).for_each(|d, &x| {
                *d *= if x.abs() < F::one() { x } else { x.signum() };
            });
            accumulate(&mut grads[*a], ga);
        }
        Op::SumAll(a) => {
            let gv = *g.iter().next().expect("scalar gradient");
            accumulate(&mut grads[*a], ArrayD::from_elem(val(*a).raw_dim(), gv));
        }
        Op::SumAxis(a, axis) => {
            let shape = val(*a).raw_dim();
            let ga = g
                .view()
                .insert_axis(Axis(*axis))
                .broadcast(shape)
                .expect("sum_axis broadcast")
                .to_owned();
            accumulate(&mut grads[*a], ga);
        }
        Op::Reshape(a) => {
            accumulate(&mut grads[*a], reshaped(g, val(*a).shape()));
        }
        Op::Permute(a, axes) => {
            let mut inverse = vec![0; axes.len()];
            for (i, &ax) in axes.iter().enumerate() {
                inverse[ax] = i;
            }
            let ga = g
                .view()
                .permuted_axes(IxDyn(&inverse))
                .as_standard_layout()
                .into_owned();
            accumulate(&mut grads[*a], ga);
        }
        Op::Linear(x, w, b) => {
            let g = g.as_standard_layout().into_owned();
            let gv = rows_view(&g);
            if want(*x) {
                let gx = gv.dot(&as2(val(*w)).t());
                accumulate(&mut grads[*x], reshaped(&gx.into_dyn(), val(*x).shape()));
            }
            if want(*w) {
                accumulate(&mut grads[*w], rows_view(val(*x)).t().dot(&gv).into_dyn());
            }
            if let Some(b) = b {
                if want(*b) {
                    let gb = gv.sum_axis(Axis(0));
                    accumulate(&mut grads[*b], gb.into_shape_with_order(val(*b).raw_dim()).unwrap());
                }
            }
        }
        Op::MixAxis(x, m, axis) => {
            let xs = val(*x);
            let m2 = as2(val(*m));
            let (pre, n_in, post) = around(xs.shape(), *axis);
            let n_out = m2.nrows();
            let g = g.as_standard_layout();
            let gv = ArrayView3::from_shape((pre, n_out, post), g.as_slice().unwrap()).unwrap();
            let xv = ArrayView3::from_shape((pre, n_in, post), xs.as_slice().unwrap()).unwrap();
            if want(*x) {
                let mut gx = Array3::<F>::zeros((pre, n_in, post));
                for p in 0..pre {
                    let mut o = gx.index_axis_mut(Axis(0), p);
                    general_mat_mul(F::one(), &m2.t(), &gv.index_axis(Axis(0), p), F::zero(), &mut o);
                }
                accumulate(&mut grads[*x], gx.into_shape_with_order(xs.raw_dim()).unwrap());
            }
            if want(*m) {
                let mut gm = ndarray::Array2::<F>::zeros((n_out, n_in));
                for p in 0..pre {
                    general_mat_mul(
                        F::one(),
                        &gv.index_axis(Axis(0), p),
                        &xv.index_axis(Axis(0), p).t(),
                        F::one(),
                        &mut gm,
                    );
                }
                accumulate(&mut grads[*m], gm.into_dyn());
            }
        }
        Op::Narrow(a, axis, start) => {
            let mut ga = ArrayD::zeros(val(*a).raw_dim());
            let len = g.shape()[*axis];
            ga.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len))
                .assign(g);
            accumulate(&mut grads[*a], ga);
        }
        Op::Concat(parts, axis) => {
            let mut offset = 0;
            for &p in parts {
                let len = val(p).shape()[*axis];
                if want(p) {
                    let gp = g
                        .slice_axis(Axis(*axis), Slice::from(offset..offset + len))
                        .to_owned();
                    accumulate(&mut grads[p], gp);
                }
                offset += len;
            }
        }
        Op::MaskedSoftmax(a) => {
            // dx = y * (dy - sum(dy * y)) along the last axis.
            let y = &nodes[id].value;
            let last = Axis(y.ndim() - 1);
            let dot = (g * y).sum_axis(last).insert_axis(last);
            let ga = y * &(g - &dot);
            accumulate(&mut grads[*a], ga);
        }
        Op::LogSoftmax(a) => {
            let y = &nodes[id].value;
            let last = Axis(y.ndim() - 1);
            let total = g.sum_axis(last).insert_axis(last);
            let ga = g - &(y.mapv(|v| v.exp()) * &total);
            accumulate(&mut grads[*a], ga);
        }
        Op::NormLast(a) => {
            let x = val(*a);
            let n = &nodes[id].value;
            let last = Axis(x.ndim() - 1);
            let scale = Zip::from(g)
                .and(n)
                .map_collect(|&gi, &ni| if ni > F::zero() { gi / ni } else { F::zero() })
                .insert_axis(last);
            accumulate(&mut grads[*a], x * &scale);
        }
    }
}

impl<'g, F: Real> Var<'g, F> {
    pub fn graph(&self) -> &'g Graph<F> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, ArrayD<F>> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_array(&self) -> ArrayD<F> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> F {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a {:?} array", v.shape());
        *v.iter().next().unwrap()
    }

    fn unary(self, op: Op<F>, f: impl FnOnce(&ArrayD<F>) -> ArrayD<F>) -> Var<'g, F> {
        let value = f(&self.value());
        self.graph.push(value, op, self.graph.needs(self.id))
    }

    fn binary(
        self,
        other: Var<'g, F>,
        op: Op<F>,
        f: impl FnOnce(&ArrayD<F>, &ArrayD<F>) -> ArrayD<F>,
    ) -> Var<'g, F> {
        assert!(std::ptr::eq(self.graph, other.graph), "vars from different graphs");
        let value = {
            let a = self.value();
            let b = other.value();
            f(&a, &b)
        };
        let needs = self.graph.needs(self.id) || self.graph.needs(other.id);
        self.graph.push(value, op, needs)
    }

    fn elementwise(
        self,
        other: Var<'g, F>,
        op: Op<F>,
        f: impl Fn(F, F) -> F,
    ) -> Var<'g, F> {
        self.binary(other, op, |a, b| zip_broadcast(a, b, f))
    }

    pub fn add(self, other: Var<'g, F>) -> Var<'g, F> {
        self.elementwise(other, Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(self, other: Var<'g, F>) -> Var<'g, F> {
        self.elementwise(other, Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.elementwise(other, Op::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn neg(self) -> Var<'g, F> {
        self.unary(Op::Neg(self.id), |a| a.mapv(|x| -x))
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        self.unary(Op::Scale(self.id, c), |a| a.mapv(|x| x * c))
    }

    /// 2-D matrix product `(m, k) x (k, n)`.
    pub fn matmul(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, Op::MatMul(self.id, other.id), |a, b| {
            assert_eq!(
                a.shape()[1],
                b.shape()[0],
                "matmul inner dimensions {:?} x {:?}",
                a.shape(),
                b.shape()
            );
            matmul2(as2(a), as2(b))
        })
    }

    /// Batched product `(b, m, k) x (b, k, n)`.
    pub fn bmm(self, other: Var<'g, F>) -> Var<'g, F> {
        self.binary(other, Op::BatchMatMul(self.id, other.id), |a, b| {
            bmm(a.view(), b.view(), false, false)
        })
    }

    pub fn relu(self) -> Var<'g, F> {
        self.unary(Op::Relu(self.id), |a| {
            a.mapv(|x| if x > F::zero() { x } else { F::zero() })
        })
    }

    pub fn leaky_relu(self, slope: F) -> Var<'g, F> {
        self.unary(Op::LeakyRelu(self.id, slope), |a| {
            a.mapv(|x| if x > F::zero() { x } else { x * slope })
        })
    }

    pub fn square(self) -> Var<'g, F> {
        self.unary(Op::Square(self.id), |a| a.mapv(|x| x * x))
    }

    /// Elementwise Huber transform with knee at 1:
    /// `0.5 x^2` for `|x| < 1`, `|x| - 0.5` otherwise.
    pub fn smooth_l1(self) -> Var<'g, F> {
        self.unary(Op::SmoothL1(self.id), |a| a.mapv(smooth_l1))
    }

    pub fn sum(self) -> Var<'g, F> {
        self.unary(Op::SumAll(self.id), |a| {
            ArrayD::from_elem(IxDyn(&[]), a.sum())
        })
    }

    pub fn mean(self) -> Var<'g, F> {
        let n = F::cast(self.value().len() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(self, axis: usize) -> Var<'g, F> {
        self.unary(Op::SumAxis(self.id, axis), |a| a.sum_axis(Axis(axis)))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'g, F> {
        self.unary(Op::Reshape(self.id), |a| reshaped(a, shape))
    }

    pub fn permute(self, axes: &[usize]) -> Var<'g, F> {
        self.unary(Op::Permute(self.id, axes.to_vec()), |a| {
            a.view()
                .permuted_axes(IxDyn(axes))
                .as_standard_layout()
                .into_owned()
        })
    }

    /// Transpose of a 2-D var.
    pub fn t(self) -> Var<'g, F> {
        self.permute(&[1, 0])
    }

    /// Slice `len` entries of `axis` starting at `start`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Var<'g, F> {
        self.unary(Op::Narrow(self.id, axis, start), |a| {
            a.slice_axis(Axis(axis), Slice::from(start..start + len))
                .to_owned()
        })
    }

    pub fn concat(parts: &[Var<'g, F>], axis: usize) -> Var<'g, F> {
        assert!(!parts.is_empty(), "concat of nothing");
        let graph = parts[0].graph;
        let value = {
            let refs: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let views: Vec<_> = refs.iter().map(|r| r.view()).collect();
            concatenate(Axis(axis), &views).expect("concat shapes")
        };
        let needs = parts.iter().any(|p| graph.needs(p.id));
        graph.push(
            value,
            Op::Concat(parts.iter().map(|p| p.id).collect(), axis),
            needs,
        )
    }

    /// Softmax along the last axis restricted to entries where `mask` is
    /// nonzero; masked entries come out exactly zero. `mask` must broadcast
    /// to the var's shape.
    pub fn masked_softmax(self, mask: &ArrayD<F>) -> Var<'g, F> {
        self.unary(Op::MaskedSoftmax(self.id), |a| {
            let mask = mask
                .broadcast(a.raw_dim())
                .expect("mask does not broadcast to logits");
            let mut out = ArrayD::zeros(a.raw_dim());
            let last = Axis(a.ndim() - 1);
            for ((x, m), mut y) in a
                .lanes(last)
                .into_iter()
                .zip(mask.lanes(last))
                .zip(out.lanes_mut(last))
            {
                let mut top = F::neg_infinity();
                for (&xi, &mi) in x.iter().zip(m.iter()) {
                    if mi != F::zero() && xi > top {
                        top = xi;
                    }
                }
                if top == F::neg_infinity() {
                    continue;
                }
                let mut total = F::zero();
                for ((yi, &xi), &mi) in y.iter_mut().zip(x.iter()).zip(m.iter()) {
                    if mi != F::zero() {
                        *yi = (xi - top).exp();
                        total += *yi;
                    }
                }
                y.mapv_inplace(|v| v / total);
            }
            out
        })
    }

    pub fn log_softmax(self) -> Var<'g, F> {
        self.unary(Op::LogSoftmax(self.id), |a| {
            let mut out = a.clone();
            let last = Axis(a.ndim() - 1);
            for mut lane in out.lanes_mut(last) {
                let top = lane.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                let lse = lane.iter().map(|&v| (v - top).exp()).sum::<F>().ln() + top;
                lane.mapv_inplace(|v| v - lse);
            }
            out
        })
    }

    /// Euclidean norm over the last axis. The gradient at a zero vector is
    /// taken as zero.
    pub fn norm_last(self) -> Var<'g, F> {
        self.unary(Op::NormLast(self.id), |a| {
            a.map_axis(Axis(a.ndim() - 1), |lane| {
                lane.iter().map(|&v| v * v).sum::<F>().sqrt()
            })
        })
    }

    /// `x . w + b` over the last axis of `x`, for `w` of shape `(in, out)`
    /// and `b` of shape `(out,)`.
    pub fn linear(self, w: Var<'g, F>, b: Option<Var<'g, F>>) -> Var<'g, F> {
        let graph = self.graph;
        let value = {
            let (x, wv) = (self.value(), w.value());
            let bv = b.map(|b| b.value());
            linear_forward(&x, &wv, bv.as_deref())
        };
        let needs = graph.needs(self.id) || graph.needs(w.id) || b.is_some_and(|b| graph.needs(b.id));
        graph.push(value, Op::Linear(self.id, w.id, b.map(|b| b.id)), needs)
    }

    /// Applies `m` (shape `(n_out, n_in)`) along `axis`:
    /// `y[.., i, ..] = sum_j m[i, j] x[.., j, ..]`.
    pub fn mix_axis(self, m: Var<'g, F>, axis: usize) -> Var<'g, F> {
        self.binary(m, Op::MixAxis(self.id, m.id, axis), |x, m| mix_forward(x, m, axis))
    }
}

/// Scalar Huber transform with knee at 1.
pub fn smooth_l1<F: Real>(x: F) -> F {
    let a = x.abs();
    if a < F::one() {
        F::cast(0.5) * x * x
    } else {
        a - F::cast(0.5)
    }
}

impl<'g, F: Real> std::ops::Add for Var<'g, F> {
    type Output = Var<'g, F>;
    fn add(self, rhs: Self) -> Self::Output {
        Var::add(self, rhs)
    }
}

impl<'g, F: Real> std::ops::Sub for Var<'g, F> {
    type Output = Var<'g, F>;
    fn sub(self, rhs: Self) -> Self::Output {
        Var::sub(self, rhs)
    }
}

impl<'g, F: Real> std::ops::Mul for Var<'g, F> {
    type Output = Var<'g, F>;
    fn mul(self, rhs: Self) -> Self::Output {
        Var::mul(self, rhs)
    }
}

impl<'g, F: Real> std::ops::Neg for Var<'g, F> {
    type Output = Var<'g, F>;
    fn neg(self) -> Self::Output {
        Var::neg(self)
    }
}
