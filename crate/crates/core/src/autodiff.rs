//! Tape-based reverse-mode automatic differentiation over `ndarray` tensors.
//!
//! Values are computed eagerly as nodes are pushed onto a [`Tape`]. Calling
//! [`Tape::grad`] appends the backward pass to the same tape as ordinary ops,
//! so gradients are themselves differentiable — second-order terms such as a
//! gradient penalty fall out of a second `grad` call.
//!
//! Elementwise binary ops require equal shapes; broadcasting is explicit via
//! [`Tape::broadcast_to`]. All tensors are `f64`.

use ndarray::{concatenate, ArrayD, Axis, IxDyn, Slice};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Recip(Var),
    Softplus(Var),
    Sqrt(Var),
    Scale(Var, f64),
    AddScalar(Var),
    SumAll(Var),
    SumAxis(Var, usize),
    BroadcastTo(Var),
    Slice {
        src: Var,
        axis: usize,
        start: usize,
    },
    PadSlice {
        src: Var,
        axis: usize,
        start: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Reshape(Var),
    Detach,
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
    grad: bool,
}

/// Growable op arena; dropped wholesale after each forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, grad: bool) -> Var {
        assert!(self.nodes.len() < u32::MAX as usize, "tape overflow");
        self.nodes.push(Node { op, value, grad });
        Var(self.nodes.len() as u32 - 1)
    }

    fn val(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.idx()].value
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.idx()].grad
    }

    /// Value of a node, cloned out of the tape.
    pub fn value(&self, v: Var) -> ArrayD<f64> {
        self.val(v).clone()
    }

    /// Scalar value of a 0-d or single-element node.
    pub fn scalar_value(&self, v: Var) -> f64 {
        let a = self.val(v);
        assert_eq!(a.len(), 1, "scalar_value on non-scalar node");
        *a.iter().next().unwrap()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.val(v).shape().to_vec()
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Differentiable leaf (model parameter or input to differentiate wrt).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn scalar(&mut self, c: f64) -> Var {
        self.constant(ArrayD::from_elem(IxDyn(&[]), c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "add shape mismatch");
        let value = self.val(a) + self.val(b);
        let grad = self.requires(a) || self.requires(b);
        self.push(Op::Add(a, b), value, grad)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "sub shape mismatch");
        let value = self.val(a) - self.val(b);
        let grad = self.requires(a) || self.requires(b);
        self.push(Op::Sub(a, b), value, grad)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.val(a).shape(), self.val(b).shape(), "mul shape mismatch");
        let value = self.val(a) * self.val(b);
        let grad = self.requires(a) || self.requires(b);
        self.push(Op::Mul(a, b), value, grad)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let value = -self.val(a);
        let grad = self.requires(a);
        self.push(Op::Neg(a), value, grad)
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.val(a).view().into_dimensionality::<ndarray::Ix2>().expect("matmul lhs not 2-d");
        let bv = self.val(b).view().into_dimensionality::<ndarray::Ix2>().expect("matmul rhs not 2-d");
        assert_eq!(av.shape()[1], bv.shape()[0], "matmul inner dim mismatch");
        let value = av.dot(&bv).into_dyn();
        let grad = self.requires(a) || self.requires(b);
        self.push(Op::MatMul(a, b), value, grad)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.val(a).t().to_owned();
        let grad = self.requires(a);
        self.push(Op::Transpose(a), value, grad)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(stable_sigmoid);
        let grad = self.requires(a);
        self.push(Op::Sigmoid(a), value, grad)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::tanh);
        let grad = self.requires(a);
        self.push(Op::Tanh(a), value, grad)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::exp);
        let grad = self.requires(a);
        self.push(Op::Exp(a), value, grad)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::ln);
        let grad = self.requires(a);
        self.push(Op::Ln(a), value, grad)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::recip);
        let grad = self.requires(a);
        self.push(Op::Recip(a), value, grad)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(stable_softplus);
        let grad = self.requires(a);
        self.push(Op::Softplus(a), value, grad)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.val(a).mapv(f64::sqrt);
        let grad = self.requires(a);
        self.push(Op::Sqrt(a), value, grad)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a) * c;
        let grad = self.requires(a);
        self.push(Op::Scale(a, c), value, grad)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.val(a) + c;
        let grad = self.requires(a);
        self.push(Op::AddScalar(a), value, grad)
    }

    /// Sum of all elements; result is 0-d.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = ArrayD::from_elem(IxDyn(&[]), self.val(a).sum());
        let grad = self.requires(a);
        self.push(Op::SumAll(a), value, grad)
    }

    /// Sum over one axis, dropping it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let value = self.val(a).sum_axis(Axis(axis));
        let grad = self.requires(a);
        self.push(Op::SumAxis(a, axis), value, grad)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.val(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// NumPy-style broadcast (right-aligned, size-1 axes expand).
    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .val(a)
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {:?}", self.val(a).shape(), shape))
            .to_owned();
        let grad = self.requires(a);
        self.push(Op::BroadcastTo(a), value, grad)
    }

    /// `a + b` with `b` broadcast to `a`'s shape.
    pub fn badd(&mut self, a: Var, b: Var) -> Var {
        let shape = self.shape(a);
        let bb = self.broadcast_to(b, &shape);
        self.add(a, bb)
    }

    pub fn slice(&mut self, src: Var, axis: usize, start: usize, end: usize) -> Var {
        let value = self
            .val(src)
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        let grad = self.requires(src);
        let _ = end;
        self.push(Op::Slice { src, axis, start }, value, grad)
    }

    /// Embed `src` into zeros along `axis`, occupying `[start, start+len)` of
    /// an axis of size `full`. Adjoint of [`Tape::slice`].
    pub fn pad_slice(&mut self, src: Var, axis: usize, start: usize, full: usize) -> Var {
        let mut shape = self.shape(src);
        let len = shape[axis];
        assert!(start + len <= full, "pad_slice out of range");
        shape[axis] = full;
        let mut value = ArrayD::zeros(IxDyn(&shape));
        value
            .slice_axis_mut(Axis(axis), Slice::from(start..start + len))
            .assign(self.val(src));
        let grad = self.requires(src);
        self.push(Op::PadSlice { src, axis, start }, value, grad)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&p| self.val(p).view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let grad = parts.iter().any(|&p| self.requires(p));
        self.push(
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            value,
            grad,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let value = self
            .val(a)
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape size mismatch");
        let grad = self.requires(a);
        self.push(Op::Reshape(a), value, grad)
    }

    /// Same value, gradient stopped.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let _ = a;
        self.push(Op::Detach, value, false)
    }

    fn accumulate(&mut self, adjoints: &mut [Option<Var>], target: Var, contrib: Var) {
        adjoints[target.idx()] = Some(match adjoints[target.idx()] {
            Some(existing) => self.add(existing, contrib),
            None => contrib,
        });
    }

    /// Gradient of scalar `output` with respect to each of `wrt`.
    ///
    /// The backward pass is appended to the tape, so the returned nodes can be
    /// used in further computation and differentiated again. Vars in `wrt`
    /// that `output` does not depend on get a zeros node of their shape.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Vec<Var> {
        assert_eq!(self.val(output).len(), 1, "grad output must be scalar");
        let n = output.idx() + 1;
        let mut adjoints: Vec<Option<Var>> = vec![None; n];
        let seed_shape = self.shape(output);
        let seed = self.constant(ArrayD::from_elem(IxDyn(&seed_shape), 1.0));
        adjoints[output.idx()] = Some(seed);

        for i in (0..n).rev() {
            let g = match adjoints[i] {
                Some(g) if self.nodes[i].grad => g,
                _ => continue,
            };
            let op = self.nodes[i].op.clone();
            let out = Var(i as u32);
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if self.requires(a) {
                        self.accumulate(&mut adjoints, a, g);
                    }
                    if self.requires(b) {
                        self.accumulate(&mut adjoints, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.requires(a) {
                        self.accumulate(&mut adjoints, a, g);
                    }
                    if self.requires(b) {
                        let ng = self.neg(g);
                        self.accumulate(&mut adjoints, b, ng);
                    }
                }
                Op::Mul(a, b) => {
                    if self.requires(a) {
                        let c = self.mul(g, b);
                        self.accumulate(&mut adjoints, a, c);
                    }
                    if self.requires(b) {
                        let c = self.mul(g, a);
                        self.accumulate(&mut adjoints, b, c);
                    }
                }
                Op::Neg(a) => {
                    if self.requires(a) {
                        let c = self.neg(g);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::MatMul(a, b) => {
                    if self.requires(a) {
                        let bt = self.transpose(b);
                        let c = self.matmul(g, bt);
                        self.accumulate(&mut adjoints, a, c);
                    }
                    if self.requires(b) {
                        let at = self.transpose(a);
                        let c = self.matmul(at, g);
                        self.accumulate(&mut adjoints, b, c);
                    }
                }
                Op::Transpose(a) => {
                    if self.requires(a) {
                        let c = self.transpose(g);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Sigmoid(a) => {
                    if self.requires(a) {
                        // y * (1 - y)
                        let ny = self.neg(out);
                        let one_minus = self.add_scalar(ny, 1.0);
                        let dy = self.mul(out, one_minus);
                        let c = self.mul(g, dy);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Tanh(a) => {
                    if self.requires(a) {
                        let yy = self.mul(out, out);
                        let nyy = self.neg(yy);
                        let dy = self.add_scalar(nyy, 1.0);
                        let c = self.mul(g, dy);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Exp(a) => {
                    if self.requires(a) {
                        let c = self.mul(g, out);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Ln(a) => {
                    if self.requires(a) {
                        let r = self.recip(a);
                        let c = self.mul(g, r);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Recip(a) => {
                    if self.requires(a) {
                        let yy = self.mul(out, out);
                        let m = self.mul(g, yy);
                        let c = self.neg(m);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Softplus(a) => {
                    if self.requires(a) {
                        let s = self.sigmoid(a);
                        let c = self.mul(g, s);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Sqrt(a) => {
                    if self.requires(a) {
                        // 1 / (2 sqrt(a))
                        let r = self.recip(out);
                        let half = self.scale(r, 0.5);
                        let c = self.mul(g, half);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Scale(a, k) => {
                    if self.requires(a) {
                        let c = self.scale(g, k);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::AddScalar(a) => {
                    if self.requires(a) {
                        self.accumulate(&mut adjoints, a, g);
                    }
                }
                Op::SumAll(a) => {
                    if self.requires(a) {
                        let shape = self.shape(a);
                        let c = self.broadcast_to(g, &shape);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::SumAxis(a, axis) => {
                    if self.requires(a) {
                        let shape = self.shape(a);
                        let mut keep = shape.clone();
                        keep[axis] = 1;
                        let r = self.reshape(g, &keep);
                        let c = self.broadcast_to(r, &shape);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::BroadcastTo(a) => {
                    if self.requires(a) {
                        let in_shape = self.shape(a);
                        let out_shape = self.shape(out);
                        let extra = out_shape.len() - in_shape.len();
                        let mut cur = g;
                        for _ in 0..extra {
                            cur = self.sum_axis(cur, 0);
                        }
                        for (j, &d) in in_shape.iter().enumerate() {
                            if d == 1 && self.shape(cur)[j] != 1 {
                                let s = self.sum_axis(cur, j);
                                let mut keep = self.shape(s);
                                keep.insert(j, 1);
                                cur = self.reshape(s, &keep);
                            }
                        }
                        self.accumulate(&mut adjoints, a, cur);
                    }
                }
                Op::Slice { src, axis, start } => {
                    if self.requires(src) {
                        let full = self.shape(src)[axis];
                        let c = self.pad_slice(g, axis, start, full);
                        self.accumulate(&mut adjoints, src, c);
                    }
                }
                Op::PadSlice { src, axis, start } => {
                    if self.requires(src) {
                        let len = self.shape(src)[axis];
                        let c = self.slice(g, axis, start, start + len);
                        self.accumulate(&mut adjoints, src, c);
                    }
                }
                Op::Concat { ref parts, axis } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.shape(p)[axis];
                        if self.requires(p) {
                            let c = self.slice(g, axis, offset, offset + len);
                            self.accumulate(&mut adjoints, p, c);
                        }
                        offset += len;
                    }
                }
                Op::Reshape(a) => {
                    if self.requires(a) {
                        let shape = self.shape(a);
                        let c = self.reshape(g, &shape);
                        self.accumulate(&mut adjoints, a, c);
                    }
                }
                Op::Detach => {}
            }
        }

        wrt.iter()
            .map(|&w| match adjoints.get(w.idx()).copied().flatten() {
                Some(v) => v,
                None => {
                    let shape = self.shape(w);
                    self.constant(ArrayD::zeros(IxDyn(&shape)))
                }
            })
            .collect()
    }
}
