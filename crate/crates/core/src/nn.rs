//! Layers, parameter bookkeeping, initialization, Adam, and weight hashing.
//!
//! Models are plain structs of `ndarray` tensors. Before a forward pass the
//! tensors are bound onto a [`Tape`](crate::autodiff::Tape) through a
//! [`Binder`], which records `(name, Var)` pairs so gradients can be routed
//! back to the right tensor by name.

use crate::autodiff::{Tape, Var};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// Records leaves inserted for model parameters during one forward pass.
pub struct Binder<'a> {
    pub tape: &'a mut Tape,
    bound: Vec<(String, Var)>,
    trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(tape: &'a mut Tape, trainable: bool) -> Self {
        Self {
            tape,
            bound: Vec::new(),
            trainable,
        }
    }

    pub fn bind(&mut self, name: &str, tensor: &ArrayD<f64>) -> Var {
        let trainable = self.trainable;
        self.bind_as(name, tensor, trainable)
    }

    /// Bind with explicit trainability (for mixed frozen/trainable models).
    pub fn bind_as(&mut self, name: &str, tensor: &ArrayD<f64>, trainable: bool) -> Var {
        let v = if trainable {
            self.tape.leaf(tensor.clone())
        } else {
            self.tape.constant(tensor.clone())
        };
        if trainable {
            self.bound.push((name.to_string(), v));
        }
        v
    }

    /// Change the default trainability for subsequent binds.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.trainable = trainable;
    }

    /// Names and vars of the trainable leaves bound so far.
    pub fn into_bound(self) -> Vec<(String, Var)> {
        self.bound
    }
}

/// Visitor over named parameter tensors in a fixed, stable order.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &ArrayD<f64>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut ArrayD<f64>));

    fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

/// SHA-256 over names, shapes, and little-endian tensor bytes.
pub fn weight_hash(params: &dyn Params) -> String {
    let mut hasher = Sha256::new();
    params.visit(&mut |name, t| {
        hasher.update(name.as_bytes());
        hasher.update((t.ndim() as u64).to_le_bytes());
        for &d in t.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for &x in t.iter() {
            hasher.update(x.to_le_bytes());
        }
    });
    hex_string(&hasher.finalize())
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> ArrayD<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut t = ArrayD::zeros(IxDyn(&[rows, cols]));
    for x in t.iter_mut() {
        *x = rng.gen_range(-bound..bound);
    }
    t
}

/// Dense layer; weight is `(in, out)`, bias `(1, out)`.
pub struct Linear {
    pub w: ArrayD<f64>,
    pub b: Option<ArrayD<f64>>,
}

pub struct LinearVars {
    pub w: Var,
    pub b: Option<Var>,
}

impl Linear {
    pub fn new(rng: &mut impl Rng, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            w: xavier(rng, in_dim, out_dim),
            b: bias.then(|| ArrayD::zeros(IxDyn(&[1, out_dim]))),
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> LinearVars {
        LinearVars {
            w: b.bind(&format!("{prefix}.w"), &self.w),
            b: self.b.as_ref().map(|t| b.bind(&format!("{prefix}.b"), t)),
        }
    }

    pub fn apply(t: &mut Tape, vars: &LinearVars, x: Var) -> Var {
        let h = t.matmul(x, vars.w);
        match vars.b {
            Some(b) => t.badd(h, b),
            None => h,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        f(&format!("{prefix}.w"), &self.w);
        if let Some(b) = &self.b {
            f(&format!("{prefix}.b"), b);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        f(&format!("{prefix}.w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&format!("{prefix}.b"), b);
        }
    }
}

/// Single-layer LSTM. Gate order in the fused weight is [i, f, g, o];
/// forget-gate bias starts at 1.
pub struct Lstm {
    pub w_x: ArrayD<f64>,
    pub w_h: ArrayD<f64>,
    pub b: ArrayD<f64>,
    pub hidden: usize,
}

pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(rng: &mut impl Rng, in_dim: usize, hidden: usize) -> Self {
        let mut b = ArrayD::zeros(IxDyn(&[1, 4 * hidden]));
        for j in hidden..2 * hidden {
            b[[0, j]] = 1.0;
        }
        Self {
            w_x: xavier(rng, in_dim, 4 * hidden),
            w_h: xavier(rng, hidden, 4 * hidden),
            b,
            hidden,
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> LstmVars {
        LstmVars {
            w_x: b.bind(&format!("{prefix}.w_x"), &self.w_x),
            w_h: b.bind(&format!("{prefix}.w_h"), &self.w_h),
            b: b.bind(&format!("{prefix}.b"), &self.b),
            hidden: self.hidden,
        }
    }

    pub fn step(t: &mut Tape, vars: &LstmVars, x: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = vars.hidden;
        let xg = t.matmul(x, vars.w_x);
        let hg = t.matmul(h, vars.w_h);
        let s = t.add(xg, hg);
        let gates = t.badd(s, vars.b);
        let i_pre = t.slice(gates, 1, 0, hd);
        let f_pre = t.slice(gates, 1, hd, 2 * hd);
        let g_pre = t.slice(gates, 1, 2 * hd, 3 * hd);
        let o_pre = t.slice(gates, 1, 3 * hd, 4 * hd);
        let i = t.sigmoid(i_pre);
        let f = t.sigmoid(f_pre);
        let g = t.tanh(g_pre);
        let o = t.sigmoid(o_pre);
        let fc = t.mul(f, c);
        let ig = t.mul(i, g);
        let c_new = t.add(fc, ig);
        let tc = t.tanh(c_new);
        let h_new = t.mul(o, tc);
        (h_new, c_new)
    }

    /// Run over a step sequence from state `(h0, c0)`, returning hidden per step.
    pub fn run(t: &mut Tape, vars: &LstmVars, xs: &[Var], h0: Var, c0: Var) -> Vec<Var> {
        let mut h = h0;
        let mut c = c0;
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (nh, nc) = Self::step(t, vars, x, h, c);
            h = nh;
            c = nc;
            out.push(h);
        }
        out
    }

    pub fn zero_state(t: &mut Tape, batch: usize, hidden: usize) -> (Var, Var) {
        let z = t.constant(ArrayD::zeros(IxDyn(&[batch, hidden])));
        (z, z)
    }

    pub fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &ArrayD<f64>)) {
        f(&format!("{prefix}.w_x"), &self.w_x);
        f(&format!("{prefix}.w_h"), &self.w_h);
        f(&format!("{prefix}.b"), &self.b);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut ArrayD<f64>)) {
        f(&format!("{prefix}.w_x"), &mut self.w_x);
        f(&format!("{prefix}.w_h"), &mut self.w_h);
        f(&format!("{prefix}.b"), &mut self.b);
    }
}

/// Extract gradient values for bound parameters after a `grad` call.
pub fn gradient_map(tape: &mut Tape, loss: Var, bound: &[(String, Var)]) -> HashMap<String, ArrayD<f64>> {
    let vars: Vec<Var> = bound.iter().map(|(_, v)| *v).collect();
    let grads = tape.grad(loss, &vars);
    bound
        .iter()
        .zip(grads)
        .map(|((name, _), g)| (name.clone(), tape.value(g)))
        .collect()
}

/// Adam with optional global-norm gradient clipping.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    m: HashMap<String, ArrayD<f64>>,
    v: HashMap<String, ArrayD<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, clip_norm: Option<f64>) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            clip_norm,
            m: HashMap::new(),
            v: HashMap::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut dyn Params, grads: &HashMap<String, ArrayD<f64>>) {
        self.t += 1;
        let mut scale = 1.0;
        if let Some(max_norm) = self.clip_norm {
            // fixed summation order: map iteration order is not deterministic
            let mut keys: Vec<&String> = grads.keys().collect();
            keys.sort();
            let mut sq = 0.0;
            for k in keys {
                sq += grads[k].iter().map(|x| x * x).sum::<f64>();
            }
            let norm = sq.sqrt();
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        let (b1, b2, eps, lr, t) = (self.beta1, self.beta2, self.eps, self.lr, self.t);
        let bc1 = 1.0 - b1.powi(t as i32);
        let bc2 = 1.0 - b2.powi(t as i32);
        params.visit_mut(&mut |name, w| {
            let Some(g) = grads.get(name) else { return };
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(w.raw_dim()));
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(w.raw_dim()));
            for ((wi, gi), (mi, vi)) in w
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let gs = gi * scale;
                *mi = b1 * *mi + (1.0 - b1) * gs;
                *vi = b2 * *vi + (1.0 - b2) * gs * gs;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi -= lr * mhat / (vhat.sqrt() + eps);
            }
        });
    }
}

/// Draw a standard-normal tensor scaled to variance `var`.
pub fn normal_noise(rng: &mut impl Rng, shape: &[usize], var: f64) -> ArrayD<f64> {
    let dist = Normal::new(0.0, var.sqrt()).expect("variance must be positive");
    let mut t = ArrayD::zeros(IxDyn(shape));
    for x in t.iter_mut() {
        *x = dist.sample(rng);
    }
    t
}
