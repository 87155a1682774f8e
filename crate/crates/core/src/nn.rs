//! Parameter registry, layers, and the Adam optimizer.
//!
//! Models own a [`Params`] set. Each training step builds a fresh
//! [`Tape`](crate::autograd::Tape), binds the parameters onto it, runs the
//! forward pass through the layer helpers here, and hands the resulting
//! gradients to [`Adam::step`].

use crate::autograd::{Grads, Tape, Var};
use crate::math::Mat;
use rand::Rng;

/// Handle to one named tensor in a [`Params`] set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

struct Entry {
    name: String,
    value: Mat,
    adam_m: Mat,
    adam_v: Mat,
}

/// A named, ordered set of trainable tensors.
#[derive(Default)]
pub struct Params {
    entries: Vec<Entry>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter name {name}"
        );
        let (r, c) = value.shape();
        self.entries.push(Entry {
            name,
            value,
            adam_m: Mat::zeros(r, c),
            adam_v: Mat::zeros(r, c),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Mat {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|e| (e.name.as_str(), &e.value))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn values(&self) -> Vec<Mat> {
        self.entries.iter().map(|e| e.value.clone()).collect()
    }

    /// Overwrite all values in order; shapes must match.
    pub fn set_values(&mut self, values: &[Mat]) {
        assert_eq!(values.len(), self.entries.len());
        for (e, v) in self.entries.iter_mut().zip(values.iter()) {
            assert_eq!(e.value.shape(), v.shape(), "shape mismatch for {}", e.name);
            e.value = v.clone();
        }
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Put every parameter on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.entries.iter().map(|e| tape.input(e.value.clone())).collect(),
        }
    }
}

/// Tape bindings of a [`Params`] set, in registry order.
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Rebuild a binding from externally supplied vars (finite-difference
    /// harnesses bind bumped copies of the parameter values).
    pub fn from_vars(vars: &[Var]) -> Self {
        Bound {
            vars: vars.to_vec(),
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Uniform fan-in initialization: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform(rng: &mut impl Rng, rows: usize, cols: usize, fan_in: usize) -> Mat {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

/// Fully connected layer acting row-wise on `K x in` grids.
#[derive(Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let w = params.add(format!("{name}.w"), init_uniform(rng, in_dim, out_dim, in_dim));
        let b = params.add(format!("{name}.b"), Mat::zeros(1, out_dim));
        Linear { w, b }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Var {
        let y = t.matmul(x, p.var(self.w));
        t.add_bias(y, p.var(self.b))
    }
}

/// Stride-1, same-padding 1-D convolution over the row (time) axis.
#[derive(Clone, Copy)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd for same padding");
        let fan_in = in_ch * kernel;
        let w = params.add(
            format!("{name}.w"),
            init_uniform(rng, kernel * in_ch, out_ch, fan_in),
        );
        let b = params.add(format!("{name}.b"), Mat::zeros(1, out_ch));
        Conv1d { w, b, kernel }
    }

    pub fn forward(&self, t: &mut Tape, p: &Bound, x: Var) -> Var {
        let u = t.unfold(x, self.kernel);
        let y = t.matmul(u, p.var(self.w));
        t.add_bias(y, p.var(self.b))
    }
}

/// Gated recurrent cell (GRU).
#[derive(Clone, Copy)]
pub struct Gru {
    w_r: ParamId,
    u_r: ParamId,
    b_r: ParamId,
    w_z: ParamId,
    u_z: ParamId,
    b_z: ParamId,
    w_n: ParamId,
    u_n: ParamId,
    b_n: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new(
        params: &mut Params,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        hidden: usize,
    ) -> Self {
        let mut gate = |g: &str, is_w: bool| {
            let (rows, fan) = if is_w { (in_dim, in_dim) } else { (hidden, hidden) };
            params.add(
                format!("{name}.{g}"),
                init_uniform(rng, rows, hidden, fan),
            )
        };
        let w_r = gate("w_r", true);
        let u_r = gate("u_r", false);
        let w_z = gate("w_z", true);
        let u_z = gate("u_z", false);
        let w_n = gate("w_n", true);
        let u_n = gate("u_n", false);
        let b_r = params.add(format!("{name}.b_r"), Mat::zeros(1, hidden));
        let b_z = params.add(format!("{name}.b_z"), Mat::zeros(1, hidden));
        let b_n = params.add(format!("{name}.b_n"), Mat::zeros(1, hidden));
        Gru {
            w_r,
            u_r,
            b_r,
            w_z,
            u_z,
            b_z,
            w_n,
            u_n,
            b_n,
            hidden,
        }
    }

    /// One step: `x` is `1 x in`, `h` is `1 x hidden`.
    pub fn step(&self, t: &mut Tape, p: &Bound, x: Var, h: Var) -> Var {
        let gate = |t: &mut Tape, w: ParamId, u: ParamId, b: ParamId| {
            let xin = t.matmul(x, p.var(w));
            let hin = t.matmul(h, p.var(u));
            let s = t.add(xin, hin);
            t.add_bias(s, p.var(b))
        };
        let r = gate(t, self.w_r, self.u_r, self.b_r);
        let r = t.sigmoid(r);
        let z = gate(t, self.w_z, self.u_z, self.b_z);
        let z = t.sigmoid(z);

        let xn = t.matmul(x, p.var(self.w_n));
        let hn = t.matmul(h, p.var(self.u_n));
        let rh = t.mul(r, hn);
        let n = t.add(xn, rh);
        let n = t.add_bias(n, p.var(self.b_n));
        let n = t.tanh(n);

        // h' = (1 - z) * n + z * h
        let zn = t.mul(z, n);
        let zh = t.mul(z, h);
        let n_minus_zn = t.sub(n, zn);
        t.add(n_minus_zn, zh)
    }

    /// Run over all rows of `xs` (`K x in`), returning the `K x hidden`
    /// output grid and the last hidden state.
    pub fn forward_seq(&self, t: &mut Tape, p: &Bound, xs: Var, h0: Var) -> (Var, Var) {
        let k = t.value(xs).rows();
        let mut h = h0;
        let mut outs = Vec::with_capacity(k);
        for step in 0..k {
            let x = t.row(xs, step);
            h = self.step(t, p, x, h);
            outs.push(h);
        }
        (t.vcat(&outs), h)
    }
}

/// Adam with the usual bias correction.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
        }
    }

    /// Apply one update from the gradients bound via `bound`.
    pub fn step(&mut self, params: &mut Params, bound: &Bound, grads: &Grads) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for (i, entry) in params.entries.iter_mut().enumerate() {
            let g = grads.get(bound.vars[i]);
            for j in 0..entry.value.len() {
                let gj = g.as_slice()[j];
                let m = &mut entry.adam_m.as_mut_slice()[j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gj;
                let v = &mut entry.adam_v.as_mut_slice()[j];
                *v = self.beta2 * *v + (1.0 - self.beta2) * gj * gj;
                let m_hat = *m / b1t;
                let v_hat = *v / b2t;
                entry.value.as_mut_slice()[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Central finite-difference gradient check for model losses.
///
/// `leaves` are the tensors to differentiate against (typically
/// `params.values()` plus any inputs); `f` rebuilds the loss on a fresh tape
/// from bound vars. Returns the worst relative error; panics above `tol`.
pub fn finite_diff_check(
    leaves: &[Mat],
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    tol: f64,
    probe_stride: usize,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|m| tape.input(m.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut probe = 0usize;
    for (li, leaf) in leaves.iter().enumerate() {
        for idx in 0..leaf.len() {
            probe += 1;
            if probe_stride > 1 && probe % probe_stride != 0 {
                continue;
            }
            let eval = |delta: f64| {
                let mut bumped: Vec<Mat> = leaves.to_vec();
                bumped[li].as_mut_slice()[idx] += delta;
                let mut t = Tape::new();
                let vs: Vec<Var> = bumped.into_iter().map(|m| t.input(m)).collect();
                let l = f(&mut t, &vs);
                t.value(l).item()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let analytic = grads.get(vars[li]).as_slice()[idx];
            let denom = numeric.abs().max(analytic.abs()).max(1e-4);
            let rel = (numeric - analytic).abs() / denom;
            worst = worst.max(rel);
            assert!(
                rel < tol,
                "leaf {li} idx {idx}: analytic {analytic} vs numeric {numeric} (rel {rel})"
            );
        }
    }
    worst
}
