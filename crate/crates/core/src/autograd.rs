//! Minimal reverse-mode automatic differentiation over [`Mat`].
//!
//! A [`Tape`] records every forward operation together with a closure that
//! scatters the output gradient back to the operands. Calling
//! [`Tape::backward`] on a scalar loss replays the closures in reverse and
//! leaves `dLoss/dLeaf` in [`Tape::grad`] for every node.
//!
//! The engine is deliberately small: plain `f64`, no broadcasting beyond the
//! few shapes the models need, no graph reuse. Model code builds a fresh tape
//! per training step. Everything is sequential and allocation order is fixed,
//! so results are bit-reproducible.

use crate::math::Mat;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&[Mat], &mut [Mat])>;

#[derive(Default)]
pub struct Tape {
    values: Vec<Mat>,
    backs: Vec<Option<BackFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Insert a leaf. Leaves receive gradients but have no parents.
    pub fn input(&mut self, value: Mat) -> Var {
        self.values.push(value);
        self.backs.push(None);
        Var(self.values.len() - 1)
    }

    fn push(&mut self, value: Mat, back: BackFn) -> Var {
        self.values.push(value);
        self.backs.push(Some(back));
        Var(self.values.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.values[v.0]
    }

    /// Run the backward pass from a `1 x 1` loss node. Returns the gradient
    /// of every node; index with [`Var`] via [`Grads::get`].
    pub fn backward(&self, loss: Var) -> Grads {
        assert_eq!(
            self.values[loss.0].shape(),
            (1, 1),
            "backward() expects a scalar loss"
        );
        let mut grads: Vec<Mat> = self
            .values
            .iter()
            .map(|v| Mat::zeros(v.rows(), v.cols()))
            .collect();
        grads[loss.0] = Mat::scalar(1.0);
        for i in (0..=loss.0).rev() {
            if let Some(back) = &self.backs[i] {
                back(&self.values, &mut grads);
            }
        }
        Grads { grads }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].add(&self.values[b.0]);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                g[a.0].add_assign(&go);
                g[b.0].add_assign(&go);
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].sub(&self.values[b.0]);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                g[a.0].add_assign(&go);
                g[b.0].add_assign(&go.scale(-1.0));
            }),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].hadamard(&self.values[b.0]);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].hadamard(&v[b.0]);
                let gb = g[out].hadamard(&v[a.0]);
                g[a.0].add_assign(&ga);
                g[b.0].add_assign(&gb);
            }),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.values[a.0].scale(c);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let ga = g[out].scale(c);
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.values[a.0].map(|v| v + c);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                g[a.0].add_assign(&go);
            }),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.values[a.0].map(|v| if v >= 0.0 { v } else { slope * v });
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[a.0], |go, x| if x >= 0.0 { go } else { slope * go });
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(f64::tanh);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[out], |go, y| go * (1.0 - y * y));
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(|v| 1.0 / (1.0 + (-v).exp()));
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[out], |go, y| go * y * (1.0 - y));
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(f64::sqrt);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[out], |go, y| go / (2.0 * y));
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(|v| 1.0 / v);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[a.0], |go, x| -go / (x * x));
                g[a.0].add_assign(&ga);
            }),
        )
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value = self.values[a.0].map(f64::ln);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].zip_map(&v[a.0], |go, x| go / x);
                g[a.0].add_assign(&ga);
            }),
        )
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.values[a.0].matmul(&self.values[b.0]);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let ga = g[out].matmul_nt(&v[b.0]);
                let gb = v[a.0].matmul_tn(&g[out]);
                g[a.0].add_assign(&ga);
                g[b.0].add_assign(&gb);
            }),
        )
    }

    /// Add a `1 x d` bias row to every row of a `k x d` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = &self.values[bias.0];
        assert_eq!(b.rows(), 1, "bias must be a row vector");
        assert_eq!(b.cols(), self.values[a.0].cols(), "bias width mismatch");
        let value = {
            let x = &self.values[a.0];
            Mat::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) + b.get(0, c))
        };
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                g[a.0].add_assign(&go);
                let col_sum = {
                    let mut acc = Mat::zeros(1, go.cols());
                    for r in 0..go.rows() {
                        for c in 0..go.cols() {
                            acc.set(0, c, acc.get(0, c) + go.get(r, c));
                        }
                    }
                    acc
                };
                g[bias.0].add_assign(&col_sum);
            }),
        )
    }

    // ---- shape ----

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|p| &self.values[p.0]).collect();
        let value = Mat::hcat(&mats);
        let widths: Vec<usize> = mats.iter().map(|m| m.cols()).collect();
        let parts = parts.to_vec();
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(widths.iter()) {
                    let gp = Mat::from_fn(go.rows(), w, |r, c| go.get(r, offset + c));
                    g[p.0].add_assign(&gp);
                    offset += w;
                }
            }),
        )
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|p| &self.values[p.0]).collect();
        let value = Mat::vcat(&mats);
        let heights: Vec<usize> = mats.iter().map(|m| m.rows()).collect();
        let parts = parts.to_vec();
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                let mut offset = 0;
                for (p, &h) in parts.iter().zip(heights.iter()) {
                    let gp = Mat::from_fn(h, go.cols(), |r, c| go.get(offset + r, c));
                    g[p.0].add_assign(&gp);
                    offset += h;
                }
            }),
        )
    }

    /// Extract row `r` as a `1 x d` matrix.
    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let value = self.values[a.0].row_mat(r);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                for c in 0..go.cols() {
                    let cur = g[a.0].get(r, c);
                    g[a.0].set(r, c, cur + go.get(0, c));
                }
            }),
        )
    }

    pub fn repeat_rows(&mut self, a: Var, k: usize) -> Var {
        let value = self.values[a.0].repeat_rows(k);
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = &g[out];
                let mut acc = Mat::zeros(1, go.cols());
                for r in 0..go.rows() {
                    for c in 0..go.cols() {
                        acc.set(0, c, acc.get(0, c) + go.get(r, c));
                    }
                }
                g[a.0].add_assign(&acc);
            }),
        )
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.values[a.0].rows();
        let value = self.values[a.0].mean_rows();
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].scale(1.0 / n as f64);
                let spread = go.repeat_rows(n);
                g[a.0].add_assign(&spread);
            }),
        )
    }

    /// Zero-padded sliding-window unfold over rows: `K x C -> K x (k*C)`,
    /// the im2col step of a stride-1, same-padding 1-D convolution.
    pub fn unfold(&mut self, a: Var, kernel: usize) -> Var {
        assert!(kernel % 2 == 1, "unfold expects an odd kernel");
        let x = &self.values[a.0];
        let (rows, cols) = x.shape();
        let half = (kernel / 2) as isize;
        let value = Mat::from_fn(rows, kernel * cols, |r, c| {
            let tap = (c / cols) as isize - half;
            let src = r as isize + tap;
            if src < 0 || src >= rows as isize {
                0.0
            } else {
                x.get(src as usize, c % cols)
            }
        });
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                let ga = &mut g[a.0];
                for r in 0..rows {
                    for c in 0..kernel * cols {
                        let tap = (c / cols) as isize - half;
                        let src = r as isize + tap;
                        if src >= 0 && src < rows as isize {
                            let (sr, sc) = (src as usize, c % cols);
                            ga.set(sr, sc, ga.get(sr, sc) + go.get(r, c));
                        }
                    }
                }
            }),
        )
    }

    // ---- reductions ----

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.values[a.0].sum());
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let go = g[out].item();
                let (r, c) = v[a.0].shape();
                let spread = Mat::from_fn(r, c, |_, _| go);
                g[a.0].add_assign(&spread);
            }),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum of squared entries as a scalar.
    pub fn sq_norm(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.values[a.0].sq_norm());
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let go = g[out].item();
                let ga = v[a.0].scale(2.0 * go);
                g[a.0].add_assign(&ga);
            }),
        )
    }

    /// Mean squared error between two same-shape grids.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let n = self.values[d.0].len() as f64;
        let sq = self.sq_norm(d);
        self.scale(sq, 1.0 / n)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let mut value = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let s = crate::math::softmax(x.row(r));
            value.row_mut(r).copy_from_slice(&s);
        }
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let y = &v[out];
                let go = &g[out];
                let mut ga = Mat::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y
                        .row(r)
                        .iter()
                        .zip(go.row(r).iter())
                        .map(|(&yy, &gg)| yy * gg)
                        .sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (go.get(r, c) - dot));
                    }
                }
                g[a.0].add_assign(&ga);
            }),
        )
    }

    /// Row-wise log-sum-exp: `K x d -> K x 1`, numerically stable.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let value = Mat::from_fn(x.rows(), 1, |r, _| {
            let row = x.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
        });
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let x = &v[a.0];
                let lse = &v[out];
                let go = &g[out];
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        ga.set(r, c, go.get(r, 0) * (x.get(r, c) - lse.get(r, 0)).exp());
                    }
                }
                g[a.0].add_assign(&ga);
            }),
        )
    }

    /// Cut the graph: a fresh leaf holding a copy of the value.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.values[a.0].clone();
        self.input(value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.values[a.0].transpose();
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let ga = g[out].transpose();
                g[a.0].add_assign(&ga);
            }),
        )
    }

    /// Columns `lo..hi` of a grid.
    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let x = &self.values[a.0];
        assert!(lo < hi && hi <= x.cols(), "bad column range");
        let value = Mat::from_fn(x.rows(), hi - lo, |r, c| x.get(r, lo + c));
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                let ga = &mut g[a.0];
                for r in 0..go.rows() {
                    for c in 0..go.cols() {
                        ga.set(r, lo + c, ga.get(r, lo + c) + go.get(r, c));
                    }
                }
            }),
        )
    }

    /// Row-wise sum: `K x d -> K x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let x = &self.values[a.0];
        let value = Mat::from_fn(x.rows(), 1, |r, _| x.row(r).iter().sum());
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let go = &g[out];
                let (rows, cols) = v[a.0].shape();
                let spread = Mat::from_fn(rows, cols, |r, _| go.get(r, 0));
                g[a.0].add_assign(&spread);
            }),
        )
    }

    /// Normalize each row to unit length. Rows with norm below `eps` are
    /// mapped to zero and receive zero gradient (the cosine-similarity
    /// guard: a zero vector has similarity 0 to everything).
    pub fn normalize_rows(&mut self, a: Var, eps: f64) -> Var {
        let x = &self.values[a.0];
        let norms: Vec<f64> = (0..x.rows())
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Mat::from_fn(x.rows(), x.cols(), |r, c| {
            if norms[r] < eps {
                0.0
            } else {
                x.get(r, c) / norms[r]
            }
        });
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |v, g| {
                let y = &v[out];
                let go = &g[out];
                let x = &v[a.0];
                let mut ga = Mat::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm < eps {
                        continue;
                    }
                    let dot: f64 = go
                        .row(r)
                        .iter()
                        .zip(y.row(r).iter())
                        .map(|(&g1, &y1)| g1 * y1)
                        .sum();
                    for c in 0..x.cols() {
                        ga.set(r, c, (go.get(r, c) - dot * y.get(r, c)) / norm);
                    }
                }
                g[a.0].add_assign(&ga);
            }),
        )
    }

    /// Pick one entry per row: `out[r, 0] = a[r, cols[r]]`.
    pub fn select_per_row(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let x = &self.values[a.0];
        assert_eq!(cols.len(), x.rows());
        let value = Mat::from_fn(x.rows(), 1, |r, _| x.get(r, cols[r]));
        let out = self.values.len();
        self.push(
            value,
            Box::new(move |_, g| {
                let go = g[out].clone();
                let ga = &mut g[a.0];
                for (r, &c) in cols.iter().enumerate() {
                    ga.set(r, c, ga.get(r, c) + go.get(r, 0));
                }
            }),
        )
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads {
    grads: Vec<Mat>,
}

impl Grads {
    pub fn get(&self, v: Var) -> &Mat {
        &self.grads[v.0]
    }
}
