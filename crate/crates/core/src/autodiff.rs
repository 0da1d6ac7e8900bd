//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! The op set is exactly what the graph-attention classifier needs: dense
//! algebra, row gather/scatter over edge lists, per-head attention dot
//! products, segment softmax, batch normalization and log-softmax.

use std::rc::Rc;

use ndarray::{Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// x (n x d) + b (1 x d)
    AddRow(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    Gather(Var, Rc<Vec<usize>>),
    ScatterAdd(Var, Rc<Vec<usize>>),
    /// Multiply row i by a constant w_i.
    RowScale(Var, Rc<Vec<f64>>),
    /// x (E x H*C), a (1 x H*C) -> E x H, per-head dot products.
    HeadDot(Var, Var, usize),
    /// alpha (E x H), x (E x H*C) -> E x H*C, head-wise broadcast product.
    HeadMul(Var, Var),
    SegmentSoftmax(Var, Rc<Vec<usize>>, usize),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
    },
    /// Affine normalization with fixed statistics.
    BatchNormFixed {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Array1<f64>,
        inv_std: Array1<f64>,
    },
    LogSoftmax(Var),
    /// Σ_k w_k x[r_k, c_k] -> 1 x 1
    PickSum(Var, Rc<Vec<(usize, usize, f64)>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every tape entry.
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    /// Zero-filled when `v` does not influence the root.
    pub fn get(&self, tape: &Tape, v: Var) -> Array2<f64> {
        self.0[v.0]
            .clone()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()))
    }

    pub fn take(&mut self, tape: &Tape, v: Var) -> Array2<f64> {
        self.0[v.0]
            .take()
            .unwrap_or_else(|| Array2::zeros(tape.value(v).raw_dim()))
    }
}

fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(s) => *s += &g,
        None => *slot = Some(g),
    }
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        assert_eq!(self.value(b).nrows(), 1, "bias must be a single row");
        let v = self.value(x) + self.value(b);
        self.push(v, Op::AddRow(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape());
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let v = self.value(x) * s;
        self.push(v, Op::Scale(x, s))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).mapv(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu(x, slope))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn gather(&mut self, x: Var, rows: Rc<Vec<usize>>) -> Var {
        let v = self.value(x).select(Axis(0), &rows);
        self.push(v, Op::Gather(x, rows))
    }

    /// Row i of `x` is added into row `dst[i]` of an `n`-row output.
    pub fn scatter_add(&mut self, x: Var, dst: Rc<Vec<usize>>, n: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.nrows(), dst.len());
        let mut out = Array2::zeros((n, xv.ncols()));
        for (i, &d) in dst.iter().enumerate() {
            let mut row = out.row_mut(d);
            row += &xv.row(i);
        }
        self.push(out, Op::ScatterAdd(x, dst))
    }

    pub fn row_scale(&mut self, x: Var, w: Rc<Vec<f64>>) -> Var {
        let mut v = self.value(x).clone();
        assert_eq!(v.nrows(), w.len());
        for (mut row, s) in v.rows_mut().into_iter().zip(w.iter()) {
            row *= *s;
        }
        self.push(v, Op::RowScale(x, w))
    }

    pub fn head_dot(&mut self, x: Var, a: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let av = self.value(a);
        let c = xv.ncols() / heads;
        assert_eq!(xv.ncols(), av.ncols());
        let mut out = Array2::zeros((xv.nrows(), heads));
        for (e, row) in xv.rows().into_iter().enumerate() {
            for h in 0..heads {
                let mut s = 0.0;
                for k in h * c..(h + 1) * c {
                    s += row[k] * av[[0, k]];
                }
                out[[e, h]] = s;
            }
        }
        self.push(out, Op::HeadDot(x, a, heads))
    }

    pub fn head_mul(&mut self, alpha: Var, x: Var) -> Var {
        let av = self.value(alpha);
        let xv = self.value(x);
        let heads = av.ncols();
        let c = xv.ncols() / heads;
        let mut out = xv.clone();
        for (e, mut row) in out.rows_mut().into_iter().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= av[[e, k / c]];
            }
        }
        self.push(out, Op::HeadMul(alpha, x))
    }

    /// Column-wise softmax within groups of rows sharing a segment id.
    pub fn segment_softmax(&mut self, x: Var, seg: Rc<Vec<usize>>, nseg: usize) -> Var {
        let xv = self.value(x);
        let cols = xv.ncols();
        let mut max = Array2::from_elem((nseg, cols), f64::NEG_INFINITY);
        for (i, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                max[[s, c]] = max[[s, c]].max(xv[[i, c]]);
            }
        }
        let mut out = Array2::zeros(xv.raw_dim());
        let mut sum = Array2::<f64>::zeros((nseg, cols));
        for (i, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let e = (xv[[i, c]] - max[[s, c]]).exp();
                out[[i, c]] = e;
                sum[[s, c]] += e;
            }
        }
        for (i, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                out[[i, c]] /= sum[[s, c]];
            }
        }
        self.push(out, Op::SegmentSoftmax(x, seg, nseg))
    }

    /// Batch normalization with batch statistics (biased variance).
    /// Returns the output and the batch mean/variance for running updates.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Array1<f64>, Array1<f64>) {
        let xv = self.value(x);
        let n = xv.nrows() as f64;
        let mean = xv.sum_axis(Axis(0)) / n;
        let centered = xv - &mean;
        let var = centered.mapv(|a| a * a).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let out = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        let v = self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        );
        (v, mean, var)
    }

    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let out = (self.value(x) - mean) * &inv_std * &self.value(gamma).row(0)
            + &self.value(beta).row(0);
        self.push(
            out,
            Op::BatchNormFixed {
                x,
                gamma,
                beta,
                mean: mean.clone(),
                inv_std,
            },
        )
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let lse = m + row.mapv(|a| (a - m).exp()).sum().ln();
            row -= lse;
        }
        self.push(v, Op::LogSoftmax(x))
    }

    pub fn pick_sum(&mut self, x: Var, picks: Rc<Vec<(usize, usize, f64)>>) -> Var {
        let xv = self.value(x);
        let s: f64 = picks.iter().map(|&(r, c, w)| w * xv[[r, c]]).sum();
        self.push(Array2::from_elem((1, 1), s), Op::PickSum(x, picks))
    }

    /// Reverse sweep from a 1 x 1 root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "root must be a scalar");
        let mut g: Vec<Option<Array2<f64>>> = vec![None; root.0 + 1];
        g[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => g[i] = Some(dy),
                Op::MatMul(a, b) => {
                    let ga = dy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&dy);
                    acc(&mut g[a.0], ga);
                    acc(&mut g[b.0], gb);
                }
                Op::AddRow(x, b) => {
                    acc(&mut g[b.0], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut g[x.0], dy);
                }
                Op::Add(a, b) => {
                    acc(&mut g[a.0], dy.clone());
                    acc(&mut g[b.0], dy);
                }
                Op::Scale(x, s) => acc(&mut g[x.0], dy * *s),
                Op::LeakyRelu(x, slope) => {
                    let mut d = dy;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &a| {
                        if a <= 0.0 {
                            *d *= slope;
                        }
                    });
                    acc(&mut g[x.0], d);
                }
                Op::Gather(x, rows) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &dy.row(i);
                    }
                    acc(&mut g[x.0], d);
                }
                Op::ScatterAdd(x, dst) => acc(&mut g[x.0], dy.select(Axis(0), dst)),
                Op::RowScale(x, w) => {
                    let mut d = dy;
                    for (mut row, s) in d.rows_mut().into_iter().zip(w.iter()) {
                        row *= *s;
                    }
                    acc(&mut g[x.0], d);
                }
                Op::HeadDot(x, a, heads) => {
                    let xv = self.value(*x);
                    let av = self.value(*a);
                    let c = xv.ncols() / heads;
                    let mut gx = Array2::zeros(xv.raw_dim());
                    let mut ga = Array2::zeros(av.raw_dim());
                    for e in 0..xv.nrows() {
                        for k in 0..xv.ncols() {
                            let d = dy[[e, k / c]];
                            gx[[e, k]] = d * av[[0, k]];
                            ga[[0, k]] += d * xv[[e, k]];
                        }
                    }
                    acc(&mut g[x.0], gx);
                    acc(&mut g[a.0], ga);
                }
                Op::HeadMul(alpha, x) => {
                    let av = self.value(*alpha);
                    let xv = self.value(*x);
                    let c = xv.ncols() / av.ncols();
                    let mut galpha = Array2::zeros(av.raw_dim());
                    let mut gx = Array2::zeros(xv.raw_dim());
                    for e in 0..xv.nrows() {
                        for k in 0..xv.ncols() {
                            let h = k / c;
                            galpha[[e, h]] += dy[[e, k]] * xv[[e, k]];
                            gx[[e, k]] = dy[[e, k]] * av[[e, h]];
                        }
                    }
                    acc(&mut g[alpha.0], galpha);
                    acc(&mut g[x.0], gx);
                }
                Op::SegmentSoftmax(x, seg, nseg) => {
                    let y = &node.value;
                    let cols = y.ncols();
                    let mut dot = Array2::<f64>::zeros((*nseg, cols));
                    for (i, &s) in seg.iter().enumerate() {
                        for c in 0..cols {
                            dot[[s, c]] += y[[i, c]] * dy[[i, c]];
                        }
                    }
                    let mut d = Array2::zeros(y.raw_dim());
                    for (i, &s) in seg.iter().enumerate() {
                        for c in 0..cols {
                            d[[i, c]] = y[[i, c]] * (dy[[i, c]] - dot[[s, c]]);
                        }
                    }
                    acc(&mut g[x.0], d);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let n = xhat.nrows() as f64;
                    acc(&mut g[beta.0], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut g[gamma.0],
                        (&dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dxhat = &dy * &self.value(*gamma).row(0);
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                    let dx = (dxhat * n - &sum_d - xhat * &sum_dx) * inv_std / n;
                    acc(&mut g[x.0], dx);
                }
                Op::BatchNormFixed {
                    x,
                    gamma,
                    beta,
                    mean,
                    inv_std,
                } => {
                    let xhat = (self.value(*x) - mean) * inv_std;
                    acc(&mut g[beta.0], dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(
                        &mut g[gamma.0],
                        (&dy * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                    );
                    let dx = dy * &self.value(*gamma).row(0) * inv_std;
                    acc(&mut g[x.0], dx);
                }
                Op::LogSoftmax(x) => {
                    let p = node.value.mapv(f64::exp);
                    let s = dy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(&mut g[x.0], &dy - &(p * &s));
                }
                Op::PickSum(x, picks) => {
                    let mut d = Array2::zeros(self.value(*x).raw_dim());
                    let s = dy[[0, 0]];
                    for &(r, c, w) in picks.iter() {
                        d[[r, c]] += w * s;
                    }
                    acc(&mut g[x.0], d);
                }
            }
        }
        Gradients(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Central-difference check of d(root)/d(input k) for every input.
    fn check(inputs: Vec<Array2<f64>>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = f(&mut tape, &vars);
        let grads = tape.backward(root);
        let h = 1e-6;
        for (k, base) in inputs.iter().enumerate() {
            let analytic = grads.get(&tape, vars[k]);
            let mut numeric = Array2::zeros(base.raw_dim());
            for idx in 0..base.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, a)| {
                            let mut a = a.clone();
                            if j == k {
                                a.as_slice_mut().unwrap()[idx] += delta;
                            }
                            t.leaf(a)
                        })
                        .collect();
                    let r = f(&mut t, &vs);
                    t.value(r)[[0, 0]]
                };
                numeric.as_slice_mut().unwrap()[idx] = (eval(h) - eval(-h)) / (2.0 * h);
            }
            let diff = (&analytic - &numeric).mapv(|a| a * a).sum().sqrt();
            let scale = analytic
                .mapv(|a| a * a)
                .sum()
                .sqrt()
                .max(numeric.mapv(|a| a * a).sum().sqrt())
                .max(1e-12);
            assert!(diff / scale < 1e-6, "input {k}: rel err {}", diff / scale);
        }
    }

    fn sum_all(t: &mut Tape, x: Var) -> Var {
        let (r, c) = t.value(x).dim();
        let picks = (0..r).flat_map(|i| (0..c).map(move |j| (i, j, 1.0 + 0.1 * (i + j) as f64)));
        t.pick_sum(x, Rc::new(picks.collect()))
    }

    #[test]
    fn matmul_bias_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(
            vec![random(&mut rng, 3, 4), random(&mut rng, 4, 2), random(&mut rng, 1, 2)],
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let b = t.add_row(m, v[2]);
                let r = t.leaky_relu(b, 0.01);
                sum_all(t, r)
            },
        );
    }

    #[test]
    fn gather_scatter_rowscale() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![random(&mut rng, 3, 2)], |t, v| {
            let g = t.gather(v[0], Rc::new(vec![2, 0, 2, 1]));
            let s = t.scatter_add(g, Rc::new(vec![1, 1, 0, 2]), 3);
            let w = t.row_scale(s, Rc::new(vec![0.5, -2.0, 3.0]));
            let sc = t.scale(w, 1.5);
            let a = t.add(sc, v[0]);
            sum_all(t, a)
        });
    }

    #[test]
    fn attention_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        check(vec![random(&mut rng, 5, 6), random(&mut rng, 1, 6)], |t, v| {
            let logits = t.head_dot(v[0], v[1], 2);
            let act = t.leaky_relu(logits, 0.2);
            let alpha = t.segment_softmax(act, Rc::new(vec![0, 1, 0, 0, 1]), 2);
            let m = t.head_mul(alpha, v[0]);
            sum_all(t, m)
        });
    }

    #[test]
    fn batch_norm_both_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check(
            vec![random(&mut rng, 4, 3), random(&mut rng, 1, 3), random(&mut rng, 1, 3)],
            |t, v| {
                let (y, _, _) = t.batch_norm(v[0], v[1], v[2], 1e-5);
                let sq = t.leaky_relu(y, 0.3);
                sum_all(t, sq)
            },
        );
        check(
            vec![random(&mut rng, 4, 3), random(&mut rng, 1, 3), random(&mut rng, 1, 3)],
            |t, v| {
                let y = t.batch_norm_fixed(v[0], v[1], v[2], &array![0.1, -0.2, 0.3], &array![1.0, 2.0, 0.5], 1e-5);
                sum_all(t, y)
            },
        );
    }

    #[test]
    fn log_softmax_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 3, 4);
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let y = t.log_softmax(v);
        for row in t.value(y).rows() {
            assert!((row.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
        }
        check(vec![x], |t, v| {
            let y = t.log_softmax(v[0]);
            t.pick_sum(y, Rc::new(vec![(0, 1, -1.0), (2, 3, 0.5)]))
        });
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]]);
        let b = t.leaf(array![[3.0]]);
        let r = t.pick_sum(a, Rc::new(vec![(0, 1, 2.0)]));
        let g = t.backward(r);
        assert_eq!(g.get(&t, a), array![[0.0, 2.0]]);
        assert_eq!(g.get(&t, b), array![[0.0]]);
    }
}
