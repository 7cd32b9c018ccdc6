//! Reverse-mode differentiation over dense batch matrices.
//!
//! A [`Tape`] records one forward evaluation. Every value is an `Array2`;
//! scalars are `1 x 1`. Parameters enter through [`Tape::param`], which
//! remembers where they live in the flat parameter vector so that
//! [`Tape::backward`] can scatter their gradients back.

use ndarray::{Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRow(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<f64>,
        inv_std: Array1<f64>,
        train: bool,
    },
    Relu(Var),
    RowDot(Var, Array2<f64>),
    Add(Var, Var),
    Sub(Var, Var),
    BroadcastRows(Var),
    MaxConst(Var, Array2<f64>),
    MseConst(Var, Array2<f64>),
    Variance(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics produced by a training-mode normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, usize)>,
}

fn col_sums(a: &Array2<f64>) -> Array2<f64> {
    a.sum_axis(Axis(0)).insert_axis(Axis(0))
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

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    /// Data that no gradient flows into.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not part of the flat parameter vector.
    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `rows x cols` parameter block read row-major from `data[offset..]`.
    pub fn param(&mut self, data: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let value = Array2::from_shape_vec((rows, cols), data[offset..offset + rows * cols].to_vec())
            .expect("parameter block shape");
        let v = self.variable(value);
        self.params.push((v, offset));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Adds the `1 x n` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let value = self.value(a) + self.value(r);
        let ng = self.needs(a) || self.needs(r);
        self.push(value, Op::AddRow(a, r), ng)
    }

    /// Normalization with batch statistics; returns the statistics for the
    /// running averages.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> (Var, BatchStats) {
        let xv = self.value(x);
        let (rows, cols) = xv.dim();
        let xs = xv.as_slice().expect("standard layout");
        let mut mean = Array1::<f64>::zeros(cols);
        let mut var = Array1::<f64>::zeros(cols);
        {
            let (m, v) = (mean.as_slice_mut().unwrap(), var.as_slice_mut().unwrap());
            for row in xs.chunks_exact(cols) {
                for (m, &x) in m.iter_mut().zip(row) {
                    *m += x;
                }
            }
            m.iter_mut().for_each(|m| *m /= rows as f64);
            for row in xs.chunks_exact(cols) {
                for ((v, &x), &m) in v.iter_mut().zip(row).zip(m.iter()) {
                    *v += (x - m) * (x - m);
                }
            }
            v.iter_mut().for_each(|v| *v /= rows as f64);
        }
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut xhat = Array2::<f64>::zeros((rows, cols));
        let mut y = Array2::<f64>::zeros((rows, cols));
        {
            let g = self.value(gamma).as_slice().unwrap();
            let b = self.value(beta).as_slice().unwrap();
            let (m, is) = (mean.as_slice().unwrap(), inv_std.as_slice().unwrap());
            let xh = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for ((xr, hr), yr) in xs
                .chunks_exact(cols)
                .zip(xh.chunks_exact_mut(cols))
                .zip(ys.chunks_exact_mut(cols))
            {
                for j in 0..cols {
                    let h = (xr[j] - m[j]) * is[j];
                    hr[j] = h;
                    yr[j] = h * g[j] + b[j];
                }
            }
        }
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let v = self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: true,
            },
            ng,
        );
        (v, BatchStats { mean, var })
    }

    /// Normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &Array1<f64>,
        var: &Array1<f64>,
        eps: f64,
    ) -> Var {
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = (self.value(x) - mean) * &inv_std;
        let y = &xhat * &self.value(gamma).row(0) + &self.value(beta).row(0);
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: false,
            },
            ng,
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row-wise dot product with a constant matrix of the same shape: `S x 1`.
    pub fn row_dot(&mut self, a: Var, c: Array2<f64>) -> Var {
        let value = (self.value(a) * &c).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.needs(a);
        self.push(value, Op::RowDot(a, c), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let r = self.value(a);
        assert_eq!(r.nrows(), 1, "broadcast_rows needs a single row");
        let value = r.broadcast((rows, r.ncols())).unwrap().to_owned();
        let ng = self.needs(a);
        self.push(value, Op::BroadcastRows(a), ng)
    }

    /// Elementwise `max(a, c)`; ties route the gradient to `a`.
    pub fn max_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        let mut value = self.value(a).clone();
        Zip::from(&mut value).and(&c).for_each(|v, &c| {
            if c > *v {
                *v = c
            }
        });
        let ng = self.needs(a);
        self.push(value, Op::MaxConst(a, c), ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse_const(&mut self, a: Var, target: Array2<f64>) -> Var {
        let d = self.value(a) - &target;
        let value = Array2::from_elem((1, 1), d.mapv(|x| x * x).mean().unwrap());
        let ng = self.needs(a);
        self.push(value, Op::MseConst(a, target), ng)
    }

    /// Population variance over all elements.
    pub fn variance(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.mean().unwrap();
        let value = Array2::from_elem((1, 1), v.mapv(|x| (x - m) * (x - m)).mean().unwrap());
        let ng = self.needs(a);
        self.push(value, Op::Variance(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).mean().unwrap());
        let ng = self.needs(a);
        self.push(value, Op::Mean(a), ng)
    }

    /// Reverse sweep from the scalar `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Array2::ones(self.value(out).raw_dim()));
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |v: Var, d: Array2<f64>| {
                if !self.needs(v) {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.needs(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, r) => {
                    if self.needs(*r) {
                        acc(*r, col_sums(&g));
                    }
                    acc(*a, g);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    train,
                } => {
                    let (rows, cols) = g.dim();
                    let gs = g.as_slice().expect("standard layout");
                    let hs = xhat.as_slice().expect("standard layout");
                    let mut dgamma = Array2::<f64>::zeros((1, cols));
                    let mut dbeta = Array2::<f64>::zeros((1, cols));
                    {
                        let (dg, db) = (dgamma.as_slice_mut().unwrap(), dbeta.as_slice_mut().unwrap());
                        for (gr, hr) in gs.chunks_exact(cols).zip(hs.chunks_exact(cols)) {
                            for j in 0..cols {
                                dg[j] += gr[j] * hr[j];
                                db[j] += gr[j];
                            }
                        }
                    }
                    if self.needs(*x) {
                        let gam = self.value(*gamma).as_slice().unwrap();
                        let is = inv_std.as_slice().unwrap();
                        let mut dx = Array2::<f64>::zeros((rows, cols));
                        let out = dx.as_slice_mut().unwrap();
                        if *train {
                            // dxhat = g gamma; its column sums follow from dbeta, dgamma
                            let s = rows as f64;
                            let coef: Vec<f64> = (0..cols).map(|j| gam[j] * is[j] / s).collect();
                            for ((o, gr), hr) in
                                out.chunks_exact_mut(cols).zip(gs.chunks_exact(cols)).zip(hs.chunks_exact(cols))
                            {
                                for j in 0..cols {
                                    o[j] = coef[j] * (s * gr[j] - dbeta[[0, j]] - hr[j] * dgamma[[0, j]]);
                                }
                            }
                        } else {
                            for (o, gr) in out.chunks_exact_mut(cols).zip(gs.chunks_exact(cols)) {
                                for j in 0..cols {
                                    o[j] = gr[j] * gam[j] * is[j];
                                }
                            }
                        }
                        acc(*x, dx);
                    }
                    if self.needs(*gamma) {
                        acc(*gamma, dgamma);
                    }
                    if self.needs(*beta) {
                        acc(*beta, dbeta);
                    }
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*a, d);
                }
                Op::RowDot(a, c) => acc(*a, c * &g),
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::BroadcastRows(a) => acc(*a, col_sums(&g)),
                Op::MaxConst(a, c) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(self.value(*a))
                        .and(c)
                        .for_each(|d, &a, &c| {
                            if c > a {
                                *d = 0.0
                            }
                        });
                    acc(*a, d);
                }
                Op::MseConst(a, target) => {
                    let av = self.value(*a);
                    let scale = 2.0 * g[[0, 0]] / av.len() as f64;
                    acc(*a, (av - target) * scale);
                }
                Op::Variance(a) => {
                    let av = self.value(*a);
                    let m = av.mean().unwrap();
                    let scale = 2.0 * g[[0, 0]] / av.len() as f64;
                    acc(*a, av.mapv(|x| (x - m) * scale));
                }
                Op::Mean(a) => {
                    let av = self.value(*a);
                    acc(*a, Array2::from_elem(av.raw_dim(), g[[0, 0]] / av.len() as f64));
                }
            }
        }
        Gradients { grads }
    }

    /// Adds every parameter gradient into the flat vector `out`.
    pub fn scatter_param_grads(&self, grads: &Gradients, out: &mut [f64]) {
        for &(v, offset) in &self.params {
            if let Some(g) = grads.get(v) {
                for (o, x) in out[offset..offset + g.len()].iter_mut().zip(g.iter()) {
                    *o += x;
                }
            }
        }
    }
}

/// Gradients of the leaves after a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}
