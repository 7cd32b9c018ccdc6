use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tape::{BatchStats, Tape, Var};
use crate::error::{Error, Result};

/// Momentum of the running normalization statistics.
pub const BN_MOMENTUM: f64 = 0.99;

/// Variance floor of the input normalization. Libor levels vary with
/// variances around 1e-6, so the usual 1e-3 would swamp the input layer.
pub const BN_EPS: f64 = 1e-12;

/// Variance floor of the hidden normalizations, whose inputs have unit-scale
/// variance. At `t_0` every path shares `L(0)` and each layer sees a zero
/// variance batch; a tiny floor there would amplify rounding in the backward
/// pass by `1 / sqrt(eps)` per layer.
pub const BN_EPS_HIDDEN: f64 = 1e-6;

/// Subnet shape: `d -> h -> h -> d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub input: usize,
    pub hidden: usize,
}

impl NetDims {
    /// Default sizing: hidden width `d + 10`.
    pub fn for_rates(d: usize) -> Self {
        Self {
            input: d,
            hidden: d + 10,
        }
    }

    /// Offsets of one subnet's tensors, in storage order:
    /// `gamma0, beta0, w1, gamma1, beta1, w2, gamma2, beta2, w3, b3`.
    fn blocks(&self) -> [(&'static str, usize, usize); 10] {
        let (d, h) = (self.input, self.hidden);
        [
            ("gamma0", 1, d),
            ("beta0", 1, d),
            ("w1", d, h),
            ("gamma1", 1, h),
            ("beta1", 1, h),
            ("w2", h, h),
            ("gamma2", 1, h),
            ("beta2", 1, h),
            ("w3", h, d),
            ("b3", 1, d),
        ]
    }

    pub fn subnet_len(&self) -> usize {
        self.blocks().iter().map(|(_, r, c)| r * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running mean/variance of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub initialized: bool,
}

impl RunningStats {
    fn new(n: usize) -> Self {
        Self {
            mean: Array1::zeros(n),
            var: Array1::ones(n),
            initialized: false,
        }
    }

    /// The first batch sets the statistics, later batches are averaged in with
    /// [`BN_MOMENTUM`].
    pub fn update(&mut self, batch: &BatchStats) {
        if self.initialized {
            self.mean = &self.mean * BN_MOMENTUM + &batch.mean * (1.0 - BN_MOMENTUM);
            self.var = &self.var * BN_MOMENTUM + &batch.var * (1.0 - BN_MOMENTUM);
        } else {
            self.mean = batch.mean.clone();
            self.var = batch.var.clone();
            self.initialized = true;
        }
    }
}

/// All trainable parameters of a solver, flattened.
///
/// Forward-solver sets start with the head `[u0, grad_u0[0..d]]`; subnets
/// follow, each laid out as in [`NetDims::subnet_len`]. Subnet `j` belongs to
/// grid step `first_step + j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub dims: NetDims,
    pub first_step: usize,
    pub n_subnets: usize,
    pub has_head: bool,
    pub data: Vec<f64>,
    pub running: Vec<[RunningStats; 3]>,
}

impl ParameterSet {
    pub fn zeros(dims: NetDims, first_step: usize, n_subnets: usize, has_head: bool) -> Self {
        let head = if has_head { 1 + dims.input } else { 0 };
        let mut p = Self {
            dims,
            first_step,
            n_subnets,
            has_head,
            data: vec![0.0; head + n_subnets * dims.subnet_len()],
            running: (0..n_subnets)
                .map(|_| {
                    [
                        RunningStats::new(dims.input),
                        RunningStats::new(dims.hidden),
                        RunningStats::new(dims.hidden),
                    ]
                })
                .collect(),
        };
        for j in 0..n_subnets {
            for name in ["gamma0", "gamma1", "gamma2"] {
                let (off, len) = p.block(j, name);
                p.data[off..off + len].iter_mut().for_each(|g| *g = 1.0);
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn head_len(&self) -> usize {
        if self.has_head {
            1 + self.dims.input
        } else {
            0
        }
    }

    pub fn u0(&self) -> Option<f64> {
        self.has_head.then(|| self.data[0])
    }

    pub fn grad_u0(&self) -> Option<&[f64]> {
        self.has_head.then(|| &self.data[1..1 + self.dims.input])
    }

    /// Offset and length of a named tensor of subnet `j`.
    pub fn block(&self, j: usize, name: &str) -> (usize, usize) {
        let mut off = self.head_len() + j * self.dims.subnet_len();
        for (n, r, c) in self.dims.blocks() {
            if n == name {
                return (off, r * c);
            }
            off += r * c;
        }
        panic!("unknown tensor {name}")
    }

    /// Subnet index for grid step `i`, if that step has one.
    pub fn subnet_for_step(&self, i: usize) -> Option<usize> {
        (i >= self.first_step && i < self.first_step + self.n_subnets).then(|| i - self.first_step)
    }

    /// Writes `subnet,tensor,row,col,value` rows; the head uses subnet `head`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "subnet,tensor,row,col,value")?;
        if self.has_head {
            writeln!(out, "head,u0,0,0,{:e}", self.data[0])?;
            for (c, v) in self.grad_u0().unwrap().iter().enumerate() {
                writeln!(out, "head,grad_u0,0,{c},{v:e}")?;
            }
        }
        for j in 0..self.n_subnets {
            for (name, _, cols) in self.dims.blocks() {
                let (off, len) = self.block(j, name);
                for (k, v) in self.data[off..off + len].iter().enumerate() {
                    writeln!(out, "{},{name},{},{},{v:e}", self.first_step + j, k / cols, k % cols)?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads values written by [`ParameterSet::write_csv`] into a set of the
    /// same shape.
    pub fn read_csv_into(&mut self, path: &Path) -> Result<()> {
        if !path.exists() {
            return Err(Error::FixtureMissing(path.to_path_buf()));
        }
        let mut reader = csv::Reader::from_path(path)?;
        let mut k = 0;
        for rec in reader.records() {
            let rec = rec?;
            let v: f64 = rec[4]
                .parse()
                .map_err(|_| Error::ConfigParse(format!("bad value {}", &rec[4])))?;
            if k >= self.data.len() {
                return Err(Error::ShapeMismatch {
                    expected: self.data.len().to_string(),
                    got: format!("more than {k}"),
                });
            }
            self.data[k] = v;
            k += 1;
        }
        if k != self.data.len() {
            return Err(Error::ShapeMismatch {
                expected: self.data.len().to_string(),
                got: k.to_string(),
            });
        }
        Ok(())
    }
}

/// Initial values of the forward-solver head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadInit {
    /// Pilot price estimate; `u0` is drawn from `[0.5 p, 1.5 p]`.
    pub pilot_price: f64,
    /// Rates that diffuse at time 0; the others get a zero initial gradient.
    pub alive: Vec<bool>,
}

/// Glorot-uniform hidden weights, output weights scaled by 0.1, unit
/// normalization scales and zero shifts and biases.
pub fn init_params(
    dims: NetDims,
    first_step: usize,
    n_subnets: usize,
    head: Option<&HeadInit>,
    rng: &mut ChaCha8Rng,
) -> ParameterSet {
    let mut p = ParameterSet::zeros(dims, first_step, n_subnets, head.is_some());
    if let Some(h) = head {
        let delta = if h.pilot_price.abs() > 0.0 { 0.5 * h.pilot_price.abs() } else { 1e-4 };
        p.data[0] = h.pilot_price + rng.random_range(-delta..=delta);
        for (n, alive) in h.alive.iter().enumerate().take(dims.input) {
            p.data[1 + n] = if *alive { rng.random_range(-0.1..=0.1) } else { 0.0 };
        }
    }
    for j in 0..n_subnets {
        for (name, rows, cols, scale) in [
            ("w1", dims.input, dims.hidden, 1.0),
            ("w2", dims.hidden, dims.hidden, 1.0),
            ("w3", dims.hidden, dims.input, 0.1),
        ] {
            let limit = glorot_limit(rows, cols);
            let (off, len) = p.block(j, name);
            for w in &mut p.data[off..off + len] {
                *w = scale * rng.random_range(-limit..=limit);
            }
        }
    }
    p
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Records subnet `j` applied to `x` on the tape. In training mode the batch
/// statistics of the three normalizations are returned.
pub fn subnet_forward(
    tape: &mut Tape,
    params: &ParameterSet,
    j: usize,
    x: Var,
    mode: BnMode,
) -> (Var, Option<[BatchStats; 3]>) {
    let d = params.dims;
    let p = |tape: &mut Tape, name: &str, rows: usize, cols: usize| {
        let (off, _) = params.block(j, name);
        tape.param(&params.data, off, rows, cols)
    };
    let mut stats = Vec::with_capacity(3);
    let mut norm = |tape: &mut Tape, x: Var, layer: usize, width: usize| {
        let gamma = p(tape, ["gamma0", "gamma1", "gamma2"][layer], 1, width);
        let beta = p(tape, ["beta0", "beta1", "beta2"][layer], 1, width);
        let eps = if layer == 0 { BN_EPS } else { BN_EPS_HIDDEN };
        match mode {
            BnMode::Train => {
                let (y, s) = tape.batch_norm_train(x, gamma, beta, eps);
                stats.push(s);
                y
            }
            BnMode::Eval => {
                let r = &params.running[j][layer];
                tape.batch_norm_eval(x, gamma, beta, &r.mean, &r.var, eps)
            }
        }
    };
    let h0 = norm(tape, x, 0, d.input);
    let w1 = p(tape, "w1", d.input, d.hidden);
    let a1 = tape.matmul(h0, w1);
    let h1 = norm(tape, a1, 1, d.hidden);
    let h1 = tape.relu(h1);
    let w2 = p(tape, "w2", d.hidden, d.hidden);
    let a2 = tape.matmul(h1, w2);
    let h2 = norm(tape, a2, 2, d.hidden);
    let h2 = tape.relu(h2);
    let w3 = p(tape, "w3", d.hidden, d.input);
    let b3 = p(tape, "b3", 1, d.input);
    let a3 = tape.matmul(h2, w3);
    let out = tape.add_row(a3, b3);
    let stats = match stats.len() {
        3 => {
            let mut it = stats.into_iter();
            Some([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
        }
        _ => None,
    };
    (out, stats)
}

/// Evaluates subnet `j` on a batch of states without recording gradients.
pub fn subnet_eval(
    params: &ParameterSet,
    j: usize,
    x: &Array2<f64>,
    mode: BnMode,
) -> Result<Array2<f64>> {
    if x.ncols() != params.dims.input || x.nrows() == 0 {
        return Err(Error::ShapeMismatch {
            expected: format!("S x {}", params.dims.input),
            got: format!("{} x {}", x.nrows(), x.ncols()),
        });
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let (out, _) = subnet_forward(&mut tape, params, j, xv, mode);
    Ok(tape.value(out).clone())
}
