//! Deep BSDE solvers for swaptions under the LMM.
//!
//! Both solvers transport the deflated option value along simulated paths
//! with `du = z . sigma dW`, where `z = grad_L u` is produced by one subnet per
//! grid step. The forward solver starts from a learned `u(0)` and matches the
//! payoff at expiry; the backward solver starts from the payoff and makes the
//! implied `u(0)` agree across paths.

mod backward;
mod forward;

use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use backward::{
    backward_loss_and_grad, backward_rollout, bermudan_sweep, delta_report, train_backward,
    SweepEntry,
};
pub use forward::{forward_loss_and_grad, forward_rollout, train_forward};

use crate::error::{Error, Result};
use crate::instruments::{disc_intrinsic_unchecked, IntrinsicVariant, Swaption};
use crate::lmm::{simulate_paths, LmmModel, PathBatch, Scheme, TimeGrid};
use crate::neural::{AdamConfig, NetDims, ParameterSet};
use crate::rng::derive_seed;

/// Per-iteration training record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub loss: Vec<f64>,
    pub price: Vec<f64>,
    pub deltas: Vec<Vec<f64>>,
}

impl TrainingHistory {
    fn push(&mut self, loss: f64, price: f64, deltas: Vec<f64>) {
        self.loss.push(loss);
        self.price.push(price);
        self.deltas.push(deltas);
    }

    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_paths: usize,
    pub n_iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub scheme: Scheme,
    pub intrinsic: IntrinsicVariant,
    /// Paths of the pilot MC price that brackets the initial `u0`.
    pub pilot_paths: usize,
    /// Size of the held-out batch behind the backward solver's price.
    pub heldout_paths: usize,
    /// Draw a fresh batch every iteration; otherwise iteration 0's batch is
    /// reused throughout.
    pub resample: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_paths: 4096,
            n_iterations: 4000,
            adam: AdamConfig::default(),
            seed: 1,
            scheme: Scheme::PredictorCorrector,
            intrinsic: IntrinsicVariant::UndiscountedLegs,
            pilot_paths: 256,
            heldout_paths: 4096,
            resample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub price: f64,
    /// Standard error of the price over the held-out batch (backward solver).
    pub std_error: Option<f64>,
    /// `d price / d L_n(0)` for every rate.
    pub deltas: Vec<f64>,
    pub history: TrainingHistory,
    pub wall_time_s: f64,
    pub params: ParameterSet,
}

pub(crate) fn net_dims(model: &LmmModel) -> NetDims {
    NetDims::for_rates(model.n_rates())
}

/// `D[p, n] = xi_n(t_i, L(t_i)) dW_n(t_i)` for every path; zero for `L_0` and
/// rates that have reset.
pub fn diffusion_increments(
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    step: usize,
) -> Array2<f64> {
    let n = model.n_rates();
    let q = grid.q(step).max(1);
    let mut hump = vec![0.0; n];
    model.hump_levels(grid.time(step), q, &mut hump);
    let mut xi = vec![0.0; n];
    let mut d = Array2::zeros((batch.n_paths(), n));
    for (p, mut row) in d.rows_mut().into_iter().enumerate() {
        model.diffusions_from(&hump, batch.state(p, step), &mut xi);
        let dw = batch.increments(p, step);
        for k in q..n {
            row[k] = xi[k] * dw[k - 1];
        }
    }
    d
}

/// Grid steps of the exercise dates; the grid must end at the last one.
pub(crate) fn exercise_steps(spec: &Swaption, model: &LmmModel, grid: &TimeGrid) -> Result<Vec<usize>> {
    let expiry = model.tenor.date(spec.expiry());
    if (grid.horizon() - expiry).abs() > 1e-12 {
        return Err(Error::ExerciseOffGrid(expiry));
    }
    spec.exercise
        .iter()
        .map(|&k| grid.step_of_tenor(k).ok_or(Error::ExerciseOffGrid(model.tenor.date(k))))
        .collect()
}

/// Discounted intrinsic value at tenor date `k` for every path, unfloored.
pub(crate) fn intrinsic_column(
    spec: &Swaption,
    model: &LmmModel,
    batch: &PathBatch,
    step: usize,
    k: usize,
    variant: IntrinsicVariant,
) -> Array2<f64> {
    Array2::from_shape_fn((batch.n_paths(), 1), |(p, _)| {
        disc_intrinsic_unchecked(spec, model, k, batch.state(p, step), variant)
    })
}

/// Discounted payoff at expiry for every path.
pub(crate) fn payoff_column(
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    variant: IntrinsicVariant,
) -> Array2<f64> {
    intrinsic_column(spec, model, batch, grid.n_steps(), spec.expiry(), variant).mapv(|v| v.max(0.0))
}

pub(crate) fn iteration_batch(
    model: &LmmModel,
    grid: &TimeGrid,
    cfg: &SolverConfig,
    iteration: u64,
) -> Result<PathBatch> {
    simulate_paths(model, grid, cfg.n_paths, derive_seed(cfg.seed, iteration), cfg.scheme)
}

pub(crate) const HELDOUT_TAG: u64 = u64::MAX;
pub(crate) const PILOT_TAG: u64 = u64::MAX - 1;
pub(crate) const INIT_TAG: u64 = u64::MAX - 2;

pub(crate) fn check_finite(loss: f64, iteration: usize, history: &TrainingHistory) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss {
            iteration,
            history: Box::new(history.clone()),
        })
    }
}

pub(crate) struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Self(Instant::now())
    }

    pub fn seconds(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
