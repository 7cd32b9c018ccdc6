use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, diffusion_increments, exercise_steps, intrinsic_column, iteration_batch,
    net_dims, payoff_column, SolverConfig, SolverReport, Stopwatch, TrainingHistory, HELDOUT_TAG,
    INIT_TAG,
};
use crate::error::{Error, Result};
use crate::instruments::{IntrinsicVariant, Swaption};
use crate::lmm::{simulate_paths, GridSpacing, LmmModel, PathBatch, TimeGrid};
use crate::neural::{
    init_params, subnet_eval, subnet_forward, AdamState, BatchStats, BnMode, ParameterSet, Tape,
    Var,
};
use crate::rng::derive_seed;

fn check_layout(params: &ParameterSet, grid: &TimeGrid) -> Result<()> {
    if params.has_head {
        return Err(Error::ModeMismatch("backward rollout takes no u0 or grad_u0"));
    }
    let m = grid.n_steps();
    if params.first_step != 0 || params.n_subnets != m {
        return Err(Error::ShapeMismatch {
            expected: format!("subnets for steps 0..{m}"),
            got: format!("{} subnets from step {}", params.n_subnets, params.first_step),
        });
    }
    Ok(())
}

struct Rollout {
    u0: Var,
    z0: Var,
    stats: Vec<(usize, [BatchStats; 3])>,
}

/// Every path shares `L(t_0)`, so running statistics for subnet 0 would be
/// degenerate; it always normalizes with the batch.
fn mode_for(step: usize, mode: BnMode) -> BnMode {
    if step == 0 {
        BnMode::Train
    } else {
        mode
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    tape: &mut Tape,
    params: &ParameterSet,
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    variant: IntrinsicVariant,
    mode: BnMode,
) -> Result<Rollout> {
    let ex_steps = exercise_steps(spec, model, grid)?;
    let m = grid.n_steps();
    let mut u = tape.constant(payoff_column(spec, model, grid, batch, variant));
    let mut stats = Vec::new();
    let mut z0 = None;
    for i in (0..m).rev() {
        let x = tape.constant(batch.state_matrix(i));
        let (z, st) = subnet_forward(tape, params, i, x, mode_for(i, mode));
        if let Some(st) = st {
            stats.push((i, st));
        }
        let du = tape.row_dot(z, diffusion_increments(model, grid, batch, i));
        u = tape.sub(u, du);
        // hold value at an earlier exercise date: max with immediate exercise
        if let Some(pos) = ex_steps[..ex_steps.len() - 1].iter().position(|&s| s == i) {
            let k = spec.exercise[pos];
            u = tape.max_const(u, intrinsic_column(spec, model, batch, i, k, variant));
        }
        if i == 0 {
            z0 = Some(z);
        }
    }
    Ok(Rollout {
        u0: u,
        z0: z0.expect("grid has at least one step"),
        stats,
    })
}

/// Transports the discounted payoff back to `t_0` along the batch and returns
/// the `S x 1` estimates of `u(t_0)`.
#[allow(clippy::too_many_arguments)]
pub fn backward_rollout(
    params: &ParameterSet,
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    variant: IntrinsicVariant,
    mode: BnMode,
) -> Result<Array2<f64>> {
    check_layout(params, grid)?;
    let mut tape = Tape::new();
    let r = record(&mut tape, params, spec, model, grid, batch, variant, mode)?;
    Ok(tape.value(r.u0).clone())
}

/// Variance loss of one batch in training mode and its gradient with
/// respect to every parameter.
pub fn backward_loss_and_grad(
    params: &ParameterSet,
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    variant: IntrinsicVariant,
) -> Result<(f64, Vec<f64>)> {
    check_layout(params, grid)?;
    let mut tape = Tape::new();
    let r = record(&mut tape, params, spec, model, grid, batch, variant, BnMode::Train)?;
    let loss = tape.variance(r.u0);
    let g = tape.backward(loss);
    let mut grads = vec![0.0; params.len()];
    tape.scatter_param_grads(&g, &mut grads);
    Ok((tape.scalar(loss), grads))
}

/// Initial Deltas: subnet 0 at `L(0)`.
pub fn delta_report(params: &ParameterSet, model: &LmmModel) -> Result<Vec<f64>> {
    if params.has_head || params.first_step != 0 {
        return Err(Error::ModeMismatch("delta report needs backward-solver parameters"));
    }
    let l0 = model.initial.values();
    let x = Array2::from_shape_fn((2, l0.len()), |(_, c)| l0[c]);
    Ok(subnet_eval(params, 0, &x, BnMode::Train)?.row(0).to_vec())
}

/// Trains the backward solver for a European or Bermudan swaption; `grid`
/// must end at the last exercise date.
pub fn train_backward(
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    exercise_steps(spec, model, grid)?;
    crate::alloc::tune();
    let clock = Stopwatch::start();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_TAG));
    let mut params = init_params(net_dims(model), 0, grid.n_steps(), None, &mut rng);
    let mut adam = AdamState::new(cfg.adam, params.len());
    let mut history = TrainingHistory::default();
    let mut grads = vec![0.0; params.len()];
    let fixed = (!cfg.resample).then(|| iteration_batch(model, grid, cfg, 0)).transpose()?;
    for it in 0..cfg.n_iterations {
        let fresh;
        let batch = match &fixed {
            Some(b) => b,
            None => {
                fresh = iteration_batch(model, grid, cfg, it as u64)?;
                &fresh
            }
        };
        let mut tape = Tape::new();
        let r = record(&mut tape, &params, spec, model, grid, batch, cfg.intrinsic, BnMode::Train)?;
        let loss_var = tape.variance(r.u0);
        let loss = tape.scalar(loss_var);
        check_finite(loss, it, &history)?;
        let price = tape.value(r.u0).mean().unwrap();
        let deltas = tape.value(r.z0).row(0).to_vec();
        let g = tape.backward(loss_var);
        grads.iter_mut().for_each(|x| *x = 0.0);
        tape.scatter_param_grads(&g, &mut grads);
        drop(tape);
        adam.step(&mut params.data, &grads)?;
        for (j, st) in &r.stats {
            for (running, s) in params.running[*j].iter_mut().zip(st) {
                running.update(s);
            }
        }
        history.push(loss, price, deltas);
    }

    let heldout = simulate_paths(
        model,
        grid,
        cfg.heldout_paths.max(2),
        derive_seed(cfg.seed, HELDOUT_TAG),
        cfg.scheme,
    )?;
    let u0 = backward_rollout(&params, spec, model, grid, &heldout, cfg.intrinsic, BnMode::Eval)?;
    let s = u0.len() as f64;
    let price = u0.mean().unwrap();
    let var = u0.mapv(|v| (v - price) * (v - price)).sum() / (s - 1.0);
    Ok(SolverReport {
        price,
        std_error: Some((var / s).sqrt()),
        deltas: delta_report(&params, model)?,
        history,
        wall_time_s: clock.seconds(),
        params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub n_exercises: usize,
    pub report: SolverReport,
}

/// Trains the backward solver on the swaption restricted to its first
/// `1, 2, ..., p` exercise dates.
pub fn bermudan_sweep(
    spec: &Swaption,
    model: &LmmModel,
    spacing: GridSpacing,
    cfg: &SolverConfig,
) -> Result<Vec<SweepEntry>> {
    (1..=spec.exercise.len())
        .map(|count| {
            let sub = spec.truncated(count);
            let grid = TimeGrid::new(&model.tenor, sub.expiry(), spacing)?;
            Ok(SweepEntry {
                n_exercises: count,
                report: train_backward(&sub, model, &grid, cfg)?,
            })
        })
        .collect()
}
