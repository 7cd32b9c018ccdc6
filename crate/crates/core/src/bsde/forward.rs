use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_finite, diffusion_increments, exercise_steps, iteration_batch, net_dims, payoff_column,
    SolverConfig, SolverReport, Stopwatch, TrainingHistory, INIT_TAG, PILOT_TAG,
};
use crate::error::{Error, Result};
use crate::instruments::{IntrinsicVariant, Swaption};
use crate::lmm::{simulate_paths, LmmModel, PathBatch, TimeGrid};
use crate::neural::{
    init_params, subnet_forward, AdamState, BatchStats, BnMode, HeadInit, ParameterSet, Tape, Var,
};
use crate::rng::derive_seed;

fn check_layout(params: &ParameterSet, grid: &TimeGrid) -> Result<()> {
    if !params.has_head {
        return Err(Error::ModeMismatch("forward rollout needs u0 and grad_u0"));
    }
    let m = grid.n_steps();
    if params.first_step != 1 || params.n_subnets != m - 1 {
        return Err(Error::ShapeMismatch {
            expected: format!("subnets for steps 1..{m}"),
            got: format!("{} subnets from step {}", params.n_subnets, params.first_step),
        });
    }
    Ok(())
}

/// Records `u(t_m)` for every path; returns it with the normalization
/// statistics of each subnet (training mode).
fn record(
    tape: &mut Tape,
    params: &ParameterSet,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    mode: BnMode,
) -> (Var, Vec<[BatchStats; 3]>) {
    let s = batch.n_paths();
    let n = model.n_rates();
    let u0 = tape.param(&params.data, 0, 1, 1);
    let g0 = tape.param(&params.data, 1, 1, n);
    let mut u = tape.broadcast_rows(u0, s);
    let z0 = tape.broadcast_rows(g0, s);
    let du = tape.row_dot(z0, diffusion_increments(model, grid, batch, 0));
    u = tape.add(u, du);
    let mut stats = Vec::new();
    for i in 1..grid.n_steps() {
        let x = tape.constant(batch.state_matrix(i));
        let (z, st) = subnet_forward(tape, params, i - 1, x, mode);
        stats.extend(st);
        let du = tape.row_dot(z, diffusion_increments(model, grid, batch, i));
        u = tape.add(u, du);
    }
    (u, stats)
}

/// Projects `u(0) = theta_u0` forward along the batch and returns the `S x 1`
/// estimates of the deflated value at expiry.
pub fn forward_rollout(
    params: &ParameterSet,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    mode: BnMode,
) -> Result<Array2<f64>> {
    check_layout(params, grid)?;
    let mut tape = Tape::new();
    let (u, _) = record(&mut tape, params, model, grid, batch, mode);
    Ok(tape.value(u).clone())
}

/// Mean squared terminal mismatch of one batch in training mode and its
/// gradient with respect to every parameter.
pub fn forward_loss_and_grad(
    params: &ParameterSet,
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    batch: &PathBatch,
    variant: IntrinsicVariant,
) -> Result<(f64, Vec<f64>)> {
    check_layout(params, grid)?;
    let target = payoff_column(spec, model, grid, batch, variant);
    let mut tape = Tape::new();
    let (u, _) = record(&mut tape, params, model, grid, batch, BnMode::Train);
    let loss = tape.mse_const(u, target);
    let g = tape.backward(loss);
    let mut grads = vec![0.0; params.len()];
    tape.scatter_param_grads(&g, &mut grads);
    Ok((tape.scalar(loss), grads))
}

/// Mean discounted payoff over a small pilot batch.
pub(crate) fn pilot_price(
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<f64> {
    let batch = simulate_paths(
        model,
        grid,
        cfg.pilot_paths.max(1),
        derive_seed(cfg.seed, PILOT_TAG),
        cfg.scheme,
    )?;
    Ok(payoff_column(spec, model, grid, &batch, cfg.intrinsic).mean().unwrap())
}

/// Trains the forward solver for a European swaption; `grid` must end at the
/// expiry.
pub fn train_forward(
    spec: &Swaption,
    model: &LmmModel,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<SolverReport> {
    if !spec.is_european() {
        return Err(Error::InvalidInstrument(
            "the forward solver prices European swaptions only".into(),
        ));
    }
    exercise_steps(spec, model, grid)?;
    crate::alloc::tune();
    let clock = Stopwatch::start();
    let n = model.n_rates();
    let head = HeadInit {
        pilot_price: pilot_price(spec, model, grid, cfg)?,
        alive: (0..n).map(|k| k >= grid.q(0).max(1)).collect(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_TAG));
    let mut params = init_params(net_dims(model), 1, grid.n_steps() - 1, Some(&head), &mut rng);
    let mut adam = AdamState::new(cfg.adam, params.len());
    let mut history = TrainingHistory::default();
    let mut grads = vec![0.0; params.len()];
    for it in 0..cfg.n_iterations {
        let batch = iteration_batch(model, grid, cfg, it as u64)?;
        let target = payoff_column(spec, model, grid, &batch, cfg.intrinsic);
        let mut tape = Tape::new();
        let (u, stats) = record(&mut tape, &params, model, grid, &batch, BnMode::Train);
        let loss_var = tape.mse_const(u, target);
        let loss = tape.scalar(loss_var);
        check_finite(loss, it, &history)?;
        let g = tape.backward(loss_var);
        grads.iter_mut().for_each(|x| *x = 0.0);
        tape.scatter_param_grads(&g, &mut grads);
        drop(tape);
        adam.step(&mut params.data, &grads)?;
        for (running, st) in params.running.iter_mut().zip(&stats) {
            for (r, s) in running.iter_mut().zip(st) {
                r.update(s);
            }
        }
        history.push(loss, params.data[0], params.grad_u0().unwrap().to_vec());
    }
    Ok(SolverReport {
        price: params.data[0],
        std_error: None,
        deltas: params.grad_u0().unwrap().to_vec(),
        history,
        wall_time_s: clock.seconds(),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instruments::{discounted_terminal_payoff, IntrinsicVariant, Side};
    use crate::lmm::{
        correlation_matrix, GridSpacing, HumpParams, LocalVol, Measure, Scheme, VolSpec,
    };
    use crate::neural::NetDims;
    use crate::tenor_curve::{DayCount, InitialLibors, TenorStructure};

    fn model(vol: VolSpec, rates: usize) -> LmmModel {
        let dates = (0..=rates).map(|i| 0.5 * i as f64).collect();
        LmmModel::new(
            TenorStructure::new(dates, DayCount::Act365).unwrap(),
            InitialLibors::new(vec![0.04; rates]),
            vol,
            correlation_matrix(0.5, rates - 1).unwrap(),
            Measure::Spot,
        )
        .unwrap()
    }

    #[test]
    fn zero_vol_rollout_keeps_u0() {
        let m = model(VolSpec::zero(), 3);
        let grid = TimeGrid::new(&m.tenor, 2, GridSpacing::Quarterly).unwrap();
        let batch = simulate_paths(&m, &grid, 5, 1, Scheme::PredictorCorrector).unwrap();
        let mut p = ParameterSet::zeros(NetDims::for_rates(3), 1, grid.n_steps() - 1, true);
        p.data[0] = 0.0123;
        p.data[2] = 0.7;
        let u = forward_rollout(&p, &m, &grid, &batch, BnMode::Train).unwrap();
        assert!(u.iter().all(|&v| v == 0.0123));
    }

    #[test]
    fn one_step_hand_expansion() {
        let vol = VolSpec::new(HumpParams::flat(0.2), LocalVol::Lognormal).unwrap();
        let m = model(vol, 2);
        let grid = TimeGrid::new(&m.tenor, 1, GridSpacing::Custom(0.5)).unwrap();
        let batch = simulate_paths(&m, &grid, 4, 3, Scheme::Euler).unwrap();
        let mut p = ParameterSet::zeros(NetDims::for_rates(2), 1, 0, true);
        p.data[0] = 0.01;
        p.data[1] = 0.3;
        p.data[2] = -0.5;
        let u = forward_rollout(&p, &m, &grid, &batch, BnMode::Train).unwrap();
        for k in 0..4 {
            let expected = 0.01 - 0.5 * 0.2 * 0.04 * batch.increments(k, 0)[0];
            assert!((u[[k, 0]] - expected).abs() < 1e-17);
        }
    }

    #[test]
    fn mode_is_checked() {
        let m = model(VolSpec::zero(), 3);
        let grid = TimeGrid::new(&m.tenor, 2, GridSpacing::Quarterly).unwrap();
        let batch = simulate_paths(&m, &grid, 2, 1, Scheme::Euler).unwrap();
        let p = ParameterSet::zeros(NetDims::for_rates(3), 0, grid.n_steps(), false);
        assert!(matches!(
            forward_rollout(&p, &m, &grid, &batch, BnMode::Train),
            Err(Error::ModeMismatch(_))
        ));
    }

    #[test]
    fn zero_vol_training_finds_deterministic_price() {
        let m = model(VolSpec::zero(), 4);
        let spec = Swaption::european(Side::Receiver, 0.06, 2, 4, &m.tenor).unwrap();
        let grid = TimeGrid::new(&m.tenor, 2, GridSpacing::Quarterly).unwrap();
        let cfg = SolverConfig {
            n_paths: 16,
            n_iterations: 3000,
            adam: crate::neural::AdamConfig {
                lr: 1e-3,
                lr_final: Some(1e-6),
                decay_steps: 3000,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = train_forward(&spec, &m, &grid, &cfg).unwrap();
        let exact =
            discounted_terminal_payoff(&spec, &m, m.initial.values(), IntrinsicVariant::UndiscountedLegs);
        assert!((report.price - exact).abs() < 1e-9, "{} vs {exact}", report.price);
        assert_eq!(report.history.len(), 3000);
        assert!(*report.history.loss.last().unwrap() < 1e-17);
    }
}
