//! Training-free oracle checks shared by the oracle tests and the acceptance
//! report.
#![allow(dead_code)]

use libor_bsde::bsde::{
    backward_loss_and_grad, backward_rollout, forward_loss_and_grad, forward_rollout,
    train_backward, SolverConfig,
};
use libor_bsde::cli::hump_black_vol;
use libor_bsde::instruments::{discounted_terminal_payoff, IntrinsicVariant, Side, Swaption};
use libor_bsde::lmm::{
    bond_price_at, correlation_matrix, simulate_paths, spot_numeraire_at, GridSpacing, HumpParams,
    LmmModel, LocalVol, Measure, Scheme, TimeGrid, VolSpec,
};
use libor_bsde::mc_bench::{black_caplet, caplet_mc, price_bermudan_lsmc, price_european_mc};
use libor_bsde::neural::{init_params, AdamConfig, BnMode, HeadInit, NetDims, ParameterSet};
use libor_bsde::tenor_curve::{initial_libors, DayCount, InitialLibors, TenorStructure, ZeroCurve};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STD_HUMP: HumpParams = HumpParams::new(0.291, 1.483, 0.116, 0.00001);

pub struct Check {
    pub name: &'static str,
    pub detail: String,
    pub pass: bool,
}

impl Check {
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn flat_model(libors: Vec<f64>, dt: f64, vol: VolSpec, measure: Measure) -> LmmModel {
    let n = libors.len();
    let dates = (0..=n).map(|i| dt * i as f64).collect();
    LmmModel::new(
        TenorStructure::new(dates, DayCount::Act365).unwrap(),
        InitialLibors::new(libors),
        vol,
        correlation_matrix(0.5, n - 1).unwrap(),
        measure,
    )
    .unwrap()
}

/// The flat 4% co-terminal model with the standard hump.
pub fn coterminal_model(measure: Measure) -> LmmModel {
    let dates = vec![
        0.0, 0.5028, 1.0139, 1.5167, 2.0278, 2.5333, 3.0472, 3.5528, 4.0583, 4.5639, 5.0722,
    ];
    let tenor = TenorStructure::new(dates, DayCount::Act365).unwrap();
    let init = initial_libors(&ZeroCurve::FlatContinuous(0.04), &tenor).unwrap();
    LmmModel::new(
        tenor,
        init,
        VolSpec::new(STD_HUMP, LocalVol::Lognormal).unwrap(),
        correlation_matrix(0.5, 9).unwrap(),
        measure,
    )
    .unwrap()
}

/// Caplet on the single stochastic rate of a two-rate lognormal model,
/// simulated with the standard hump, against Black-76 with the hump's
/// root-mean-square volatility.
pub fn black_caplet_vs_mc() -> Check {
    black_caplet_vs_mc_seeded(11)
}

pub fn black_caplet_vs_mc_seeded(seed: u64) -> Check {
    let tenor = TenorStructure::new(vec![0.0, 1.0, 1.5], DayCount::Act365).unwrap();
    let init = initial_libors(&ZeroCurve::FlatContinuous(0.04), &tenor).unwrap();
    let model = LmmModel::new(
        tenor.clone(),
        init.clone(),
        VolSpec::new(STD_HUMP, LocalVol::Lognormal).unwrap(),
        correlation_matrix(0.5, 1).unwrap(),
        Measure::Spot,
    )
    .unwrap();
    // Fine steps: the scheme freezes the hump at the left end of each step,
    // which on a monthly grid overstates the variance by about 1.5%.
    let grid = TimeGrid::new(&tenor, 1, GridSpacing::Custom(1.0 / 120.0)).unwrap();
    let strike = init.values()[1];
    let mc = caplet_mc(&model, &grid, 1, strike, 100_000, seed, Scheme::PredictorCorrector).unwrap();
    let black = black_caplet(&init, &tenor, 1, strike, hump_black_vol(&STD_HUMP, 1.0));
    let z = (mc.price - black) / mc.std_error;
    Check {
        name: "black caplet vs 100k-path MC",
        detail: format!("mc {:.7} se {:.2e} black {:.7} z {z:.2} (|z| < 3)", mc.price, mc.std_error, black),
        pass: z.abs() < 3.0,
    }
}

/// `P(T_k, T_N) / B(T_k)` has expectation `P(0, T_N)` under the spot measure.
pub fn spot_martingale() -> Check {
    let model = coterminal_model(Measure::Spot);
    let k = 4;
    let n = model.n_rates();
    let grid = TimeGrid::new(&model.tenor, k, GridSpacing::Monthly).unwrap();
    let batch = simulate_paths(&model, &grid, 8192, 5, Scheme::PredictorCorrector).unwrap();
    let t = model.tenor.date(k);
    let m = grid.n_steps();
    let samples: Vec<f64> = (0..batch.n_paths())
        .map(|p| {
            let l = batch.state(p, m);
            bond_price_at(&model.tenor, t, l, n) / spot_numeraire_at(&model.tenor, t, l)
        })
        .collect();
    let est = libor_bsde::mc_bench::McEstimate::from_samples(&samples);
    let exact = model.terminal_discount();
    let z = (est.price - exact) / est.std_error;
    Check {
        name: "spot-measure deflated bond martingale",
        detail: format!("E {:.8} vs P(0,T_N) {:.8}, z {z:.2} (|z| < 3)", est.price, exact),
        pass: z.abs() < 3.0,
    }
}

/// Zero volatility: every pricer returns the deterministic discounted
/// intrinsic value.
pub fn zero_vol_exact() -> Check {
    let model = flat_model(vec![0.04, 0.03, 0.035, 0.02, 0.045], 0.5, VolSpec::zero(), Measure::Spot);
    let v = IntrinsicVariant::FullyDiscounted;
    let spec = Swaption::european(Side::Receiver, 0.04, 2, 5, &model.tenor).unwrap();
    let grid = TimeGrid::new(&model.tenor, 2, GridSpacing::Quarterly).unwrap();
    let exact = discounted_terminal_payoff(&spec, &model, model.initial.values(), v);
    let mut worst: f64 = 0.0;
    let mc = price_european_mc(&model, &spec, &grid, 64, 1, Scheme::PredictorCorrector, v).unwrap();
    worst = worst.max((mc.price - exact).abs());
    let lsmc = price_bermudan_lsmc(&model, &spec, &grid, 64, 2, 1, Scheme::Euler, v).unwrap();
    worst = worst.max((lsmc.price - exact).abs());
    let batch = simulate_paths(&model, &grid, 16, 3, Scheme::PredictorCorrector).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = NetDims::for_rates(model.n_rates());
    let bw = init_params(dims, 0, grid.n_steps(), None, &mut rng);
    let u = backward_rollout(&bw, &spec, &model, &grid, &batch, v, BnMode::Train).unwrap();
    worst = u.iter().fold(worst, |w, x| w.max((x - exact).abs()));
    let head = HeadInit {
        pilot_price: exact,
        alive: vec![true; model.n_rates()],
    };
    let mut fw = init_params(dims, 1, grid.n_steps() - 1, Some(&head), &mut rng);
    fw.data[0] = exact;
    let u = forward_rollout(&fw, &model, &grid, &batch, BnMode::Train).unwrap();
    worst = u.iter().fold(worst, |w, x| w.max((x - exact).abs()));
    Check {
        name: "zero-vol degenerate pricing",
        detail: format!("max |error| {worst:.2e} (< 1e-12) on MC, LSMC, both rollouts"),
        pass: worst < 1e-12,
    }
}

/// Two rates, three monthly steps, eight paths.
pub fn tiny_instance() -> (LmmModel, Swaption, TimeGrid) {
    let tenor = TenorStructure::new(vec![0.0, 0.25, 0.5], DayCount::Act365).unwrap();
    let init = InitialLibors::new(vec![0.04, 0.045]);
    let model = LmmModel::new(
        tenor,
        init,
        VolSpec::new(HumpParams::flat(0.3), LocalVol::Lognormal).unwrap(),
        correlation_matrix(0.5, 1).unwrap(),
        Measure::Spot,
    )
    .unwrap();
    let spec = Swaption::european(Side::Receiver, 0.046, 1, 2, &model.tenor).unwrap();
    let grid = TimeGrid::new(&model.tenor, 1, GridSpacing::Custom(1.0 / 12.0)).unwrap();
    assert_eq!(grid.n_steps(), 3);
    (model, spec, grid)
}

/// Relative error `|g_ad - g_fd| / max(|g_ad|, |g_fd|)` in the Euclidean norm
/// over all parameters, with central differences at `h = 1e-6 (1 + |x|)`.
fn gradient_error<F>(params: &ParameterSet, analytic: &[f64], loss: F) -> f64
where
    F: Fn(&ParameterSet) -> f64,
{
    let mut diff = 0.0;
    let mut norm_fd = 0.0;
    for j in 0..params.len() {
        let h = 1e-6 * (1.0 + params.data[j].abs());
        let mut up = params.clone();
        up.data[j] += h;
        let mut dn = params.clone();
        dn.data[j] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        diff += (fd - analytic[j]).powi(2);
        norm_fd += fd * fd;
    }
    let norm_ad: f64 = analytic.iter().map(|g| g * g).sum();
    diff.sqrt() / norm_ad.max(norm_fd).sqrt().max(f64::MIN_POSITIVE)
}

pub fn autodiff_vs_fd() -> Check {
    let (model, spec, grid) = tiny_instance();
    let v = IntrinsicVariant::FullyDiscounted;
    let batch = simulate_paths(&model, &grid, 8, 9, Scheme::PredictorCorrector).unwrap();
    let dims = NetDims::for_rates(2);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    // Nonzero shifts keep every BN output away from the ReLU kink.
    let mut randomize = |p: &mut ParameterSet| {
        use rand::Rng;
        for x in p.data.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    };
    let head = HeadInit {
        pilot_price: 0.002,
        alive: vec![false, true],
    };
    let mut rng0 = ChaCha8Rng::seed_from_u64(1);
    let mut fw = init_params(dims, 1, grid.n_steps() - 1, Some(&head), &mut rng0);
    randomize(&mut fw);
    let mut bw = init_params(dims, 0, grid.n_steps(), None, &mut rng0);
    randomize(&mut bw);

    let (_, gf) = forward_loss_and_grad(&fw, &spec, &model, &grid, &batch, v).unwrap();
    let ef = gradient_error(&fw, &gf, |p| forward_loss_and_grad(p, &spec, &model, &grid, &batch, v).unwrap().0);
    let (_, gb) = backward_loss_and_grad(&bw, &spec, &model, &grid, &batch, v).unwrap();
    let eb = gradient_error(&bw, &gb, |p| backward_loss_and_grad(p, &spec, &model, &grid, &batch, v).unwrap().0);
    Check {
        name: "autodiff vs central differences (2 rates, 3 steps)",
        detail: format!(
            "forward {} params rel err {ef:.2e}, backward {} params rel err {eb:.2e} (< 1e-5)",
            fw.len(),
            bw.len()
        ),
        pass: ef < 1e-5 && eb < 1e-5,
    }
}

pub fn backward_loss_is_variance() -> Check {
    let model = coterminal_model(Measure::Spot);
    let spec = Swaption::european(Side::Receiver, 0.0405, 2, 10, &model.tenor).unwrap();
    let grid = TimeGrid::new(&model.tenor, 2, GridSpacing::Quarterly).unwrap();
    let v = IntrinsicVariant::FullyDiscounted;
    let batch = simulate_paths(&model, &grid, 256, 4, Scheme::PredictorCorrector).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = init_params(NetDims::for_rates(10), 0, grid.n_steps(), None, &mut rng);
    let (loss, _) = backward_loss_and_grad(&params, &spec, &model, &grid, &batch, v).unwrap();
    let u = backward_rollout(&params, &spec, &model, &grid, &batch, v, BnMode::Train).unwrap();
    let mean = u.mean().unwrap();
    let var = u.mapv(|x| (x - mean).powi(2)).mean().unwrap();
    let rel = (loss - var).abs() / var;
    Check {
        name: "backward loss equals batch variance",
        detail: format!("loss {loss:.6e} variance {var:.6e} rel diff {rel:.1e} (< 1e-12)"),
        pass: rel < 1e-12,
    }
}

/// One grid step, a fixed batch: the loss `Var(g - z D)` is minimized by
/// `z* = Cov(g, D) / Var(D)`; the trained subnet-0 output must reach it.
pub fn one_step_backward_oracle() -> Check {
    let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0], DayCount::Act365).unwrap();
    let init = InitialLibors::new(vec![0.04, 0.04]);
    let model = LmmModel::new(
        tenor,
        init,
        VolSpec::new(HumpParams::flat(0.2), LocalVol::Lognormal).unwrap(),
        correlation_matrix(0.5, 1).unwrap(),
        Measure::Spot,
    )
    .unwrap();
    let spec = Swaption::european(Side::Receiver, 0.04, 1, 2, &model.tenor).unwrap();
    let grid = TimeGrid::new(&model.tenor, 1, GridSpacing::Custom(0.5)).unwrap();
    let cfg = SolverConfig {
        n_paths: 512,
        n_iterations: 3000,
        adam: AdamConfig {
            lr: 1e-2,
            lr_final: Some(1e-5),
            decay_steps: 3000,
            ..AdamConfig::default()
        },
        intrinsic: IntrinsicVariant::FullyDiscounted,
        resample: false,
        heldout_paths: 64,
        ..SolverConfig::default()
    };
    let report = train_backward(&spec, &model, &grid, &cfg).unwrap();
    // Same batch as the solver's iteration 0.
    let batch = simulate_paths(
        &model,
        &grid,
        cfg.n_paths,
        libor_bsde::rng::derive_seed(cfg.seed, 0),
        cfg.scheme,
    )
    .unwrap();
    let g: Vec<f64> = (0..cfg.n_paths)
        .map(|p| discounted_terminal_payoff(&spec, &model, batch.state(p, 1), cfg.intrinsic))
        .collect();
    let d: Array2<f64> = libor_bsde::bsde::diffusion_increments(&model, &grid, &batch, 0);
    let d1: Vec<f64> = d.column(1).to_vec();
    let mg = g.iter().sum::<f64>() / g.len() as f64;
    let md = d1.iter().sum::<f64>() / d1.len() as f64;
    let cov: f64 = g.iter().zip(&d1).map(|(a, b)| (a - mg) * (b - md)).sum();
    let var: f64 = d1.iter().map(|b| (b - md).powi(2)).sum();
    let z_star = cov / var;
    let z = *report.history.deltas.last().unwrap().get(1).unwrap();
    let rel = (z - z_star).abs() / z_star.abs();
    Check {
        name: "one-step backward optimizer reaches closed-form z*",
        detail: format!("z {z:.6} z* {z_star:.6} rel {rel:.1e} (< 1%)"),
        pass: rel < 0.01,
    }
}
