use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{grid_to, InstrumentConfig, InstrumentKind, Method, Resolved, RunConfig};
use crate::bsde::{train_backward, train_forward, SolverReport};
use crate::error::{Error, Result};
use crate::instruments::Swaption;
use crate::lmm::{simulate_paths, LmmModel, LocalVol};
use crate::mc_bench::{
    black_caplet, caplet_mc, delta_bump_revalue, price_bermudan_lsmc, price_european_mc, timed,
    write_benchmark_csv, BenchmarkRow, McEstimate,
};

/// Delta convergence is written every this many iterations (and at the end).
const DELTA_EVERY: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Price,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Price => "price",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Run-level record written next to the results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub instrument_id: String,
    pub method: String,
    pub seed: Option<u64>,
    pub expiry: f64,
    pub tenor: f64,
    pub npv: f64,
    pub std_error: Option<f64>,
    pub rel_diff_vs_mc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub instrument_id: String,
    pub method: String,
    pub seed: Option<u64>,
    pub rate_index: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub instrument_id: String,
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub loss: f64,
    pub npv: f64,
    /// Exercise dates of the truncated instrument in a sweep.
    pub exercise_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaConvergenceRow {
    pub instrument_id: String,
    pub method: String,
    pub seed: u64,
    pub iteration: usize,
    pub rate_index: usize,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub instrument_id: String,
    pub seed: u64,
    pub n_exercises: usize,
    pub npv: f64,
    pub std_error: f64,
    /// Change against the previous count of the same seed.
    pub diff_npv: Option<f64>,
    pub runtime_s: f64,
}

#[derive(Debug, Default)]
struct Artifacts {
    results: Vec<ResultRow>,
    deltas: Vec<DeltaRow>,
    convergence: Vec<ConvergenceRow>,
    delta_convergence: Vec<DeltaConvergenceRow>,
    benchmark: Vec<BenchmarkRow>,
    sweep: Vec<SweepRow>,
}

impl Artifacts {
    fn trained(
        &mut self,
        id: &str,
        method: Method,
        seed: u64,
        report: &SolverReport,
        keep_history: bool,
        exercise_count: Option<usize>,
    ) {
        let h = &report.history;
        self.deltas.extend(report.deltas.iter().enumerate().map(|(k, &d)| DeltaRow {
            instrument_id: id.into(),
            method: method.name().into(),
            seed: Some(seed),
            rate_index: k,
            delta: d,
        }));
        if !keep_history {
            return;
        }
        for it in 0..h.len() {
            self.convergence.push(ConvergenceRow {
                instrument_id: id.into(),
                method: method.name().into(),
                seed,
                iteration: it,
                loss: h.loss[it],
                npv: h.price[it],
                exercise_count,
            });
            if it % DELTA_EVERY == 0 || it + 1 == h.len() {
                for (k, &d) in h.deltas[it].iter().enumerate() {
                    self.delta_convergence.push(DeltaConvergenceRow {
                        instrument_id: id.into(),
                        method: method.name().into(),
                        seed,
                        iteration: it,
                        rate_index: k,
                        delta: d,
                    });
                }
            }
        }
    }

    /// Writes every non-empty table; a run with no instruments leaves only
    /// the manifest.
    fn write(&self, dir: &Path) -> Result<()> {
        write_rows(&dir.join("results.csv"), &self.results)?;
        write_rows(&dir.join("deltas.csv"), &self.deltas)?;
        write_rows(&dir.join("convergence.csv"), &self.convergence)?;
        write_rows(&dir.join("delta_convergence.csv"), &self.delta_convergence)?;
        write_rows(&dir.join("sweep.csv"), &self.sweep)?;
        if !self.benchmark.is_empty() {
            write_benchmark_csv(&dir.join("benchmark.csv"), &self.benchmark)?;
        }
        Ok(())
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::MissingArtifacts(path.display().to_string()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Exit status for an error: 2 for configuration problems, 3 for solver
/// divergence, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::ConfigParse(_) | Error::FixtureMissing(_) | Error::InvalidInstrument(_) => 2,
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient => 3,
        _ => 1,
    }
}

/// Loads `config_path`, applies overrides and runs `command`. Returns the
/// output directory.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> Result<PathBuf> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        cfg.solver.seeds = vec![seed];
    }
    if let Some(out) = &overrides.out {
        cfg.output.dir = out.clone();
    }
    run_config(command, cfg)
}

pub fn run_config(command: Command, mut cfg: RunConfig) -> Result<PathBuf> {
    cfg.manifest = Some(Manifest {
        command: command.name().into(),
        version: env!("CARGO_PKG_VERSION").into(),
    });
    let resolved = cfg.resolve()?;
    check_methods(command, &resolved)?;
    let dir = resolved.config.output.dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("manifest.cfg"), resolved.config.to_toml()?)?;
    match command {
        Command::Simulate => simulate(&resolved, &dir)?,
        Command::Price => price(&resolved)?.write(&dir)?,
        Command::Sweep => sweep(&resolved)?.write(&dir)?,
    }
    Ok(dir)
}

fn config_error(msg: String) -> Error {
    Error::ConfigParse(msg)
}

/// Rejects method/instrument combinations up front so that a long run does
/// not fail halfway.
fn check_methods(command: Command, r: &Resolved) -> Result<()> {
    let cfg = &r.config;
    if command == Command::Simulate {
        return match &cfg.simulate {
            Some(s) if s.horizon_index >= 1 && s.horizon_index <= r.model.tenor.n_periods() => Ok(()),
            Some(s) => Err(config_error(format!("[simulate] horizon_index {} outside the tenor", s.horizon_index))),
            None => Err(config_error("`simulate` needs a [simulate] section".into())),
        };
    }
    for inst in &cfg.instruments {
        for &m in inst.methods(&cfg.solver) {
            let ok = match (inst.kind, m) {
                (InstrumentKind::Caplet, Method::Mc) => command == Command::Price,
                (InstrumentKind::Caplet, Method::Black) => {
                    command == Command::Price && cfg.model.local_vol == LocalVol::Lognormal
                }
                (InstrumentKind::Caplet, _) => false,
                (InstrumentKind::Swaption, Method::Black) => false,
                (InstrumentKind::Swaption, Method::Forward) => {
                    command == Command::Price && inst.exercise.len() == 1
                }
                (InstrumentKind::Swaption, Method::Mc) => {
                    command == Command::Sweep || inst.exercise.len() == 1
                }
                (InstrumentKind::Swaption, Method::Backward | Method::Lsmc) => true,
            };
            if !ok {
                return Err(config_error(format!(
                    "method `{}` does not apply to instrument `{}` in `{}`",
                    m.name(),
                    inst.id,
                    command.name()
                )));
            }
        }
    }
    Ok(())
}

fn simulate(r: &Resolved, dir: &Path) -> Result<()> {
    let s = r.config.simulate.as_ref().expect("checked");
    let grid = grid_to(&r.model, s.horizon_index, r.config.grid.spacing)?;
    let batch = simulate_paths(
        &r.model,
        &grid,
        s.n_paths,
        r.config.solver.seeds[0],
        r.config.solver.scheme,
    )?;
    batch.write_csv(&dir.join("paths.csv"))
}

fn runtime(cfg: &RunConfig, seconds: f64) -> f64 {
    if cfg.output.record_runtime {
        seconds
    } else {
        0.0
    }
}

fn trained_label(method: Method, seed: u64) -> String {
    format!("{}/seed{seed}", method.name())
}

fn expiry_and_tenor(model: &LmmModel, spec: &Swaption) -> (f64, f64) {
    let t = model.tenor.date(spec.first_exercise());
    (t, model.tenor.date(spec.underlying_end) - t)
}

/// Prices a swaption with one method and records every artifact.
fn price_swaption(
    r: &Resolved,
    id: &str,
    spec: &Swaption,
    method: Method,
    art: &mut Artifacts,
) -> Result<()> {
    let cfg = &r.config;
    let s = &cfg.solver;
    let model = &r.model;
    let grid = grid_to(model, spec.expiry(), cfg.grid.spacing)?;
    let (expiry, tenor) = expiry_and_tenor(model, spec);
    let row = |method: &str, seed: Option<u64>, est: f64, se: Option<f64>| ResultRow {
        instrument_id: id.into(),
        method: method.into(),
        seed,
        expiry,
        tenor,
        npv: est,
        std_error: se,
        rel_diff_vs_mc: None,
    };
    match method {
        Method::Forward | Method::Backward => {
            for &seed in &s.seeds {
                let sc = s.solver_config(seed);
                let report = if method == Method::Forward {
                    train_forward(spec, model, &grid, &sc)?
                } else {
                    train_backward(spec, model, &grid, &sc)?
                };
                art.results.push(row(method.name(), Some(seed), report.price, report.std_error));
                art.trained(id, method, seed, &report, cfg.output.convergence, None);
                art.benchmark.push(BenchmarkRow {
                    instrument_id: id.into(),
                    method: trained_label(method, seed),
                    price: report.price,
                    std_error: report.std_error.unwrap_or(f64::NAN),
                    runtime_s: runtime(cfg, report.wall_time_s),
                });
            }
        }
        Method::Mc | Method::Lsmc => {
            let (est, secs) = timed(|| {
                if method == Method::Mc {
                    price_european_mc(model, spec, &grid, s.mc_paths, s.mc_seed, s.scheme, s.intrinsic)
                } else {
                    price_bermudan_lsmc(
                        model,
                        spec,
                        &grid,
                        s.mc_paths,
                        s.lsmc_degree,
                        s.mc_seed,
                        s.scheme,
                        s.intrinsic,
                    )
                }
            })?;
            art.results.push(row(method.name(), Some(s.mc_seed), est.price, Some(est.std_error)));
            art.benchmark.push(bench_row(id, method.name(), est, runtime(cfg, secs)));
            if method == Method::Mc && s.mc_deltas {
                let d = delta_bump_revalue(
                    model, spec, &grid, s.bump, s.mc_paths, s.mc_seed, s.scheme, s.intrinsic,
                )?;
                art.deltas.extend(d.deltas.iter().enumerate().map(|(k, &v)| DeltaRow {
                    instrument_id: id.into(),
                    method: method.name().into(),
                    seed: Some(s.mc_seed),
                    rate_index: k,
                    delta: v,
                }));
            }
        }
        Method::Black => unreachable!("rejected by check_methods"),
    }
    Ok(())
}

fn bench_row(id: &str, method: &str, est: McEstimate, runtime_s: f64) -> BenchmarkRow {
    BenchmarkRow {
        instrument_id: id.into(),
        method: method.into(),
        price: est.price,
        std_error: est.std_error,
        runtime_s,
    }
}

/// Black volatility of a lognormal rate with the hump level over `[0, T]`:
/// `sqrt(int_0^T lambda(T - t)^2 dt / T)`, by Simpson's rule.
pub fn hump_black_vol(hump: &crate::lmm::HumpParams, reset: f64) -> f64 {
    if reset <= 0.0 {
        return hump.at(0.0);
    }
    let n = 2048;
    let h = reset / n as f64;
    let f = |s: f64| hump.at(s).powi(2);
    let mut acc = f(0.0) + f(reset);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    (acc * h / 3.0 / reset).sqrt()
}

fn price_caplet(r: &Resolved, inst: &InstrumentConfig, method: Method, art: &mut Artifacts) -> Result<()> {
    let cfg = &r.config;
    let s = &cfg.solver;
    let model = &r.model;
    let n = inst.rate;
    let strike = inst.caplet_strike(model);
    let expiry = model.tenor.date(n);
    let tenor = model.tenor.accrual(n);
    let (mut est, secs) = match method {
        Method::Mc => timed(|| {
            let grid = grid_to(model, n, cfg.grid.spacing)?;
            caplet_mc(model, &grid, n, strike, s.mc_paths, s.mc_seed, s.scheme)
        })?,
        Method::Black => {
            let vol = hump_black_vol(&model.vol.hump, expiry);
            let price = black_caplet(&model.initial, &model.tenor, n, strike, vol);
            (McEstimate { price, std_error: 0.0 }, 0.0)
        }
        _ => unreachable!("rejected by check_methods"),
    };
    est.price *= inst.notional;
    est.std_error *= inst.notional;
    let seed = (method == Method::Mc).then_some(s.mc_seed);
    let se = (method == Method::Mc).then_some(est.std_error);
    art.results.push(ResultRow {
        instrument_id: inst.id.clone(),
        method: method.name().into(),
        seed,
        expiry,
        tenor,
        npv: est.price,
        std_error: se,
        rel_diff_vs_mc: None,
    });
    art.benchmark.push(bench_row(&inst.id, method.name(), est, runtime(cfg, secs)));
    Ok(())
}

/// Fills `rel_diff_vs_mc` for every non-MC row whose instrument has an MC
/// price.
fn attach_mc_diffs(rows: &mut [ResultRow]) {
    let mc: BTreeMap<String, f64> = rows
        .iter()
        .filter(|r| r.method == "mc")
        .map(|r| (r.instrument_id.clone(), r.npv))
        .collect();
    for r in rows.iter_mut().filter(|r| r.method != "mc") {
        if let Some(&m) = mc.get(&r.instrument_id) {
            if m != 0.0 {
                r.rel_diff_vs_mc = Some((r.npv - m) / m);
            }
        }
    }
}

fn price(r: &Resolved) -> Result<Artifacts> {
    let mut art = Artifacts::default();
    for inst in &r.config.instruments {
        for &method in inst.methods(&r.config.solver) {
            match inst.kind {
                InstrumentKind::Swaption => {
                    let spec = inst.swaption(&r.model)?;
                    price_swaption(r, &inst.id, &spec, method, &mut art)?;
                }
                InstrumentKind::Caplet => price_caplet(r, inst, method, &mut art)?,
            }
        }
    }
    attach_mc_diffs(&mut art.results);
    Ok(art)
}

/// Prices the Bermudan truncated to the first `count` exercise dates for the
/// configured counts, plus European MC prices at every exercise date when
/// `mc` is requested.
fn sweep(r: &Resolved) -> Result<Artifacts> {
    let cfg = &r.config;
    let sweep_cfg = cfg.sweep.clone().unwrap_or_default();
    let mut art = Artifacts::default();
    for inst in &cfg.instruments {
        let full = inst.swaption(&r.model)?;
        let counts: Vec<usize> = if sweep_cfg.counts.is_empty() {
            (1..=full.exercise.len()).collect()
        } else {
            sweep_cfg.counts.clone()
        };
        if let Some(&bad) = counts.iter().find(|&&c| c == 0 || c > full.exercise.len()) {
            return Err(config_error(format!("sweep count {bad} outside 1..={}", full.exercise.len())));
        }
        for &method in inst.methods(&cfg.solver) {
            match method {
                Method::Backward => {
                    for &seed in &cfg.solver.seeds {
                        let mut prev: Option<f64> = None;
                        for (j, &count) in counts.iter().enumerate() {
                            let spec = full.truncated(count);
                            let id = format!("{}_{count}", inst.id);
                            let mut solver = cfg.solver.clone();
                            solver.n_iterations += j * sweep_cfg.extra_iterations_per_count;
                            let sc = solver.solver_config(seed);
                            let grid = grid_to(&r.model, spec.expiry(), cfg.grid.spacing)?;
                            let report = train_backward(&spec, &r.model, &grid, &sc)?;
                            let (expiry, tenor) = expiry_and_tenor(&r.model, &spec);
                            art.results.push(ResultRow {
                                instrument_id: id.clone(),
                                method: method.name().into(),
                                seed: Some(seed),
                                expiry,
                                tenor,
                                npv: report.price,
                                std_error: report.std_error,
                                rel_diff_vs_mc: None,
                            });
                            art.sweep.push(SweepRow {
                                instrument_id: inst.id.clone(),
                                seed,
                                n_exercises: count,
                                npv: report.price,
                                std_error: report.std_error.unwrap_or(f64::NAN),
                                diff_npv: prev.map(|p| report.price - p),
                                runtime_s: runtime(cfg, report.wall_time_s),
                            });
                            prev = Some(report.price);
                            art.trained(&id, method, seed, &report, cfg.output.convergence, Some(count));
                            art.benchmark.push(BenchmarkRow {
                                instrument_id: id,
                                method: trained_label(method, seed),
                                price: report.price,
                                std_error: report.std_error.unwrap_or(f64::NAN),
                                runtime_s: runtime(cfg, report.wall_time_s),
                            });
                        }
                    }
                }
                Method::Lsmc => {
                    for &count in &counts {
                        let spec = full.truncated(count);
                        price_swaption(r, &format!("{}_{count}", inst.id), &spec, method, &mut art)?;
                    }
                }
                Method::Mc => {
                    let largest = full.truncated(*counts.iter().max().expect("non-empty"));
                    for &k in &largest.exercise {
                        let spec = full.european_at(k);
                        price_swaption(r, &format!("{}_eu{k}", inst.id), &spec, method, &mut art)?;
                    }
                }
                Method::Forward | Method::Black => unreachable!("rejected by check_methods"),
            }
        }
    }
    Ok(art)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub iteration: usize,
    pub value: f64,
}

/// Long-format `series,iteration,value` file from a run's convergence
/// records. Series are named `instrument/method/seed<k>/<metric>`.
pub fn emit_plotdata(run_dir: &Path) -> Result<PathBuf> {
    let conv: Vec<ConvergenceRow> = read_rows(&run_dir.join("convergence.csv"))?;
    let deltas: Vec<DeltaConvergenceRow> = read_rows(&run_dir.join("delta_convergence.csv"))?;
    let mut rows = Vec::with_capacity(2 * conv.len() + deltas.len());
    let key = |id: &str, m: &str, seed: u64| format!("{id}/{m}/seed{seed}");
    for c in &conv {
        let base = key(&c.instrument_id, &c.method, c.seed);
        rows.push(PlotRow {
            series: format!("{base}/loss"),
            iteration: c.iteration,
            value: c.loss,
        });
        rows.push(PlotRow {
            series: format!("{base}/npv"),
            iteration: c.iteration,
            value: c.npv,
        });
    }
    for d in &deltas {
        rows.push(PlotRow {
            series: format!("{}/delta_L{}", key(&d.instrument_id, &d.method, d.seed), d.rate_index),
            iteration: d.iteration,
            value: d.delta,
        });
    }
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.iteration.cmp(&b.iteration)));
    let out = run_dir.join("plotdata.csv");
    write_rows(&out, &rows)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_vol_of_flat_hump_is_the_level() {
        let h = crate::lmm::HumpParams::flat(0.2);
        assert!((hump_black_vol(&h, 1.7) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn black_vol_matches_closed_form_integral() {
        // lambda(s) = a s e^{-b s}: int_0^T a^2 s^2 e^{-2bs} ds in closed form.
        let (a, b, t) = (0.3, 1.2, 2.0);
        let h = crate::lmm::HumpParams::new(a, b, 0.0, 0.0);
        let k = 2.0 * b;
        let integral = a * a * (2.0 / k.powi(3) - (-k * t).exp() * (t * t / k + 2.0 * t / (k * k) + 2.0 / k.powi(3)));
        assert!((hump_black_vol(&h, t) - (integral / t).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::ConfigParse("x".into())), 2);
        assert_eq!(exit_code(&Error::FixtureMissing("x".into())), 2);
        assert_eq!(exit_code(&Error::NonFiniteGradient), 3);
        assert_eq!(exit_code(&Error::SingularRegression), 1);
    }

    #[test]
    fn mc_diffs_attach_to_other_methods() {
        let row = |m: &str, v: f64| ResultRow {
            instrument_id: "a".into(),
            method: m.into(),
            seed: None,
            expiry: 1.0,
            tenor: 1.0,
            npv: v,
            std_error: None,
            rel_diff_vs_mc: None,
        };
        let mut rows = vec![row("forward", 1.01), row("mc", 1.0)];
        attach_mc_diffs(&mut rows);
        assert!((rows[0].rel_diff_vs_mc.unwrap() - 0.01).abs() < 1e-12);
        assert_eq!(rows[1].rel_diff_vs_mc, None);
    }
}
