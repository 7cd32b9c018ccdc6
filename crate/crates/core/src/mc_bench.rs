//! Plain Monte Carlo benchmarks: European swaption prices, bump-and-revalue
//! Deltas, a Black-76 caplet oracle and a regression-based Bermudan lower
//! bound.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::instruments::{disc_intrinsic_unchecked, IntrinsicVariant, Swaption};
use crate::lmm::{bond_price_at, numeraire_at, simulate_paths_range, LmmModel, PathBatch, Scheme, TimeGrid};
use crate::rng::derive_seed;
use crate::tenor_curve::{InitialLibors, TenorStructure};

/// Paths simulated per chunk; keeps memory flat for large path counts.
const CHUNK: usize = 8192;

/// Default bump of the initial Libors for finite-difference Deltas.
pub const DEFAULT_BUMP: f64 = 1e-4;

const RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub price: f64,
    pub std_error: f64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            price: mean,
            std_error: (var / n).sqrt(),
        }
    }
}

/// Evaluates `f(batch, path)` on every path, simulating in chunks. Path `p`
/// uses the same random stream whatever the chunk layout.
fn pathwise<F>(
    model: &LmmModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(&PathBatch, usize) -> f64,
{
    let mut out = Vec::with_capacity(n_paths);
    let mut first = 0;
    while first < n_paths {
        let len = CHUNK.min(n_paths - first);
        let batch = simulate_paths_range(model, grid, first, len, seed, scheme)?;
        out.extend((0..len).map(|p| f(&batch, p)));
        first += len;
    }
    Ok(out)
}

fn check_grid_ends_at(spec_expiry: f64, grid: &TimeGrid) -> Result<()> {
    if (grid.horizon() - spec_expiry).abs() > 1e-12 {
        return Err(Error::ExerciseOffGrid(spec_expiry));
    }
    Ok(())
}

/// Mean discounted payoff of a European swaption; `grid` must end at the
/// expiry.
pub fn price_european_mc(
    model: &LmmModel,
    spec: &Swaption,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
    variant: IntrinsicVariant,
) -> Result<McEstimate> {
    if !spec.is_european() {
        return Err(Error::InvalidInstrument("expected a European swaption".into()));
    }
    let k = spec.expiry();
    check_grid_ends_at(model.tenor.date(k), grid)?;
    let m = grid.n_steps();
    let payoffs = pathwise(model, grid, n_paths, seed, scheme, |b, p| {
        disc_intrinsic_unchecked(spec, model, k, b.state(p, m), variant).max(0.0)
    })?;
    Ok(McEstimate::from_samples(&payoffs))
}

/// Caplet on `L_n` paying `tau_n (L_n(T_n) - K)^+` at `T_{n+1}`, priced by
/// simulation; `grid` must end at `T_n`.
pub fn caplet_mc(
    model: &LmmModel,
    grid: &TimeGrid,
    n: usize,
    strike: f64,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<McEstimate> {
    let tenor = &model.tenor;
    check_grid_ends_at(tenor.date(n), grid)?;
    let m = grid.n_steps();
    let t = tenor.date(n);
    let tau = tenor.accrual(n);
    let payoffs = pathwise(model, grid, n_paths, seed, scheme, |b, p| {
        let l = b.state(p, m);
        let value = tau * (l[n] - strike).max(0.0) * bond_price_at(tenor, t, l, n + 1);
        value / numeraire_at(model, t, l)
    })?;
    Ok(McEstimate::from_samples(&payoffs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    /// Central differences `(V(+h) - V(-h)) / 2h`.
    pub deltas: Vec<f64>,
    /// One-sided `(V(+h) - V) / h`.
    pub up: Vec<f64>,
    /// One-sided `(V - V(-h)) / h`.
    pub down: Vec<f64>,
    pub base: f64,
}

/// Bump-and-revalue Deltas with respect to every initial Libor, with common
/// random numbers on both sides of the bump.
#[allow(clippy::too_many_arguments)]
pub fn delta_bump_revalue(
    model: &LmmModel,
    spec: &Swaption,
    grid: &TimeGrid,
    bump: f64,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
    variant: IntrinsicVariant,
) -> Result<DeltaReport> {
    if !(bump > 0.0) {
        return Err(Error::InvalidInstrument(format!("bump must be positive, got {bump}")));
    }
    let price = |initial: InitialLibors| -> Result<f64> {
        let bumped = model.with_initial(initial);
        Ok(price_european_mc(&bumped, spec, grid, n_paths, seed, scheme, variant)?.price)
    };
    let base = price(model.initial.clone())?;
    let mut report = DeltaReport {
        deltas: Vec::new(),
        up: Vec::new(),
        down: Vec::new(),
        base,
    };
    for n in 0..model.n_rates() {
        let hi = price(model.initial.bumped(n, bump))?;
        let lo = price(model.initial.bumped(n, -bump))?;
        report.deltas.push((hi - lo) / (2.0 * bump));
        report.up.push((hi - base) / bump);
        report.down.push((base - lo) / bump);
    }
    Ok(report)
}

/// Black-76 caplet on `L_n` with reset `T_n` and payment `T_{n+1}`.
pub fn black_caplet(
    initial: &InitialLibors,
    tenor: &TenorStructure,
    n: usize,
    strike: f64,
    flat_vol: f64,
) -> f64 {
    let pay = initial.discount_factors(tenor)[n + 1];
    let tau = tenor.accrual(n);
    let l = initial.values()[n];
    let sd = flat_vol * tenor.date(n).sqrt();
    if sd <= 0.0 || strike <= 0.0 || l <= 0.0 {
        return pay * tau * (l - strike).max(0.0);
    }
    let nd = Normal::standard();
    let d1 = ((l / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    pay * tau * (l * nd.cdf(d1) - strike * nd.cdf(d2))
}

/// Regression features at exercise date `T_k`: deflated intrinsic value,
/// up to three alive Libors and the deflated annuity of the remaining swap.
fn features(spec: &Swaption, model: &LmmModel, k: usize, l: &[f64], intrinsic: f64) -> Vec<f64> {
    let tenor = &model.tenor;
    let t = tenor.date(k);
    let mut f = vec![intrinsic];
    f.extend(l[k..spec.underlying_end.min(k + 3)].iter());
    let annuity: f64 = (k..spec.underlying_end)
        .map(|i| tenor.accrual(i) * bond_price_at(tenor, t, l, i + 1))
        .sum();
    f.push(annuity / numeraire_at(model, t, l));
    f
}

/// All monomials of the features up to `degree`, constant first.
fn monomials(x: &[f64], degree: usize) -> Vec<f64> {
    let mut terms = vec![1.0];
    let mut last: Vec<(usize, f64)> = vec![(0, 1.0)];
    for _ in 0..degree {
        let mut next = Vec::new();
        for &(start, v) in &last {
            for (j, &xj) in x.iter().enumerate().skip(start) {
                next.push((j, v * xj));
            }
        }
        terms.extend(next.iter().map(|&(_, v)| v));
        last = next;
    }
    terms
}

/// Continuation-value regression at one exercise date, on standardized
/// features.
#[derive(Debug, Clone)]
struct Regression {
    mean: Vec<f64>,
    scale: Vec<f64>,
    degree: usize,
    coef: DVector<f64>,
}

impl Regression {
    fn basis(&self, f: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = f
            .iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect();
        monomials(&z, self.degree)
    }

    fn predict(&self, f: &[f64]) -> f64 {
        self.basis(f).iter().zip(self.coef.iter()).map(|(a, b)| a * b).sum()
    }

    fn fit(rows: &[Vec<f64>], y: &[f64], degree: usize) -> Result<Self> {
        let d = rows[0].len();
        let s = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut scale = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                mean[j] += r[j] / s;
            }
        }
        for r in rows {
            for j in 0..d {
                scale[j] += (r[j] - mean[j]).powi(2) / s;
            }
        }
        for v in &mut scale {
            *v = if *v > 0.0 { v.sqrt() } else { 1.0 };
        }
        let mut reg = Self {
            mean,
            scale,
            degree,
            coef: DVector::zeros(0),
        };
        let x: Vec<Vec<f64>> = rows.iter().map(|r| reg.basis(r)).collect();
        let p = x[0].len();
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        for (row, &yi) in x.iter().zip(y) {
            for a in 0..p {
                xty[a] += row[a] * yi;
                for b in 0..=a {
                    xtx[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(b, a)] = xtx[(a, b)];
            }
        }
        reg.coef = solve_normal(xtx, &xty)?;
        Ok(reg)
    }
}

/// Solves the normal equations by Cholesky, falling back to a ridge
/// `lambda = 1e-8` (relative to the mean diagonal) when the basis is
/// rank-deficient.
fn solve_normal(xtx: DMatrix<f64>, xty: &DVector<f64>) -> Result<DVector<f64>> {
    let p = xtx.nrows();
    let trace = xtx.trace() / p as f64;
    if let Some(ch) = xtx.clone().cholesky() {
        let sol = ch.solve(xty);
        // Cholesky can succeed on a numerically singular matrix with a wild
        // solution; accept it only when the smallest pivot is meaningful.
        let min_pivot = ch.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b));
        if min_pivot * min_pivot > 1e-10 * trace && sol.iter().all(|v| v.is_finite()) {
            return Ok(sol);
        }
    }
    let mut ridge = xtx;
    for a in 0..p {
        ridge[(a, a)] += RIDGE * trace.max(f64::MIN_POSITIVE);
    }
    ridge
        .cholesky()
        .map(|ch| ch.solve(xty))
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or(Error::SingularRegression)
}

/// Longstaff-Schwartz lower bound for a Bermudan swaption.
///
/// The exercise policy is fitted on one path set (in-the-money paths only)
/// and evaluated on an independent one, so the estimate is biased low. `grid`
/// must end at the last exercise date.
#[allow(clippy::too_many_arguments)]
pub fn price_bermudan_lsmc(
    model: &LmmModel,
    spec: &Swaption,
    grid: &TimeGrid,
    n_paths: usize,
    basis_degree: usize,
    seed: u64,
    scheme: Scheme,
    variant: IntrinsicVariant,
) -> Result<McEstimate> {
    let tenor = &model.tenor;
    check_grid_ends_at(tenor.date(spec.expiry()), grid)?;
    let steps: Vec<usize> = spec
        .exercise
        .iter()
        .map(|&k| grid.step_of_tenor(k).ok_or(Error::ExerciseOffGrid(tenor.date(k))))
        .collect::<Result<_>>()?;
    let intrinsic = |b: &PathBatch, p: usize, e: usize| {
        disc_intrinsic_unchecked(spec, model, spec.exercise[e], b.state(p, steps[e]), variant)
    };

    // Fit: backward induction on the training set.
    let train = simulate_paths_range(model, grid, 0, n_paths, derive_seed(seed, 0), scheme)?;
    let last = spec.exercise.len() - 1;
    let mut cash: Vec<f64> = (0..n_paths).map(|p| intrinsic(&train, p, last).max(0.0)).collect();
    let mut policy: Vec<Option<Regression>> = vec![None; last];
    for e in (0..last).rev() {
        let k = spec.exercise[e];
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        let mut idx = Vec::new();
        for p in 0..n_paths {
            let h = intrinsic(&train, p, e);
            if h > 0.0 {
                rows.push(features(spec, model, k, train.state(p, steps[e]), h));
                ys.push(cash[p]);
                idx.push(p);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let reg = Regression::fit(&rows, &ys, basis_degree)?;
        for (row, &p) in rows.iter().zip(&idx) {
            if row[0] > reg.predict(row) {
                cash[p] = row[0];
            }
        }
        policy[e] = Some(reg);
    }

    // Evaluate the fitted policy on fresh paths.
    let values = pathwise(model, grid, n_paths, derive_seed(seed, 1), scheme, |b, p| {
        for (e, reg) in policy.iter().enumerate() {
            let h = intrinsic(b, p, e);
            if h <= 0.0 {
                continue;
            }
            if let Some(reg) = reg {
                let f = features(spec, model, spec.exercise[e], b.state(p, steps[e]), h);
                if h > reg.predict(&f) {
                    return h;
                }
            }
        }
        intrinsic(b, p, last).max(0.0)
    })?;
    Ok(McEstimate::from_samples(&values))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub instrument_id: String,
    pub method: String,
    pub price: f64,
    pub std_error: f64,
    pub runtime_s: f64,
}

pub fn write_benchmark_csv(path: &Path, rows: &[BenchmarkRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs `f` and returns its result with the elapsed wall time in seconds.
pub fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}
