use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::model::{spot_numeraire_at, LmmModel};
use crate::error::{Error, Result};
use crate::rng::path_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    #[default]
    PredictorCorrector,
}

/// Simulated forward-rate paths together with the correlated Brownian
/// increments that drove them.
///
/// Storage is path-major: `libors[(path, step, rate)]` over all `N` rates and
/// `increments[(path, step, driver)]` over the `N - 1` drivers.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    n_paths: usize,
    n_steps: usize,
    n_rates: usize,
    libors: Vec<f64>,
    increments: Vec<f64>,
    pub seed: u64,
    pub scheme: Scheme,
    times: Vec<f64>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_rates(&self) -> usize {
        self.n_rates
    }

    /// State `L(t_step)` of one path.
    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let off = (path * (self.n_steps + 1) + step) * self.n_rates;
        &self.libors[off..off + self.n_rates]
    }

    pub fn libor(&self, path: usize, step: usize, rate: usize) -> f64 {
        self.state(path, step)[rate]
    }

    /// Correlated increments `Delta W^N(t_step)` of one path (`N - 1` drivers).
    pub fn increments(&self, path: usize, step: usize) -> &[f64] {
        let d = self.n_rates - 1;
        let off = (path * self.n_steps + step) * d;
        &self.increments[off..off + d]
    }

    /// `[S x N]` matrix of states at one grid step.
    pub fn state_matrix(&self, step: usize) -> Array2<f64> {
        Array2::from_shape_fn((self.n_paths, self.n_rates), |(p, n)| self.libor(p, step, n))
    }

    pub fn spot_numeraire(&self, model: &LmmModel, path: usize, t: f64) -> Result<f64> {
        let step = self
            .times
            .iter()
            .position(|&p| (p - t).abs() <= 1e-12)
            .ok_or(Error::OffGridTime(t))?;
        Ok(spot_numeraire_at(&model.tenor, self.times[step], self.state(path, step)))
    }

    /// Debug dump `path,step,rate_index,libor`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "path,step,rate_index,libor")?;
        for p in 0..self.n_paths {
            for s in 0..=self.n_steps {
                for (n, l) in self.state(p, s).iter().enumerate() {
                    writeln!(out, "{p},{s},{n},{l:e}")?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

struct Scratch {
    z: Vec<f64>,
    dw: Vec<f64>,
    xi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    xi_pred: Vec<f64>,
    pred: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            z: vec![0.0; n - 1],
            dw: vec![0.0; n - 1],
            xi: vec![0.0; n],
            mu0: vec![0.0; n],
            mu1: vec![0.0; n],
            xi_pred: vec![0.0; n],
            pred: vec![0.0; n],
        }
    }
}

fn simulate_one(
    model: &LmmModel,
    grid: &TimeGrid,
    humps: &[f64],
    scheme: Scheme,
    seed: u64,
    path_index: u64,
    libors: &mut [f64],
    increments: &mut [f64],
    s: &mut Scratch,
) {
    let n = model.n_rates();
    let mut rng = path_rng(seed, path_index);
    libors[..n].copy_from_slice(model.initial.values());
    for i in 0..grid.n_steps() {
        let dt = grid.dt(i);
        let q = grid.q(i);
        let sqrt_dt = dt.sqrt();
        for z in s.z.iter_mut() {
            *z = StandardNormal.sample(&mut rng);
        }
        model.corr.correlate(&s.z, &mut s.dw);
        s.dw.iter_mut().for_each(|w| *w *= sqrt_dt);
        increments[i * (n - 1)..(i + 1) * (n - 1)].copy_from_slice(&s.dw);

        let (prev, next) = libors.split_at_mut((i + 1) * n);
        let cur = &prev[i * n..];
        let next = &mut next[..n];
        next.copy_from_slice(cur);
        let hump = &humps[i * n..(i + 1) * n];
        model.diffusions_from(hump, cur, &mut s.xi);
        model.drifts_from(q, cur, &s.xi, &mut s.mu0);
        match scheme {
            Scheme::Euler => {
                for k in q.max(1)..n {
                    next[k] = cur[k] + s.mu0[k] * dt + s.xi[k] * s.dw[k - 1];
                }
            }
            Scheme::PredictorCorrector => {
                s.pred.copy_from_slice(cur);
                for k in q.max(1)..n {
                    s.pred[k] = cur[k] + s.mu0[k] * dt + s.xi[k] * s.dw[k - 1];
                }
                // drift at the predicted state, diffusion kept at t_i
                model.diffusions_from(hump, &s.pred, &mut s.xi_pred);
                model.drifts_from(q, &s.pred, &s.xi_pred, &mut s.mu1);
                for k in q.max(1)..n {
                    let drift = 0.5 * (s.mu0[k] + s.mu1[k]);
                    next[k] = cur[k] + drift * dt + s.xi[k] * s.dw[k - 1];
                }
            }
        }
    }
}

/// Simulates paths `first_path .. first_path + n_paths` of the model on the
/// grid. Path `p` always uses stream `(seed, p)`.
pub fn simulate_paths_range(
    model: &LmmModel,
    grid: &TimeGrid,
    first_path: usize,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathBatch> {
    check_grid(model, grid)?;
    if n_paths == 0 {
        return Err(Error::ShapeMismatch {
            expected: "at least one path".into(),
            got: "0".into(),
        });
    }
    let n = model.n_rates();
    let m = grid.n_steps();
    let mut humps = vec![0.0; m * n];
    for (i, h) in humps.chunks_mut(n).enumerate() {
        model.hump_levels(grid.time(i), grid.q(i), h);
    }
    let mut libors = vec![0.0; n_paths * (m + 1) * n];
    let mut increments = vec![0.0; n_paths * m * (n - 1)];
    libors
        .par_chunks_mut((m + 1) * n)
        .zip(increments.par_chunks_mut(m * (n - 1)))
        .enumerate()
        .for_each_init(
            || Scratch::new(n),
            |scratch, (p, (lib, inc))| {
                simulate_one(model, grid, &humps, scheme, seed, (first_path + p) as u64, lib, inc, scratch)
            },
        );
    Ok(PathBatch {
        n_paths,
        n_steps: m,
        n_rates: n,
        libors,
        increments,
        seed,
        scheme,
        times: grid.points().to_vec(),
    })
}

pub fn simulate_paths(
    model: &LmmModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
) -> Result<PathBatch> {
    simulate_paths_range(model, grid, 0, n_paths, seed, scheme)
}

fn check_grid(model: &LmmModel, grid: &TimeGrid) -> Result<()> {
    let tenor = &model.tenor;
    if grid.horizon() > tenor.horizon() + 1e-12 {
        return Err(Error::GridTenorMismatch(format!(
            "grid horizon {} beyond tenor end {}",
            grid.horizon(),
            tenor.horizon()
        )));
    }
    for (k, &d) in tenor.dates().iter().enumerate() {
        if d <= grid.horizon() && grid.step_of_tenor(k).is_none() {
            return Err(Error::GridTenorMismatch(format!("tenor date T_{k} not on grid")));
        }
    }
    if (0..=grid.n_steps()).any(|i| grid.q(i) != tenor.q(grid.time(i))) {
        return Err(Error::GridTenorMismatch("grid built for a different tenor".into()));
    }
    Ok(())
}
