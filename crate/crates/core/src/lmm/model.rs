use serde::{Deserialize, Serialize};

use super::correlation::CorrelationSpec;
use super::vol::{LocalVol, VolSpec};
use crate::error::{Error, Result};
use crate::tenor_curve::{InitialLibors, TenorStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    #[default]
    Spot,
    Terminal,
}

/// Libor Market Model with one Brownian driver per stochastic rate.
///
/// The state vector holds all `N` forward rates `L_0..L_{N-1}`; `L_0` resets at
/// `T_0 = 0` and never moves, so the correlation spec covers the `N - 1` rates
/// `L_1..L_{N-1}` (rate `n` uses driver `n - 1`).
#[derive(Debug, Clone)]
pub struct LmmModel {
    pub tenor: TenorStructure,
    pub initial: InitialLibors,
    pub vol: VolSpec,
    pub corr: CorrelationSpec,
    pub measure: Measure,
}

impl LmmModel {
    pub fn new(
        tenor: TenorStructure,
        initial: InitialLibors,
        vol: VolSpec,
        corr: CorrelationSpec,
        measure: Measure,
    ) -> Result<Self> {
        let n = tenor.n_periods();
        if initial.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{n} initial libors"),
                got: initial.len().to_string(),
            });
        }
        if n < 2 || corr.size() != n - 1 {
            return Err(Error::ShapeMismatch {
                expected: format!("{} stochastic rates", n.saturating_sub(1)),
                got: corr.size().to_string(),
            });
        }
        vol.phi.validate()?;
        Ok(Self {
            tenor,
            initial,
            vol,
            corr,
            measure,
        })
    }

    /// Number of forward rates `N` in the state vector.
    pub fn n_rates(&self) -> usize {
        self.tenor.n_periods()
    }

    pub fn with_initial(&self, initial: InitialLibors) -> Self {
        Self {
            initial,
            ..self.clone()
        }
    }

    pub fn with_vol(&self, vol: VolSpec) -> Self {
        Self { vol, ..self.clone() }
    }

    pub fn with_measure(&self, measure: Measure) -> Self {
        Self {
            measure,
            ..self.clone()
        }
    }

    /// Correlation between rates `n` and `j` (both >= 1).
    pub fn rho(&self, n: usize, j: usize) -> f64 {
        self.corr.rho(n - 1, j - 1)
    }

    /// Hump level `lambda(T_n - t)` of every stochastic rate alive at `t`;
    /// zero for `L_0` and for rates below `q`.
    pub fn hump_levels(&self, t: f64, q: usize, out: &mut [f64]) {
        for (n, h) in out.iter_mut().enumerate() {
            *h = if n >= q.max(1) {
                self.vol.hump.at(self.tenor.date(n) - t)
            } else {
                0.0
            };
        }
    }

    /// `xi_n = lambda_n phi(L_n)` from precomputed hump levels.
    pub fn diffusions_from(&self, hump: &[f64], libors: &[f64], xi: &mut [f64]) {
        // the lognormal case is split out so the loop stays free of the
        // other maps' pow calls
        if let LocalVol::Lognormal = self.vol.phi {
            for ((x, &h), &l) in xi.iter_mut().zip(hump).zip(libors) {
                *x = h * l.max(0.0);
            }
            return;
        }
        for ((x, &h), &l) in xi.iter_mut().zip(hump).zip(libors) {
            *x = if h == 0.0 { 0.0 } else { h * self.vol.phi.phi_floored(l) };
        }
    }

    /// Fills `xi` with the diffusion of every stochastic rate alive at `t`
    /// (the others get 0).
    pub fn diffusions(&self, t: f64, q: usize, libors: &[f64], xi: &mut [f64]) {
        self.hump_levels(t, q, xi);
        for (x, &l) in xi.iter_mut().zip(libors) {
            if *x != 0.0 {
                *x *= self.vol.phi.phi_floored(l);
            }
        }
    }

    /// Drift of every alive rate given precomputed diffusions.
    ///
    /// With `rho_nj = e^{-beta |n - j|}` the sums over `j` telescope, so each
    /// measure needs a single pass.
    pub(crate) fn drifts_from(&self, q: usize, libors: &[f64], xi: &[f64], mu: &mut [f64]) {
        let n_rates = libors.len();
        let e = self.corr.decay();
        let start = q.max(1);
        mu[..start.min(n_rates)].iter_mut().for_each(|m| *m = 0.0);
        let term = |j: usize| {
            let tau = self.tenor.accrual(j);
            tau * xi[j] / (1.0 + tau * libors[j])
        };
        match self.measure {
            Measure::Spot => {
                let mut acc = 0.0;
                for n in start..n_rates {
                    acc = acc * e + term(n);
                    mu[n] = xi[n] * acc;
                }
            }
            Measure::Terminal => {
                let mut acc = 0.0;
                for n in (start..n_rates).rev() {
                    mu[n] = -xi[n] * acc;
                    acc = e * (acc + term(n));
                }
            }
        }
    }

    /// Drift `mu_n(t, L)` of an alive rate under the model's measure.
    pub fn drift(&self, n: usize, t: f64, libors: &[f64]) -> Result<f64> {
        let q = self.tenor.q(t);
        if n < q || n >= self.n_rates() {
            return Err(Error::DeadRate { rate: n, time: t });
        }
        let mut xi = vec![0.0; libors.len()];
        let mut mu = vec![0.0; libors.len()];
        self.diffusions(t, q, libors, &mut xi);
        self.drifts_from(q, libors, &xi, &mut mu);
        Ok(mu[n])
    }

    /// `P(0, T_N)` implied by the initial rates.
    pub fn terminal_discount(&self) -> f64 {
        *self
            .initial
            .discount_factors(&self.tenor)
            .last()
            .expect("non-empty tenor")
    }
}

/// Stub discount `P(t, T_{q(t)})` from the most recently reset rate.
fn stub_discount(tenor: &TenorStructure, t: f64, libors: &[f64]) -> f64 {
    let q = tenor.q(t);
    if q == 0 || q > tenor.n_periods() {
        return 1.0;
    }
    let tq = tenor.date(q);
    let elapsed = tenor.day_count().accrual(tq - t);
    1.0 / (1.0 + libors[q - 1] * elapsed)
}

/// Spot numeraire `B(t) = P(t, T_{q(t)}) prod_{n<q(t)} (1 + tau_n L_n(T_n))`.
///
/// `libors` is the simulated state at `t`; rates below `q(t)` are frozen at
/// their reset values, so the state carries everything the product needs.
pub fn spot_numeraire_at(tenor: &TenorStructure, t: f64, libors: &[f64]) -> f64 {
    let q = tenor.q(t).min(tenor.n_periods());
    let compounded: f64 = (0..q)
        .map(|n| 1.0 + tenor.accrual(n) * libors[n])
        .product();
    compounded * stub_discount(tenor, t, libors)
}

/// Zero bond `P(t, T_j)` for `T_j >= t` from the surviving rates at `t`.
pub fn bond_price_at(tenor: &TenorStructure, t: f64, libors: &[f64], j: usize) -> f64 {
    let q = tenor.q(t);
    if j < q {
        return 1.0;
    }
    let mut p = stub_discount(tenor, t, libors);
    for n in q..j {
        p /= 1.0 + tenor.accrual(n) * libors[n];
    }
    p
}

/// Numeraire of the model's measure at `t`, normalized to 1 at time 0.
pub fn numeraire_at(model: &LmmModel, t: f64, libors: &[f64]) -> f64 {
    match model.measure {
        Measure::Spot => spot_numeraire_at(&model.tenor, t, libors),
        Measure::Terminal => {
            let n = model.tenor.n_periods();
            bond_price_at(&model.tenor, t, libors, n) / model.terminal_discount()
        }
    }
}
