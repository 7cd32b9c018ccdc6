//! Tenor structure, zero curves and initial forward Libor rates.
//!
//! Dates are year fractions measured on an ACT/365 clock. The accrual of a
//! period is the year-fraction difference re-expressed on the tenor's day-count
//! basis, so `Act365` accruals equal the raw differences.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DayCount {
    #[default]
    #[serde(rename = "ACT365", alias = "act365")]
    Act365,
    #[serde(rename = "ACT360", alias = "act360")]
    Act360,
}

impl DayCount {
    /// Accrual fraction for an interval given as an ACT/365 year fraction.
    pub fn accrual(self, year_fraction: f64) -> f64 {
        match self {
            DayCount::Act365 => year_fraction,
            DayCount::Act360 => year_fraction * 365.0 / 360.0,
        }
    }
}

/// Reset/payment dates `T_0 = 0 < T_1 < ... < T_N` and their accruals.
#[derive(Debug, Clone, PartialEq)]
pub struct TenorStructure {
    dates: Vec<f64>,
    accruals: Vec<f64>,
    day_count: DayCount,
}

impl TenorStructure {
    pub fn new(dates: Vec<f64>, day_count: DayCount) -> Result<Self> {
        if dates.len() < 2 {
            return Err(Error::EmptyTenor);
        }
        if dates[0] != 0.0 {
            return Err(Error::NonMonotoneDates { index: 0 });
        }
        if let Some(i) = dates.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::NonMonotoneDates { index: i + 1 });
        }
        let accruals = dates.windows(2).map(|w| day_count.accrual(w[1] - w[0])).collect();
        Ok(Self {
            dates,
            accruals,
            day_count,
        })
    }

    pub fn dates(&self) -> &[f64] {
        &self.dates
    }

    pub fn accruals(&self) -> &[f64] {
        &self.accruals
    }

    pub fn day_count(&self) -> DayCount {
        self.day_count
    }

    /// Number of Libor periods `N` (one fewer than the number of dates).
    pub fn n_periods(&self) -> usize {
        self.accruals.len()
    }

    pub fn date(&self, i: usize) -> f64 {
        self.dates[i]
    }

    pub fn accrual(&self, i: usize) -> f64 {
        self.accruals[i]
    }

    pub fn horizon(&self) -> f64 {
        *self.dates.last().expect("tenor has at least two dates")
    }

    /// Index of the first tenor date strictly after `t`, i.e. `q(t)` with
    /// `T_{q(t)-1} <= t < T_{q(t)}`. Returns `N + 1` for `t >= T_N`.
    pub fn q(&self, t: f64) -> usize {
        self.dates.partition_point(|&d| d <= t)
    }

    /// Exact lookup of a tenor date.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.dates.iter().position(|&d| (d - t).abs() <= 1e-12)
    }

    /// Reads a `index,date_yearfrac` CSV.
    pub fn from_csv(path: &Path, day_count: DayCount) -> Result<Self> {
        let values = read_indexed_csv(path, "date_yearfrac")?;
        Self::new(values, day_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ZeroCurve {
    /// Continuously compounded flat zero rate.
    FlatContinuous(f64),
    /// Continuously compounded zero rates at increasing knot times, linearly
    /// interpolated and held flat before the first knot. The last knot bounds
    /// the curve domain.
    PiecewiseZero(Vec<(f64, f64)>),
}

impl ZeroCurve {
    pub fn piecewise(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::EmptyTenor);
        }
        if let Some(i) = knots.windows(2).position(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::NonMonotoneDates { index: i + 1 });
        }
        if knots[0].0 <= 0.0 {
            return Err(Error::NonMonotoneDates { index: 0 });
        }
        Ok(Self::PiecewiseZero(knots))
    }

    /// Curve whose tenor-date discount factors are implied by the given
    /// forward Libors through `P(0,T_{n+1}) = P(0,T_n) / (1 + tau_n L_n)`.
    pub fn from_libors(tenor: &TenorStructure, libors: &InitialLibors) -> Result<Self> {
        if libors.len() != tenor.n_periods() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} libors", tenor.n_periods()),
                got: format!("{}", libors.len()),
            });
        }
        let mut discount = 1.0;
        let mut knots = Vec::with_capacity(libors.len());
        for (n, &l) in libors.values().iter().enumerate() {
            discount /= 1.0 + tenor.accrual(n) * l;
            let t = tenor.date(n + 1);
            knots.push((t, -discount.ln() / t));
        }
        Self::piecewise(knots)
    }

    pub fn max_time(&self) -> f64 {
        match self {
            ZeroCurve::FlatContinuous(_) => f64::INFINITY,
            ZeroCurve::PiecewiseZero(knots) => knots.last().map_or(0.0, |k| k.0),
        }
    }

    pub fn zero_rate(&self, t: f64) -> Result<f64> {
        match self {
            ZeroCurve::FlatContinuous(r) => Ok(*r),
            ZeroCurve::PiecewiseZero(knots) => {
                let last = knots[knots.len() - 1];
                if t > last.0 * (1.0 + 1e-12) {
                    return Err(Error::CurveDomainTooShort {
                        available: last.0,
                        required: t,
                    });
                }
                if t <= knots[0].0 {
                    return Ok(knots[0].1);
                }
                let j = knots.partition_point(|k| k.0 < t).min(knots.len() - 1);
                let (t0, z0) = knots[j - 1];
                let (t1, z1) = knots[j];
                Ok(z0 + (z1 - z0) * (t - t0) / (t1 - t0))
            }
        }
    }

    /// Discount factor `P(0, t)`.
    pub fn discount(&self, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(1.0);
        }
        Ok((-self.zero_rate(t)? * t).exp())
    }
}

/// Forward Libors `L_0(0), ..., L_{N-1}(0)` as simple annualized rates.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLibors(Vec<f64>);

impl InitialLibors {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Discount factors `P(0, T_0..T_N)` implied by the rates.
    pub fn discount_factors(&self, tenor: &TenorStructure) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        let mut p = 1.0;
        out.push(p);
        for (n, &l) in self.0.iter().enumerate() {
            p /= 1.0 + tenor.accrual(n) * l;
            out.push(p);
        }
        out
    }

    /// Copy with `L_index(0)` shifted by `bump`.
    pub fn bumped(&self, index: usize, bump: f64) -> Self {
        let mut v = self.0.clone();
        v[index] += bump;
        Self(v)
    }

    /// Reads a `index,libor_rate` CSV.
    pub fn from_csv(path: &Path) -> Result<Self> {
        Ok(Self(read_indexed_csv(path, "libor_rate")?))
    }
}

pub fn initial_libors(curve: &ZeroCurve, tenor: &TenorStructure) -> Result<InitialLibors> {
    if curve.max_time() < tenor.horizon() * (1.0 - 1e-12) {
        return Err(Error::CurveDomainTooShort {
            available: curve.max_time(),
            required: tenor.horizon(),
        });
    }
    let discounts = tenor
        .dates()
        .iter()
        .map(|&t| curve.discount(t))
        .collect::<Result<Vec<_>>>()?;
    let values = discounts
        .windows(2)
        .zip(tenor.accruals())
        .map(|(p, tau)| (p[0] / p[1] - 1.0) / tau)
        .collect();
    Ok(InitialLibors(values))
}

/// Par rate of the swap over periods `[start, end)`: the strike that zeroes
/// `sum_i (K - L_i(0)) tau_i P(0, T_{i+1})`.
pub fn par_swap_rate(
    curve: &ZeroCurve,
    tenor: &TenorStructure,
    start: usize,
    end: usize,
) -> Result<f64> {
    let libors = initial_libors(curve, tenor)?;
    par_swap_rate_from_libors(&libors, tenor, start, end)
}

pub fn par_swap_rate_from_libors(
    libors: &InitialLibors,
    tenor: &TenorStructure,
    start: usize,
    end: usize,
) -> Result<f64> {
    if start >= end || end > tenor.n_periods() {
        return Err(Error::InvalidInstrument(format!(
            "swap periods [{start}, {end}) outside tenor with {} periods",
            tenor.n_periods()
        )));
    }
    let discounts = libors.discount_factors(tenor);
    let mut annuity = 0.0;
    let mut float_leg = 0.0;
    for i in start..end {
        let w = tenor.accrual(i) * discounts[i + 1];
        annuity += w;
        float_leg += w * libors.values()[i];
    }
    if annuity == 0.0 || !annuity.is_finite() {
        return Err(Error::DegenerateAnnuity { start, end });
    }
    Ok(float_leg / annuity)
}

fn read_indexed_csv(path: &Path, column: &str) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::FixtureMissing(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = headers.iter().position(|h| h.trim() == column).ok_or_else(|| {
        Error::ConfigParse(format!("{}: missing column `{column}`", path.display()))
    })?;
    let idx = headers.iter().position(|h| h.trim() == "index").ok_or_else(|| {
        Error::ConfigParse(format!("{}: missing column `index`", path.display()))
    })?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|e| {
                Error::ConfigParse(format!("{}: bad number `{}`: {e}", path.display(), &record[i]))
            })
        };
        rows.push((parse(idx)? as usize, parse(col)?));
    }
    rows.sort_by_key(|r| r.0);
    if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
        return Err(Error::ConfigParse(format!(
            "{}: indices must be 0..n without gaps",
            path.display()
        )));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}
