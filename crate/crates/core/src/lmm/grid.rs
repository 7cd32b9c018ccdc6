use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tenor_curve::TenorStructure;

/// Target spacing between grid points; every tenor interval is split into
/// `max(1, round(len / dt))` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    Monthly,
    Quarterly,
    Custom(f64),
}

impl GridSpacing {
    pub fn dt(self) -> f64 {
        match self {
            GridSpacing::Monthly => 1.0 / 12.0,
            GridSpacing::Quarterly => 0.25,
            GridSpacing::Custom(dt) => dt,
        }
    }
}

/// Simulation grid `0 = t_0 < ... < t_m`, containing every tenor date up to
/// the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    q: Vec<usize>,
    tenor_index: Vec<Option<usize>>,
}

impl TimeGrid {
    /// Grid up to the tenor date `T_horizon_index`.
    pub fn new(tenor: &TenorStructure, horizon_index: usize, spacing: GridSpacing) -> Result<Self> {
        let dt = spacing.dt();
        if !(dt > 0.0) {
            return Err(Error::GridTenorMismatch(format!("non-positive spacing {dt}")));
        }
        if horizon_index == 0 || horizon_index > tenor.n_periods() {
            return Err(Error::GridTenorMismatch(format!(
                "horizon index {horizon_index} outside 1..={}",
                tenor.n_periods()
            )));
        }
        let mut points = vec![0.0];
        for k in 0..horizon_index {
            let (t0, t1) = (tenor.date(k), tenor.date(k + 1));
            let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
            for j in 1..steps {
                points.push(t0 + (t1 - t0) * j as f64 / steps as f64);
            }
            points.push(t1);
        }
        Self::from_points(tenor, points)
    }

    /// Grid from explicit points; they must start at 0, increase strictly and
    /// contain every tenor date up to the last point, which must itself be a
    /// tenor date.
    pub fn from_points(tenor: &TenorStructure, points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::GridTenorMismatch("grid must start at 0 with a step".into()));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::GridTenorMismatch("grid not strictly increasing".into()));
        }
        let horizon = *points.last().unwrap();
        let tenor_index: Vec<Option<usize>> = points.iter().map(|&t| tenor.index_of(t)).collect();
        if tenor_index.last().unwrap().is_none() {
            return Err(Error::GridTenorMismatch(format!("horizon {horizon} is not a tenor date")));
        }
        for (k, &d) in tenor.dates().iter().enumerate() {
            if d <= horizon && !tenor_index.contains(&Some(k)) {
                return Err(Error::GridTenorMismatch(format!("tenor date T_{k} = {d} missing")));
            }
        }
        // snap to the exact tenor values so that q(t) lookups are unambiguous
        let points: Vec<f64> = points
            .iter()
            .zip(&tenor_index)
            .map(|(&t, idx)| idx.map_or(t, |k| tenor.date(k)))
            .collect();
        let q = points.iter().map(|&t| tenor.q(t)).collect();
        Ok(Self {
            points,
            q,
            tenor_index,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `m`.
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.points[i]
    }

    pub fn dt(&self, i: usize) -> f64 {
        self.points[i + 1] - self.points[i]
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    /// `q(t_i)`: first tenor index strictly after `t_i`.
    pub fn q(&self, i: usize) -> usize {
        self.q[i]
    }

    /// Tenor index of grid point `i`, if it is a tenor date.
    pub fn tenor_index(&self, i: usize) -> Option<usize> {
        self.tenor_index[i]
    }

    /// Grid index of tenor date `T_k`.
    pub fn step_of_tenor(&self, k: usize) -> Option<usize> {
        self.tenor_index.iter().position(|&x| x == Some(k))
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.points
            .iter()
            .position(|&p| (p - t).abs() <= 1e-12)
            .ok_or(Error::OffGridTime(t))
    }
}
