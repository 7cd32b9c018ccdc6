use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the hump-shaped volatility level
/// `(a (T_i - t) + d) exp(-b (T_i - t)) + c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumpParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl HumpParams {
    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    /// Constant level `c` for every rate and time.
    pub const fn flat(c: f64) -> Self {
        Self::new(0.0, 0.0, c, 0.0)
    }

    pub fn at(&self, time_to_reset: f64) -> f64 {
        (self.a * time_to_reset + self.d) * (-self.b * time_to_reset).exp() + self.c
    }
}

pub fn hump_vol(t: f64, reset: f64, hump: &HumpParams) -> f64 {
    hump.at(reset - t)
}

/// Time-homogeneous local volatility map applied to the rate level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalVol {
    Lognormal,
    Cev { p: f64 },
    Lcev { p: f64, eps: f64 },
    DisplacedLognormal { a: f64, b: f64 },
}

impl LocalVol {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LocalVol::Lognormal => Ok(()),
            LocalVol::Cev { p } if p > 0.0 && p < 1.0 => Ok(()),
            LocalVol::Lcev { p, eps } if p > 0.0 && p < 1.0 && eps > 0.0 => Ok(()),
            LocalVol::DisplacedLognormal { a, b } if b > 0.0 && a != 0.0 => Ok(()),
            other => Err(Error::InvalidVolSpec(format!("{other:?}"))),
        }
    }

    /// `phi(x)`; CEV-type maps reject negative rates.
    pub fn phi(&self, x: f64) -> Result<f64> {
        match *self {
            LocalVol::Lognormal => Ok(x),
            LocalVol::Cev { p } => {
                if x < 0.0 {
                    return Err(Error::NegativeRateForCev("CEV", x));
                }
                Ok(x.powf(p))
            }
            LocalVol::Lcev { p, eps } => {
                if x < 0.0 {
                    return Err(Error::NegativeRateForCev("LCEV", x));
                }
                if x == 0.0 {
                    return Ok(0.0);
                }
                Ok(x * eps.powf(p - 1.0).min(x.powf(p - 1.0)))
            }
            LocalVol::DisplacedLognormal { a, b } => Ok(b * x + a),
        }
    }

    /// `phi` with the rate floored at zero for the level-type maps, used inside
    /// the path simulation so that a discretization breach below zero
    /// absorbs the volatility instead of flipping its sign.
    pub fn phi_floored(&self, x: f64) -> f64 {
        match self {
            LocalVol::DisplacedLognormal { .. } => self.phi(x).unwrap_or(0.0),
            _ => self.phi(x.max(0.0)).unwrap_or(0.0),
        }
    }
}

pub fn local_vol_phi(phi: &LocalVol, x: f64) -> Result<f64> {
    phi.phi(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolSpec {
    pub hump: HumpParams,
    pub phi: LocalVol,
}

impl VolSpec {
    pub fn new(hump: HumpParams, phi: LocalVol) -> Result<Self> {
        phi.validate()?;
        Ok(Self { hump, phi })
    }

    pub fn zero() -> Self {
        Self {
            hump: HumpParams::flat(0.0),
            phi: LocalVol::Lognormal,
        }
    }

    /// Scalar diffusion `xi_n(t, L_n)` of a rate resetting at `reset`.
    pub fn xi(&self, t: f64, reset: f64, rate: f64) -> f64 {
        hump_vol(t, reset, &self.hump) * self.phi.phi_floored(rate)
    }

    /// Checks that the hump level is positive on `0 <= t <= reset` for every
    /// given reset date, sampling `samples` points per rate.
    pub fn hump_positive_on(&self, resets: &[f64], samples: usize) -> bool {
        resets.iter().all(|&reset| {
            (0..=samples).all(|k| {
                let t = reset * k as f64 / samples.max(1) as f64;
                hump_vol(t, reset, &self.hump) > 0.0
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STD_HUMP: HumpParams = HumpParams::new(0.291, 1.483, 0.116, 0.00001);

    #[test]
    fn hump_at_reset_is_c_plus_d() {
        assert!((hump_vol(2.0, 2.0, &STD_HUMP) - 0.11601).abs() < 1e-15);
    }

    #[test]
    fn hump_one_year_before_reset() {
        let expected = (0.291 + 0.00001) * (-1.483f64).exp() + 0.116;
        assert!((hump_vol(1.0, 2.0, &STD_HUMP) - expected).abs() < 1e-15);
        assert!((expected - 0.182046).abs() < 1e-6);
    }

    #[test]
    fn degenerate_hump_is_constant() {
        let h = HumpParams::new(0.0, 1.3, 0.2, 0.0);
        for t in [0.0, 0.4, 3.0] {
            assert_eq!(hump_vol(t, 3.0, &h), 0.2);
        }
    }

    #[test]
    fn local_vol_maps() {
        assert_eq!(LocalVol::Lognormal.phi(0.04).unwrap(), 0.04);
        assert!((LocalVol::Cev { p: 0.5 }.phi(0.04).unwrap() - 0.2).abs() < 1e-15);
        let lcev = LocalVol::Lcev { p: 0.5, eps: 0.01 };
        assert!((lcev.phi(0.04).unwrap() - 0.2).abs() < 1e-15);
        // below eps the map is linear with slope eps^(p-1)
        assert!((lcev.phi(0.0025).unwrap() - 0.0025 * 10.0).abs() < 1e-15);
        let dl = LocalVol::DisplacedLognormal { a: 0.01, b: 0.5 };
        assert!((dl.phi(0.04).unwrap() - 0.03).abs() < 1e-15);
    }

    #[test]
    fn cev_rejects_negative_rate() {
        assert!(matches!(
            LocalVol::Cev { p: 0.5 }.phi(-0.01),
            Err(Error::NegativeRateForCev(..))
        ));
        assert_eq!(LocalVol::Cev { p: 0.5 }.phi_floored(-0.01), 0.0);
        assert_eq!(LocalVol::Lognormal.phi_floored(-0.01), 0.0);
    }

    #[test]
    fn parameter_validation() {
        assert!(VolSpec::new(STD_HUMP, LocalVol::Cev { p: 1.0 }).is_err());
        assert!(VolSpec::new(STD_HUMP, LocalVol::Lcev { p: 0.5, eps: 0.0 }).is_err());
        assert!(VolSpec::new(STD_HUMP, LocalVol::DisplacedLognormal { a: 0.0, b: 1.0 }).is_err());
        let v = VolSpec::new(STD_HUMP, LocalVol::Lognormal).unwrap();
        assert!(v.hump_positive_on(&[0.5028, 5.0722, 15.2194], 200));
    }
}
