//! Physically settled swaptions and their discounted exercise values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmm::{bond_price_at, numeraire_at, LmmModel};
use crate::tenor_curve::{par_swap_rate_from_libors, InitialLibors, TenorStructure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Payer,
    Receiver,
}

impl Side {
    /// +1 for a payer (long the floating leg), -1 for a receiver.
    fn sign(self) -> f64 {
        match self {
            Side::Payer => 1.0,
            Side::Receiver => -1.0,
        }
    }
}

/// How the swap legs are discounted inside the exercise value.
///
/// `UndiscountedLegs` sums the undiscounted period cash flows `(K - L_i) tau_i` and
/// divides by the numeraire only. `FullyDiscounted` weights each period by the
/// bond `P(T_k, T_{i+1})` rebuilt from the surviving rates, which is the actual
/// value of the swap entered at `T_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicVariant {
    #[default]
    UndiscountedLegs,
    FullyDiscounted,
}

/// A swaption exercisable at a set of tenor dates into the swap that runs from
/// the exercise date to `T_underlying_end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Swaption {
    pub side: Side,
    pub strike: f64,
    /// Tenor indices of the exercise dates, strictly increasing.
    pub exercise: Vec<usize>,
    pub underlying_end: usize,
    pub notional: f64,
}

impl Swaption {
    pub fn new(
        side: Side,
        strike: f64,
        exercise: Vec<usize>,
        underlying_end: usize,
        notional: f64,
        tenor: &TenorStructure,
    ) -> Result<Self> {
        if exercise.is_empty() {
            return Err(Error::InvalidInstrument("no exercise dates".into()));
        }
        if exercise.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInstrument("exercise dates not increasing".into()));
        }
        if underlying_end > tenor.n_periods() {
            return Err(Error::InvalidInstrument(format!(
                "swap end T_{underlying_end} beyond tenor end T_{}",
                tenor.n_periods()
            )));
        }
        if *exercise.last().unwrap() >= underlying_end {
            return Err(Error::InvalidInstrument(
                "exercise must precede the swap end".into(),
            ));
        }
        if !strike.is_finite() || !(notional > 0.0) {
            return Err(Error::InvalidInstrument(format!(
                "strike {strike}, notional {notional}"
            )));
        }
        Ok(Self {
            side,
            strike,
            exercise,
            underlying_end,
            notional,
        })
    }

    pub fn european(
        side: Side,
        strike: f64,
        expiry: usize,
        underlying_end: usize,
        tenor: &TenorStructure,
    ) -> Result<Self> {
        Self::new(side, strike, vec![expiry], underlying_end, 1.0, tenor)
    }

    pub fn is_european(&self) -> bool {
        self.exercise.len() == 1
    }

    /// Tenor index of the last exercise date.
    pub fn expiry(&self) -> usize {
        *self.exercise.last().unwrap()
    }

    pub fn first_exercise(&self) -> usize {
        self.exercise[0]
    }

    /// The same swaption restricted to its first `count` exercise dates.
    pub fn truncated(&self, count: usize) -> Self {
        Self {
            exercise: self.exercise[..count.clamp(1, self.exercise.len())].to_vec(),
            ..self.clone()
        }
    }

    /// European swaption on the same swap, exercisable only at `T_k`.
    pub fn european_at(&self, k: usize) -> Self {
        Self {
            exercise: vec![k],
            ..self.clone()
        }
    }
}

/// ATM strike: par rate at time 0 of the swap over `[T_start, T_end)`.
pub fn atm_strike(
    tenor: &TenorStructure,
    initial: &InitialLibors,
    start: usize,
    end: usize,
) -> Result<f64> {
    par_swap_rate_from_libors(initial, tenor, start, end)
}

/// Value at `T_k` of entering the underlying swap, before division by the
/// numeraire. Can be negative.
pub fn swap_value_at(
    spec: &Swaption,
    tenor: &TenorStructure,
    k: usize,
    libors: &[f64],
    variant: IntrinsicVariant,
) -> f64 {
    let t = tenor.date(k);
    let sign = spec.side.sign();
    let mut v = 0.0;
    let mut bond = 1.0;
    for i in k..spec.underlying_end {
        let tau = tenor.accrual(i);
        let weight = match variant {
            IntrinsicVariant::UndiscountedLegs => 1.0,
            IntrinsicVariant::FullyDiscounted => {
                bond /= 1.0 + tau * libors[i];
                bond
            }
        };
        v += sign * (libors[i] - spec.strike) * tau * weight;
    }
    debug_assert!(variant == IntrinsicVariant::UndiscountedLegs || {
        let p = bond_price_at(tenor, t, libors, spec.underlying_end);
        (p - bond).abs() <= 1e-12 * p
    });
    spec.notional * v
}

/// Discounted intrinsic value at exercise date `T_k`: the swap value divided
/// by the model numeraire at `T_k`. Not floored.
pub fn disc_intrinsic_value(
    spec: &Swaption,
    model: &LmmModel,
    k: usize,
    libors: &[f64],
    variant: IntrinsicVariant,
) -> Result<f64> {
    if !spec.exercise.contains(&k) {
        return Err(Error::NotAnExerciseDate(k));
    }
    Ok(disc_intrinsic_unchecked(spec, model, k, libors, variant))
}

pub(crate) fn disc_intrinsic_unchecked(
    spec: &Swaption,
    model: &LmmModel,
    k: usize,
    libors: &[f64],
    variant: IntrinsicVariant,
) -> f64 {
    let t = model.tenor.date(k);
    swap_value_at(spec, &model.tenor, k, libors, variant) / numeraire_at(model, t, libors)
}

/// Discounted payoff `g` of a European swaption at its expiry.
pub fn discounted_terminal_payoff(
    spec: &Swaption,
    model: &LmmModel,
    libors_at_expiry: &[f64],
    variant: IntrinsicVariant,
) -> f64 {
    disc_intrinsic_unchecked(spec, model, spec.expiry(), libors_at_expiry, variant).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmm::{correlation_matrix, Measure, VolSpec};
    use crate::tenor_curve::DayCount;
    use proptest::prelude::*;

    fn model(libors: Vec<f64>, measure: Measure) -> LmmModel {
        let n = libors.len();
        let dates = (0..=n).map(|i| 0.5 * i as f64).collect();
        LmmModel::new(
            TenorStructure::new(dates, DayCount::Act365).unwrap(),
            InitialLibors::new(libors),
            VolSpec::zero(),
            correlation_matrix(0.5, n - 1).unwrap(),
            measure,
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_receiver() {
        let m = model(vec![0.04, 0.04, 0.02], Measure::Spot);
        let s = Swaption::european(Side::Receiver, 0.03, 2, 3, &m.tenor).unwrap();
        let v = disc_intrinsic_value(&s, &m, 2, &[0.04, 0.04, 0.02], IntrinsicVariant::UndiscountedLegs)
            .unwrap();
        assert!((v - 0.005 / 1.0404).abs() < 1e-15);
        assert!((v - 0.0048058).abs() < 1e-7);
    }

    #[test]
    fn zero_rates_give_undiscounted_annuity() {
        let m = model(vec![0.0; 4], Measure::Spot);
        let s = Swaption::european(Side::Receiver, 0.03, 1, 4, &m.tenor).unwrap();
        let v = discounted_terminal_payoff(&s, &m, &[0.0; 4], IntrinsicVariant::UndiscountedLegs);
        assert!((v - 0.03 * 1.5).abs() < 1e-15);
    }

    #[test]
    fn atm_is_zero() {
        let m = model(vec![0.04; 4], Measure::Spot);
        let s = Swaption::european(Side::Payer, 0.04, 1, 4, &m.tenor).unwrap();
        for variant in [IntrinsicVariant::UndiscountedLegs, IntrinsicVariant::FullyDiscounted] {
            assert_eq!(discounted_terminal_payoff(&s, &m, &[0.04; 4], variant), 0.0);
        }
    }

    #[test]
    fn fully_discounted_weights() {
        let l = [0.04, 0.05, 0.06];
        let m = model(l.to_vec(), Measure::Spot);
        let s = Swaption::european(Side::Receiver, 0.08, 1, 3, &m.tenor).unwrap();
        let v = disc_intrinsic_value(&s, &m, 1, &l, IntrinsicVariant::FullyDiscounted).unwrap();
        let expected = (0.03 * 0.5 / 1.025 + 0.02 * 0.5 / (1.025 * 1.03)) / 1.02;
        assert!((v - expected).abs() < 1e-15);
    }

    #[test]
    fn terminal_measure_deflator() {
        let l = [0.04, 0.05, 0.06];
        let m = model(l.to_vec(), Measure::Terminal);
        let s = Swaption::european(Side::Receiver, 0.08, 1, 3, &m.tenor).unwrap();
        let v = discounted_terminal_payoff(&s, &m, &l, IntrinsicVariant::UndiscountedLegs);
        let p0n = 1.0 / (1.02 * 1.025 * 1.03);
        let ptn = 1.0 / (1.025 * 1.03);
        assert!((v - (0.03 * 0.5 + 0.02 * 0.5) * p0n / ptn).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_specs() {
        let m = model(vec![0.04; 4], Measure::Spot);
        let t = &m.tenor;
        assert!(Swaption::new(Side::Payer, 0.04, vec![], 4, 1.0, t).is_err());
        assert!(Swaption::new(Side::Payer, 0.04, vec![2, 1], 4, 1.0, t).is_err());
        assert!(Swaption::new(Side::Payer, 0.04, vec![4], 4, 1.0, t).is_err());
        assert!(Swaption::new(Side::Payer, 0.04, vec![1], 5, 1.0, t).is_err());
        let s = Swaption::new(Side::Payer, 0.04, vec![1, 2], 4, 1.0, t).unwrap();
        assert!(matches!(
            disc_intrinsic_value(&s, &m, 3, &[0.04; 4], IntrinsicVariant::UndiscountedLegs),
            Err(Error::NotAnExerciseDate(3))
        ));
    }

    proptest! {
        #[test]
        fn parity_and_monotonicity(
            rates in proptest::collection::vec(0.0f64..0.1, 5),
            k in 0.0f64..0.1,
            dk in 0.0f64..0.02,
            fully in proptest::bool::ANY,
        ) {
            let m = model(rates.clone(), Measure::Spot);
            let variant = if fully { IntrinsicVariant::FullyDiscounted } else { IntrinsicVariant::UndiscountedLegs };
            let pay = Swaption::new(Side::Payer, k, vec![1, 2], 5, 1.0, &m.tenor).unwrap();
            let rec = Swaption { side: Side::Receiver, ..pay.clone() };
            for ex in [1, 2] {
                let p = disc_intrinsic_value(&pay, &m, ex, &rates, variant).unwrap();
                let r = disc_intrinsic_value(&rec, &m, ex, &rates, variant).unwrap();
                prop_assert!((p + r).abs() < 1e-15);
                prop_assert!((p.max(0.0) - r.max(0.0) - p).abs() < 1e-15);
                let higher = Swaption { strike: k + dk, ..rec.clone() };
                prop_assert!(disc_intrinsic_value(&higher, &m, ex, &rates, variant).unwrap() >= r);
            }
        }
    }
}
