//! Deep BSDE pricing of swaptions under the Libor Market Model.
//!
//! ```no_run
//! # fn main() -> libor_bsde::Result<()> {
//! use libor_bsde::bsde::{train_backward, SolverConfig};
//! use libor_bsde::instruments::{Side, Swaption};
//! use libor_bsde::lmm::{
//!     correlation_matrix, GridSpacing, HumpParams, LmmModel, LocalVol, Measure, TimeGrid, VolSpec,
//! };
//! use libor_bsde::tenor_curve::{initial_libors, DayCount, TenorStructure, ZeroCurve};
//!
//! let tenor = TenorStructure::new(vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5], DayCount::Act365)?;
//! let libors = initial_libors(&ZeroCurve::FlatContinuous(0.04), &tenor)?;
//! let vol = VolSpec::new(HumpParams::new(0.291, 1.483, 0.116, 1e-5), LocalVol::Lognormal)?;
//! let model = LmmModel::new(tenor, libors, vol, correlation_matrix(0.5, 4)?, Measure::Spot)?;
//! let berm = Swaption::new(Side::Receiver, 0.04, vec![1, 2, 3], 5, 1.0, &model.tenor)?;
//! let grid = TimeGrid::new(&model.tenor, 3, GridSpacing::Monthly)?;
//! let report = train_backward(&berm, &model, &grid, &SolverConfig::default())?;
//! println!("{} +- {:?}, deltas {:?}", report.price, report.std_error, report.deltas);
//! # Ok(())
//! # }
//! ```

pub mod alloc;
pub mod bsde;
pub mod cli;
pub mod error;
pub mod instruments;
pub mod lmm;
pub mod mc_bench;
pub mod neural;
pub mod rng;
pub mod tenor_curve;

pub use error::{Error, Result};
