//! Libor Market Model dynamics: volatility, correlation, drifts, numeraires
//! and path simulation.

mod correlation;
mod grid;
mod model;
mod paths;
mod vol;

pub use correlation::{correlation_matrix, CorrelationSpec};
pub use grid::{GridSpacing, TimeGrid};
pub use model::{bond_price_at, numeraire_at, spot_numeraire_at, LmmModel, Measure};
pub use paths::{simulate_paths, simulate_paths_range, PathBatch, Scheme};
pub use vol::{hump_vol, local_vol_phi, HumpParams, LocalVol, VolSpec};
