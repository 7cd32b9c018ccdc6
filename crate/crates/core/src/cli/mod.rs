//! Config-driven experiment runner behind the `libor-bsde` binary.

mod config;
mod run;

pub use config::{
    grid_to, CurveConfig, GridConfig, InstrumentConfig, InstrumentKind, Method, ModelConfig,
    NamedStrike, OutputConfig, Resolved, RunConfig, SimulateConfig, SolverSection, StrikeConfig,
    SweepConfig, TenorConfig,
};
pub use run::{
    emit_plotdata, exit_code, hump_black_vol, read_rows, run, run_config, Command, ConvergenceRow,
    DeltaConvergenceRow, DeltaRow, Manifest, Overrides, PlotRow, ResultRow, SweepRow,
};
