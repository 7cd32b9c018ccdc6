//! Small dense networks with batch normalization, a reverse-mode tape and
//! Adam.

mod adam;
mod net;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use net::{
    glorot_limit, init_params, subnet_eval, subnet_forward, BnMode, HeadInit, NetDims,
    ParameterSet, RunningStats, BN_EPS, BN_EPS_HIDDEN, BN_MOMENTUM,
};
pub use tape::{BatchStats, Gradients, Tape, Var};
