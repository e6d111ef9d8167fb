//! Relax-and-round unit commitment.

pub mod cli;
pub mod audit;
pub mod costfit;
pub mod oracle;
pub mod rounding;
pub mod stats;
pub mod dispatch;
pub mod error;
pub mod fleet;
pub mod relaxed;
pub mod synth;

pub use dispatch::{dispatch, Binding, DispatchResult};
pub use error::{Error, Result};
pub use fleet::{
    load_fleet, replicate_fleet, reserve_requirement, save_fleet, Fleet, FleetFormat, Generator,
    ReservePolicy, ReserveRequirement,
};
pub use relaxed::{kkt_residual, solve_relaxed, RelaxedOptions, RelaxedSolution, Relaxation};
