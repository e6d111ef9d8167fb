//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}{}: {detail}", row.map(|r| format!(" (record {r})")).unwrap_or_default())]
    Parse {
        path: PathBuf,
        /// 1-based data record index, when known.
        row: Option<usize>,
        detail: String,
    },

    #[error("unit {unit}: invariant violated on {field}: {detail}")]
    Invariant {
        unit: String,
        field: &'static str,
        detail: String,
    },

    #[error("duplicate generator id {id:?}")]
    DuplicateId { id: String },

    #[error("fleet is empty")]
    EmptyFleet,

    #[error("infeasible: {constraint} requires {needed} MW but only {available} MW is available")]
    Infeasible {
        constraint: &'static str,
        needed: f64,
        available: f64,
    },

    #[error("fleet has {n} units, exhaustive search is capped at {cap}")]
    FleetTooLarge { n: usize, cap: usize },

    #[error("no feasible commitment exists for this fleet")]
    NoFeasibleSubset,

    #[error("invalid parameter {name}: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    #[error("bid curve {id}: non-monotone step prices at step {step} (price {price} < previous {previous}); pass allow_nonmonotone to fit anyway")]
    NonMonotoneCurve {
        id: String,
        step: usize,
        price: f64,
        previous: f64,
    },

    #[error("least-squares fit is rank deficient: {detail}")]
    RankDeficient { detail: String },
}

impl Error {
    /// Process exit code per the CLI contract: 1 for infeasibility, 2 for
    /// input/validation problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible { .. } | Error::NoFeasibleSubset => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
