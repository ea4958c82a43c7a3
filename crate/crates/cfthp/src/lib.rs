//! Link-level simulator for the cell-free multiuser MIMO downlink.
//!
//! The crate builds cluster-based Tomlinson-Harashima precoders (sparse and
//! reduced-dimension, centralized and decentralized) together with linear
//! matched-filter and zero-forcing baselines, and evaluates them by ergodic
//! sum-rate over Monte Carlo sweeps of SNR and CSIT quality.
//!
//! Modules follow the processing chain:
//!
//! * [`channel`] — network geometry, three-slope path loss, shadowing,
//!   Rayleigh fading, imperfect channel estimates, noise and SNR bookkeeping.
//! * [`clustering`] — per-user AP serving sets, the sparse effective channel,
//!   user clusters and selection matrices.
//! * [`linalg`] — dense complex matrices and the LQ factorization kernel the
//!   precoders are built on.
//! * [`precoders`] — THP filter synthesis, modulo/feedback encoding, and the
//!   ZF/MF baselines.
//! * [`metrics`] — SINR expressions, instantaneous rates, the nested Monte
//!   Carlo ergodic sum-rate engine, and a symbol-level verification chain.
//! * [`config`] / [`sweep`] — the experiment harness: scenario files, SNR and
//!   CSIT sweeps, CSV/series output with a replayable manifest.

pub mod channel;
pub mod clustering;
pub mod config;
pub mod linalg;
pub mod metrics;
pub mod modulation;
pub mod precoders;
pub mod rng;
pub mod selftest;
pub mod sweep;

use std::path::PathBuf;

pub use channel::{ChannelSet, LargeScaleMap, NetworkLayout, NoiseModel, TauMode};
pub use clustering::{ApSelection, UserClusters};
pub use config::ScenarioConfig;
pub use linalg::{CMat, LqFactors};
pub use metrics::{EsrScenario, RateReport, SinrBreakdown, SinrForm};
pub use modulation::Modulation;
pub use precoders::{BetaMode, EffectivePrecoder, PrecoderKind, ThpFilterSet, ThpStructure, ThpVariant};
pub use sweep::{SweepKind, SweepResult};

/// Errors surfaced by the simulator library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// LQ factorization hit a (near-)zero diagonal pivot.
    #[error("singular factorization: row {row} has negligible pivot {pivot:e}")]
    SingularFactorization { row: usize, pivot: f64 },

    /// A per-cluster factorization failed while assembling a
    /// reduced-dimension precoder.
    #[error("singular factorization in cluster of user {user}: row {row} has negligible pivot")]
    SingularCluster { user: usize, row: usize },

    #[error("singular linear system: pivot {pivot:e} at column {col}")]
    SingularSystem { col: usize, pivot: f64 },

    /// SINR denominator went nonpositive for a particular error draw; the
    /// caller decides whether to count and exclude or to abort.
    #[error("degenerate SINR for user {user}: denominator {denominator:e}")]
    DegenerateSinr { user: usize, denominator: f64 },

    /// Failure tagged with the Monte Carlo outer-draw index it occurred in.
    #[error("outer draw {index}: {source}")]
    OuterDraw {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error at line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config error: {0}")]
    ConfigInvalid(String),

    #[error("empty result set")]
    EmptyResult,

    #[error("series parse error at line {line}: {message}")]
    SeriesParse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wrap an error with the outer Monte Carlo draw it came from.
    pub(crate) fn in_outer_draw(self, index: usize) -> Self {
        Error::OuterDraw {
            index,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
