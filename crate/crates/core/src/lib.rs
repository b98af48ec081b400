//! Recurrent networks that grow and shrink their hidden layer during
//! training.
//!
//! The hidden layer of a vanilla character-prediction RNN is resized on the
//! fly: an L1 penalty on each neuron's outgoing weights pushes unhelpful
//! neurons toward silence, neurons whose outgoing L1 norm falls below a
//! deletion threshold form a "reserve" pool, and a structural controller
//! probabilistically adds or deletes neurons so the reserve stays near a
//! target count. Networks start from a single neuron and settle on a size
//! matched to task difficulty.
//!
//! Crate layout:
//! - [`tasks`]: seeded character generators for the two synthetic grammars,
//!   a grammar validator, and the optimal-predictor loss oracle.
//! - [`matrix`]: dense row-major matrices with row/column insertion and
//!   removal.
//! - [`network`]: forward pass, cross-entropy loss, BPTT, the outgoing-weight
//!   L1 penalty, and the per-weight adaptive optimizer.
//! - [`structure`]: the add/delete controller.
//! - [`trainer`]: the per-run training loop and its log.
//! - [`checkpoint`]: snapshots sufficient to resume a run bit-exactly.
//! - [`harness`]: multi-seed sweeps, percentile aggregation, CSV output.

pub mod checkpoint;
pub mod harness;
pub mod matrix;
pub mod network;
pub mod structure;
pub mod tasks;
pub mod trainer;

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    /// A forward pass produced a non-finite activation or loss.
    #[error("non-finite value in forward pass at step {step}")]
    NonFinite { step: usize },

    /// Training produced a non-finite loss; the run is unrecoverable.
    #[error("training diverged at cycle {cycle}: non-finite loss")]
    Diverged { cycle: u64 },

    #[error("cannot delete the last remaining neuron")]
    LastNeuron,

    #[error("all {n} runs of the sweep failed")]
    AllRunsFailed { n: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Wraps an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
