//! Run snapshots.
//!
//! A checkpoint is a self-describing JSON dump of the full run state: the
//! config, hidden count and all weight matrices (row-major with declared
//! dimensions), biases, optimizer accumulators, hidden state, both RNG
//! states, and the log so far. Loading one resumes the run bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::network::{OptimizerState, RnnParams};
use crate::structure::StructuralEvent;
use crate::tasks::TaskStream;
use crate::trainer::{TrainConfig, TrainRecord};
use crate::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    /// Cycles completed.
    pub cycle: u64,
    pub params: RnnParams,
    pub optimizer: OptimizerState,
    pub hidden: Vec<f64>,
    pub stream: TaskStream,
    pub struct_rng: ChaCha8Rng,
    pub pending_input: Option<usize>,
    pub smoothed_loss: f64,
    pub last_raw_loss: f64,
    pub interval_events: Vec<StructuralEvent>,
    pub records: Vec<TrainRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self).map_err(|e| Error::Checkpoint {
            path: path.into(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Checkpoint {
            path: path.into(),
            source: e,
        })
    }
}
