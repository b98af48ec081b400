//! The per-run training loop.
//!
//! Each cycle reads the next characters from the task stream, runs the
//! forward pass, backpropagates through time, adds the L1 subgradient,
//! clips, applies the optimizer step, and then gives the structural
//! controller one chance to add or delete a neuron. Hidden state carries
//! across cycles (and across task switches); the character stream is
//! continuous, with targets shifted one character ahead of inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::network::{
    self, Gradients, OptimizerState, RnnParams, GRAD_CLIP,
};
use crate::structure::{self, StructuralEvent, StructureConfig};
use crate::tasks::{Schedule, TaskKind, TaskStream};
use crate::{Error, Result};

/// Exponential-moving-average factor for the reported loss.
pub const EMA_FACTOR: f64 = 0.999;

/// Sub-stream ids carving independent generators out of one seed. The task
/// stream seeds its own generator on the default stream 0.
const RNG_STREAM_INIT: u64 = 1;
const RNG_STREAM_STRUCT: u64 = 2;

/// Whether the hidden layer may change size during the run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Start from one neuron and let the controller resize.
    Variable,
    /// Keep exactly this many neurons; the controller is disabled but the
    /// L1 penalty still applies.
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub cycles: u64,
    /// Characters read per cycle.
    pub seq_len: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub mode: Mode,
    pub structure: StructureConfig,
    pub seed: u64,
    /// Cycles between log records.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cycles: 100_000,
            seq_len: 40,
            learning_rate: 0.1,
            schedule: Schedule::constant(TaskKind::Easy),
            mode: Mode::Variable,
            structure: StructureConfig::default(),
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles < 1 {
            return Err(Error::InvalidConfig("cycles must be at least 1".into()));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig("seq-len must be at least 2".into()));
        }
        if self.log_every < 1 {
            return Err(Error::InvalidConfig("log-every must be at least 1".into()));
        }
        if let Mode::Fixed(n) = self.mode {
            if n < 1 {
                return Err(Error::InvalidConfig(
                    "fixed-size must be at least 1".into(),
                ));
            }
        }
        self.structure.validate()
    }

    fn initial_hidden(&self) -> usize {
        match self.mode {
            Mode::Variable => 1,
            Mode::Fixed(n) => n,
        }
    }
}

/// Grammar in effect for a given cycle under the config's schedule.
pub fn apply_schedule(config: &TrainConfig, cycle: u64) -> TaskKind {
    config.schedule.active_at(cycle)
}

/// One log row: state as of the start of `cycle`, plus the structural
/// events since the previous row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub cycle: u64,
    /// EMA of per-character loss in nats.
    pub smoothed_loss: f64,
    /// Per-character loss of the most recent cycle.
    pub raw_loss: f64,
    pub n_hidden: usize,
    pub events: Vec<StructuralEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn final_n(&self) -> usize {
        self.records.last().expect("log has records").n_hidden
    }

    pub fn final_smoothed_loss(&self) -> f64 {
        self.records.last().expect("log has records").smoothed_loss
    }

    /// Smoothed-loss records with cycle in [lo, hi].
    pub fn smoothed_in(&self, lo: u64, hi: u64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| (lo..=hi).contains(&r.cycle))
            .map(|r| r.smoothed_loss)
            .collect()
    }
}

/// A single training run in progress.
pub struct Trainer {
    config: TrainConfig,
    params: RnnParams,
    optimizer: OptimizerState,
    hidden: Vec<f64>,
    stream: TaskStream,
    struct_rng: ChaCha8Rng,
    cycle: u64,
    smoothed_loss: f64,
    last_raw_loss: f64,
    /// Last character consumed; first input of the next cycle.
    pending_input: Option<usize>,
    interval_events: Vec<StructuralEvent>,
    records: Vec<TrainRecord>,
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init_rng = sub_rng(config.seed, RNG_STREAM_INIT);
        let n0 = config.initial_hidden();
        let params = RnnParams::init(n0, &mut init_rng)?;
        let optimizer = OptimizerState::zeros_like(&params);
        let ln_vocab = (crate::tasks::VOCAB as f64).ln();
        Ok(Trainer {
            stream: TaskStream::scheduled(config.seed, config.schedule.clone()),
            struct_rng: sub_rng(config.seed, RNG_STREAM_STRUCT),
            hidden: vec![0.0; n0],
            cycle: 0,
            smoothed_loss: ln_vocab,
            last_raw_loss: ln_vocab,
            pending_input: None,
            interval_events: Vec::new(),
            records: Vec::new(),
            params,
            optimizer,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Cycles completed so far.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn n_hidden(&self) -> usize {
        self.params.n_hidden()
    }

    /// Read access to the current weights, e.g. for inspecting norms.
    pub fn params(&self) -> &RnnParams {
        &self.params
    }

    pub fn smoothed_loss(&self) -> f64 {
        self.smoothed_loss
    }

    fn record(&mut self) {
        self.records.push(TrainRecord {
            cycle: self.cycle,
            smoothed_loss: self.smoothed_loss,
            raw_loss: self.last_raw_loss,
            n_hidden: self.params.n_hidden(),
            events: std::mem::take(&mut self.interval_events),
        });
    }

    /// Runs one training cycle.
    pub fn step(&mut self) -> Result<()> {
        if self.cycle % self.config.log_every == 0 {
            self.record();
        }
        self.stream.begin_cycle(self.cycle);

        let seq_len = self.config.seq_len;
        let mut inputs = Vec::with_capacity(seq_len);
        inputs.push(match self.pending_input {
            Some(c) => c,
            None => self.stream.next_index(),
        });
        for _ in 1..seq_len {
            inputs.push(self.stream.next_index());
        }
        let mut targets = Vec::with_capacity(seq_len);
        targets.extend_from_slice(&inputs[1..]);
        targets.push(self.stream.next_index());
        self.pending_input = Some(targets[seq_len - 1]);

        let tape = network::forward(&self.params, &self.hidden, &inputs, &targets)
            .map_err(|_| Error::Diverged { cycle: self.cycle })?;

        let mut grads: Gradients = network::backward(&self.params, &tape);
        grads.clip(GRAD_CLIP);
        network::optimizer_update(
            &mut self.params,
            &grads,
            &mut self.optimizer,
            self.config.learning_rate,
        );
        let dm: f64 = std::env::var("GROWRNN_DECAY").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0);
        network::l1_decay(
            &mut self.params,
            dm * self.config.learning_rate * self.config.structure.a_l1reg,
        );
        self.hidden = tape.h_final().to_vec();

        if let Mode::Variable = self.config.mode {
            let events = structure::structural_step(
                &mut self.params,
                &mut self.optimizer,
                &mut self.hidden,
                &self.config.structure,
                &mut self.struct_rng,
                self.cycle,
            );
            self.interval_events.extend(events);
        }

        let per_char = tape.loss / seq_len as f64;
        self.smoothed_loss = EMA_FACTOR * self.smoothed_loss + (1.0 - EMA_FACTOR) * per_char;
        self.last_raw_loss = per_char;
        self.cycle += 1;
        Ok(())
    }

    /// Emits the final record and hands over the log.
    pub fn finish(mut self) -> TrainLog {
        self.record();
        TrainLog {
            seed: self.config.seed,
            records: self.records,
        }
    }

    /// Runs the configured number of cycles to completion.
    pub fn run(mut self) -> Result<TrainLog> {
        while self.cycle < self.config.cycles {
            self.step()?;
        }
        Ok(self.finish())
    }

    /// Snapshot sufficient to resume this run bit-exactly.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            cycle: self.cycle,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
            hidden: self.hidden.clone(),
            stream: self.stream.clone(),
            struct_rng: self.struct_rng.clone(),
            pending_input: self.pending_input,
            smoothed_loss: self.smoothed_loss,
            last_raw_loss: self.last_raw_loss,
            interval_events: self.interval_events.clone(),
            records: self.records.clone(),
        }
    }

    /// Rebuilds a trainer from a snapshot.
    pub fn resume(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        if !ck.params.shape_consistent() || ck.hidden.len() != ck.params.n_hidden() {
            return Err(Error::InvalidConfig(
                "checkpoint state arrays disagree on the hidden count".into(),
            ));
        }
        Ok(Trainer {
            config: ck.config,
            params: ck.params,
            optimizer: ck.optimizer,
            hidden: ck.hidden,
            stream: ck.stream,
            struct_rng: ck.struct_rng,
            cycle: ck.cycle,
            smoothed_loss: ck.smoothed_loss,
            last_raw_loss: ck.last_raw_loss,
            pending_input: ck.pending_input,
            interval_events: ck.interval_events,
            records: ck.records,
        })
    }
}

/// Convenience wrapper: configure, run, return the log.
pub fn run(config: TrainConfig) -> Result<TrainLog> {
    Trainer::new(config)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN4: f64 = 1.3862943611198906;

    fn quick_config(cycles: u64) -> TrainConfig {
        TrainConfig {
            cycles,
            log_every: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn fixed_mode_keeps_size_constant() {
        let config = TrainConfig {
            mode: Mode::Fixed(5),
            ..quick_config(300)
        };
        let log = run(config).unwrap();
        assert_eq!(log.records.len(), 7); // cycles/log_every + 1
        assert!(log.records.iter().all(|r| r.n_hidden == 5));
        assert!(log.records.iter().all(|r| r.events.is_empty()));
    }

    #[test]
    fn variable_mode_starts_from_one_neuron() {
        let log = run(quick_config(200)).unwrap();
        let first = &log.records[0];
        assert_eq!(first.cycle, 0);
        assert_eq!(first.n_hidden, 1);
        // before any update the smoothed loss is the uniform baseline
        assert_eq!(first.smoothed_loss, 4.0f64.ln());
        assert!((first.smoothed_loss - LN4).abs() < 1e-15);
    }

    #[test]
    fn schedule_boundaries_match_experiment() {
        let config = TrainConfig {
            schedule: Schedule::easy_hard_easy(100_000),
            ..TrainConfig::default()
        };
        assert_eq!(apply_schedule(&config, 32_999), TaskKind::Easy);
        assert_eq!(apply_schedule(&config, 33_000), TaskKind::Hard);
        assert_eq!(apply_schedule(&config, 66_000), TaskKind::Easy);
        let constant = TrainConfig::default();
        for c in [0, 1, 50_000, 100_000] {
            assert_eq!(apply_schedule(&constant, c), TaskKind::Easy);
        }
    }

    #[test]
    fn identical_configs_reproduce_identical_logs() {
        let a = run(quick_config(250)).unwrap();
        let b = run(quick_config(250)).unwrap();
        assert_eq!(a, b);
        let c = run(TrainConfig {
            seed: 1,
            ..quick_config(250)
        })
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn learning_reduces_easy_loss() {
        let log = run(quick_config(2000)).unwrap();
        let last = log.final_smoothed_loss();
        assert!(
            last < 1.1,
            "smoothed loss {last} should drop well below the ln4 baseline"
        );
        // event totals match the size change
        let added: i64 = log
            .records
            .iter()
            .flat_map(|r| &r.events)
            .filter(|e| e.kind == crate::structure::EventKind::Added)
            .count() as i64;
        let deleted: i64 = log
            .records
            .iter()
            .flat_map(|r| &r.events)
            .filter(|e| e.kind == crate::structure::EventKind::Deleted)
            .count() as i64;
        assert_eq!(log.final_n() as i64 - 1, added - deleted);
    }

    #[test]
    fn log_grid_includes_final_cycle() {
        let log = run(quick_config(250)).unwrap();
        let cycles: Vec<u64> = log.records.iter().map(|r| r.cycle).collect();
        assert_eq!(cycles, vec![0, 50, 100, 150, 200, 250]);
    }

    #[test]
    fn checkpoint_resume_is_bit_exact() {
        let config = quick_config(300);
        let uninterrupted = run(config.clone()).unwrap();

        let mut first_half = Trainer::new(config).unwrap();
        for _ in 0..137 {
            first_half.step().unwrap();
        }
        let ck = first_half.checkpoint();
        let mut resumed = Trainer::resume(ck).unwrap();
        while resumed.cycle() < resumed.config().cycles {
            resumed.step().unwrap();
        }
        let log = resumed.finish();
        assert_eq!(log, uninterrupted);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(run(TrainConfig {
            cycles: 0,
            ..TrainConfig::default()
        })
        .is_err());
        assert!(run(TrainConfig {
            seq_len: 1,
            ..quick_config(10)
        })
        .is_err());
        assert!(run(TrainConfig {
            mode: Mode::Fixed(0),
            ..quick_config(10)
        })
        .is_err());
    }
}
