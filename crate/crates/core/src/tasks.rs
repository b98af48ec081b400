//! Character sources for the two synthetic prediction grammars, a grammar
//! validator, and a Monte Carlo estimate of the optimal predictor's loss.
//!
//! Both grammars share a four-symbol alphabet. The easy grammar emits groups
//! of `ab` digraphs in parentheses, extending each group with probability
//! 0.75 after every digraph. The hard grammar emits six-letter groups in
//! parentheses where each group is the reversal of the previous one with
//! exactly one letter flipped, so optimal prediction requires a six-step
//! memory.
//!
//! Streams are deterministic given a seed; replay is bit-exact because the
//! generator is a fixed, portable algorithm (ChaCha with 8 rounds).

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// The fixed character set, in index order.
pub const ALPHABET: [char; 4] = ['a', 'b', '(', ')'];

/// Number of distinct characters.
pub const VOCAB: usize = 4;

pub(crate) const IDX_A: u8 = 0;
pub(crate) const IDX_B: u8 = 1;
pub(crate) const IDX_OPEN: u8 = 2;
pub(crate) const IDX_CLOSE: u8 = 3;

/// Probability of extending an easy group with another digraph.
pub const CONTINUE_PROB: f64 = 0.75;

/// Letters per hard-grammar group.
pub const HARD_GROUP_LEN: usize = 6;

pub fn char_to_index(c: char) -> Option<usize> {
    ALPHABET.iter().position(|&a| a == c)
}

pub fn index_to_char(i: usize) -> char {
    ALPHABET[i]
}

/// Which grammar is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Easy,
    Hard,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<TaskKind> {
        match s {
            "easy" => Some(TaskKind::Easy),
            "hard" => Some(TaskKind::Hard),
            _ => None,
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TaskKind::Easy => write!(f, "easy"),
            TaskKind::Hard => write!(f, "hard"),
        }
    }
}

/// Task switches keyed by cycle index. The first boundary must sit at cycle
/// zero; later boundaries take effect at the start of the named cycle.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule(Vec<(u64, TaskKind)>);

impl Schedule {
    pub fn new(boundaries: Vec<(u64, TaskKind)>) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::InvalidSchedule("no boundaries given".into()));
        }
        if boundaries[0].0 != 0 {
            return Err(Error::InvalidSchedule(format!(
                "first boundary must be at cycle 0, got {}",
                boundaries[0].0
            )));
        }
        for w in boundaries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidSchedule(format!(
                    "boundaries must be sorted and distinct: cycle {} follows {}",
                    w[1].0, w[0].0
                )));
            }
        }
        Ok(Schedule(boundaries))
    }

    pub fn constant(kind: TaskKind) -> Self {
        Schedule(vec![(0, kind)])
    }

    /// The easy-hard-easy switching schedule: hard for the middle third of
    /// the run. For a 100000-cycle run the switches land at cycles 33000
    /// and 66000.
    pub fn easy_hard_easy(total_cycles: u64) -> Self {
        Schedule(vec![
            (0, TaskKind::Easy),
            (total_cycles * 33 / 100, TaskKind::Hard),
            (total_cycles * 66 / 100, TaskKind::Easy),
        ])
    }

    /// Grammar in effect during `cycle`.
    pub fn active_at(&self, cycle: u64) -> TaskKind {
        let mut kind = self.0[0].1;
        for &(c, k) in &self.0 {
            if c <= cycle {
                kind = k;
            } else {
                break;
            }
        }
        kind
    }

    fn boundary_at(&self, cycle: u64) -> Option<TaskKind> {
        self.0
            .iter()
            .find(|&&(c, _)| c == cycle)
            .map(|&(_, k)| k)
    }

    pub fn boundaries(&self) -> &[(u64, TaskKind)] {
        &self.0
    }

    /// True when the schedule never switches grammars.
    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&(_, k)| k == self.0[0].1)
    }
}

/// Infinite seeded character source obeying the scheduled grammar.
///
/// Characters are produced one group at a time. A schedule switch abandons
/// whatever remains of the current group and starts a fresh group of the
/// new grammar (for the hard grammar, with a fresh initial group).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskStream {
    rng: ChaCha8Rng,
    schedule: Schedule,
    active: TaskKind,
    pending: VecDeque<u8>,
    prev_hard: Option<[u8; HARD_GROUP_LEN]>,
}

impl TaskStream {
    pub fn easy(seed: u64) -> Self {
        Self::scheduled(seed, Schedule::constant(TaskKind::Easy))
    }

    pub fn hard(seed: u64) -> Self {
        Self::scheduled(seed, Schedule::constant(TaskKind::Hard))
    }

    pub fn constant(kind: TaskKind, seed: u64) -> Self {
        Self::scheduled(seed, Schedule::constant(kind))
    }

    pub fn scheduled(seed: u64, schedule: Schedule) -> Self {
        let active = schedule.active_at(0);
        TaskStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            schedule,
            active,
            pending: VecDeque::new(),
            prev_hard: None,
        }
    }

    /// Grammar currently emitting characters.
    pub fn active_kind(&self) -> TaskKind {
        self.active
    }

    /// Applies any schedule boundary that lands on `cycle`. The trainer
    /// calls this once at the start of every cycle.
    pub fn begin_cycle(&mut self, cycle: u64) {
        if let Some(kind) = self.schedule.boundary_at(cycle) {
            if kind != self.active {
                self.active = kind;
                self.pending.clear();
                self.prev_hard = None;
            }
        }
    }

    /// Next character as an alphabet index in `0..4`.
    pub fn next_index(&mut self) -> usize {
        if self.pending.is_empty() {
            self.refill();
        }
        self.pending.pop_front().unwrap() as usize
    }

    pub fn next_char(&mut self) -> char {
        index_to_char(self.next_index())
    }

    fn refill(&mut self) {
        match self.active {
            TaskKind::Easy => push_easy_group(&mut self.pending, &mut self.rng),
            TaskKind::Hard => {
                let group = next_hard_group(self.prev_hard.as_ref(), &mut self.rng);
                self.prev_hard = Some(group);
                self.pending.push_back(IDX_OPEN);
                self.pending.extend(group);
                self.pending.push_back(IDX_CLOSE);
            }
        }
    }
}

/// Appends one easy group: `(` then one or more `ab` digraphs, extending
/// with probability 0.75 after each digraph, then `)`.
fn push_easy_group(pending: &mut VecDeque<u8>, rng: &mut impl Rng) {
    pending.push_back(IDX_OPEN);
    loop {
        pending.push_back(IDX_A);
        pending.push_back(IDX_B);
        if rng.random::<f64>() >= CONTINUE_PROB {
            break;
        }
    }
    pending.push_back(IDX_CLOSE);
}

/// Letters of the next hard group: uniform i.i.d. for the first group,
/// otherwise the reversal of `prev` with one uniformly chosen flip.
fn next_hard_group(
    prev: Option<&[u8; HARD_GROUP_LEN]>,
    rng: &mut impl Rng,
) -> [u8; HARD_GROUP_LEN] {
    match prev {
        None => {
            let mut g = [0u8; HARD_GROUP_LEN];
            for l in &mut g {
                *l = rng.random_range(0..2u8);
            }
            g
        }
        Some(prev) => {
            let flip = rng.random_range(0..HARD_GROUP_LEN);
            hard_successor(prev, flip)
        }
    }
}

/// Reverses `prev` and flips the letter at `flip`.
pub fn hard_successor(
    prev: &[u8; HARD_GROUP_LEN],
    flip: usize,
) -> [u8; HARD_GROUP_LEN] {
    assert!(flip < HARD_GROUP_LEN);
    let mut next = [0u8; HARD_GROUP_LEN];
    for (i, slot) in next.iter_mut().enumerate() {
        *slot = prev[HARD_GROUP_LEN - 1 - i];
    }
    next[flip] = 1 - next[flip];
    next
}

/// True iff `text` is a sequence of complete groups valid under the grammar.
pub fn validate(kind: TaskKind, text: &str) -> bool {
    let mut groups: Vec<Vec<u8>> = Vec::new();
    let mut current: Option<Vec<u8>> = None;
    for ch in text.chars() {
        let Some(idx) = char_to_index(ch) else {
            return false;
        };
        let idx = idx as u8;
        match (idx, &mut current) {
            (IDX_OPEN, None) => current = Some(Vec::new()),
            (IDX_CLOSE, Some(_)) => groups.push(current.take().unwrap()),
            (IDX_A | IDX_B, Some(letters)) => letters.push(idx),
            _ => return false,
        }
    }
    if current.is_some() {
        return false; // truncated group
    }
    match kind {
        TaskKind::Easy => groups.iter().all(|g| {
            !g.is_empty()
                && g.len() % 2 == 0
                && g.chunks(2).all(|d| d == [IDX_A, IDX_B])
        }),
        TaskKind::Hard => {
            if !groups.iter().all(|g| g.len() == HARD_GROUP_LEN) {
                return false;
            }
            groups.windows(2).all(|w| {
                let prev: [u8; HARD_GROUP_LEN] = w[0].clone().try_into().unwrap();
                let next = &w[1];
                let hamming = (0..HARD_GROUP_LEN)
                    .filter(|&i| prev[HARD_GROUP_LEN - 1 - i] != next[i])
                    .count();
                hamming == 1
            })
        }
    }
}

/// Per-character loss of the optimal predictor on the easy grammar, in nats.
///
/// The only uncertain character follows a completed digraph (continue with
/// probability 0.75 or close with 0.25); a group with m digraphs has 2m + 2
/// characters and m such decisions, and m is geometric with mean 4.
pub fn easy_optimal_loss() -> f64 {
    let h = -(0.25 * 0.25f64.ln() + 0.75 * 0.75f64.ln());
    4.0 * h / 10.0
}

/// Per-character loss of the optimal predictor on the hard grammar, in nats:
/// one uniform six-way choice (the flipped position) per 8-character group.
pub fn hard_optimal_loss() -> f64 {
    (HARD_GROUP_LEN as f64).ln() / 8.0
}

/// Average per-character cross-entropy, in nats, of the predictor that knows
/// the grammar and the full history, estimated by Monte Carlo over a fresh
/// stream. Use `n_chars >= 1e5` for stable estimates.
pub fn oracle_loss(kind: TaskKind, n_chars: usize, seed: u64) -> f64 {
    let mut stream = TaskStream::constant(kind, seed);
    match kind {
        TaskKind::Easy => mc_loss(&mut stream, &mut EasyPredictor::new(), n_chars),
        TaskKind::Hard => mc_loss(&mut stream, &mut HardPredictor::new(), n_chars),
    }
}

/// Assigns probabilities to observed characters, then conditions on them.
trait Predictor {
    /// Probability the predictor put on `c` being next; advances state.
    fn prob_of(&mut self, c: u8) -> f64;
}

fn mc_loss<P: Predictor>(stream: &mut TaskStream, pred: &mut P, n_chars: usize) -> f64 {
    let mut total = 0.0;
    for _ in 0..n_chars {
        let c = stream.next_index() as u8;
        total -= pred.prob_of(c).ln();
    }
    total / n_chars as f64
}

enum EasyState {
    GroupStart,
    AfterOpen,
    AfterA,
    AfterB,
}

struct EasyPredictor {
    state: EasyState,
}

impl EasyPredictor {
    fn new() -> Self {
        EasyPredictor {
            state: EasyState::GroupStart,
        }
    }
}

impl Predictor for EasyPredictor {
    fn prob_of(&mut self, c: u8) -> f64 {
        let (p, next) = match (&self.state, c) {
            (EasyState::GroupStart, IDX_OPEN) => (1.0, EasyState::AfterOpen),
            (EasyState::AfterOpen, IDX_A) => (1.0, EasyState::AfterA),
            (EasyState::AfterA, IDX_B) => (1.0, EasyState::AfterB),
            (EasyState::AfterB, IDX_A) => (CONTINUE_PROB, EasyState::AfterA),
            (EasyState::AfterB, IDX_CLOSE) => (1.0 - CONTINUE_PROB, EasyState::GroupStart),
            _ => (0.0, EasyState::GroupStart), // grammar violation
        };
        self.state = next;
        p
    }
}

struct HardPredictor {
    prev: Option<[u8; HARD_GROUP_LEN]>,
    current: Vec<u8>,
    in_group: bool,
    flip_seen: bool,
}

impl HardPredictor {
    fn new() -> Self {
        HardPredictor {
            prev: None,
            current: Vec::with_capacity(HARD_GROUP_LEN),
            in_group: false,
            flip_seen: false,
        }
    }
}

impl Predictor for HardPredictor {
    fn prob_of(&mut self, c: u8) -> f64 {
        if !self.in_group {
            // expecting '('
            if c != IDX_OPEN {
                return 0.0;
            }
            self.in_group = true;
            self.current.clear();
            self.flip_seen = false;
            return 1.0;
        }
        if self.current.len() == HARD_GROUP_LEN {
            // expecting ')'
            if c != IDX_CLOSE {
                return 0.0;
            }
            self.in_group = false;
            self.prev = Some(self.current.clone().try_into().unwrap());
            return 1.0;
        }
        let i = self.current.len();
        let p = match self.prev {
            None => {
                // initial group: letters are i.i.d. uniform
                if c == IDX_A || c == IDX_B {
                    0.5
                } else {
                    0.0
                }
            }
            Some(prev) => {
                let expected = prev[HARD_GROUP_LEN - 1 - i];
                let remaining = (HARD_GROUP_LEN - i) as f64;
                if self.flip_seen {
                    if c == expected {
                        1.0
                    } else {
                        0.0
                    }
                } else if c == expected {
                    // flip must land on one of the remaining positions
                    (remaining - 1.0) / remaining
                } else if c == 1 - expected {
                    self.flip_seen = true;
                    1.0 / remaining
                } else {
                    0.0
                }
            }
        };
        self.current.push(c);
        p
    }
}
