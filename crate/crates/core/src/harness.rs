//! Multi-seed sweeps, percentile aggregation, and CSV output.
//!
//! A sweep runs the same config across consecutive seeds (in parallel when a
//! rayon pool is available), then aggregates the per-cycle logs into median
//! and inter-quartile rows. Aggregation happens after all runs complete and
//! is independent of run order, so serial and parallel sweeps emit identical
//! bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::trainer::{self, Mode, TrainConfig, TrainLog};
use crate::{Error, Result};

/// A run that ended with an error; excluded from aggregation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Final state of one completed run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub final_smoothed_loss: f64,
    pub final_n: usize,
}

/// Percentiles across runs at one log cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub cycle: u64,
    pub loss_q25: f64,
    pub loss_med: f64,
    pub loss_q75: f64,
    pub n_q25: usize,
    pub n_med: usize,
    pub n_q75: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<RunFailure>,
}

impl SweepResult {
    pub fn final_row(&self) -> &SweepRow {
        self.rows.last().expect("sweep has rows")
    }
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(p/100 * n)` of
/// the sorted sample, so the result is always an actual sample value.
fn nearest_rank<T: Copy + PartialOrd>(values: &[T], p: f64) -> T {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("comparable values"));
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.max(1) - 1]
}

/// Runs `n_runs` copies of `base` with seeds `seed_base..seed_base+n_runs`.
/// Failed runs are excluded from aggregation with a warning on stderr; the
/// sweep itself fails only if every run fails.
pub fn sweep(base: &TrainConfig, n_runs: usize, seed_base: u64) -> Result<SweepResult> {
    if n_runs < 1 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    base.validate()?;
    let outcomes: Vec<(u64, Result<TrainLog>)> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed_base + i;
            let config = TrainConfig {
                seed,
                ..base.clone()
            };
            (seed, trainer::run(config))
        })
        .collect();

    let mut logs = Vec::with_capacity(n_runs);
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(log) => logs.push(log),
            Err(e) => {
                eprintln!("warning: run with seed {seed} failed: {e}");
                failures.push(RunFailure {
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    if logs.is_empty() {
        return Err(Error::AllRunsFailed { n: n_runs });
    }
    Ok(aggregate(logs, failures))
}

/// Aggregates completed logs into percentile rows. Logs must share the same
/// cycle grid (same config apart from the seed).
pub fn aggregate(mut logs: Vec<TrainLog>, failures: Vec<RunFailure>) -> SweepResult {
    logs.sort_by_key(|log| log.seed);
    let grid: Vec<u64> = logs[0].records.iter().map(|r| r.cycle).collect();
    for log in &logs {
        assert_eq!(
            log.records.len(),
            grid.len(),
            "runs disagree on the log grid"
        );
    }

    let rows = grid
        .iter()
        .enumerate()
        .map(|(idx, &cycle)| {
            let losses: Vec<f64> = logs.iter().map(|l| l.records[idx].smoothed_loss).collect();
            let ns: Vec<usize> = logs.iter().map(|l| l.records[idx].n_hidden).collect();
            SweepRow {
                cycle,
                loss_q25: nearest_rank(&losses, 25.0),
                loss_med: nearest_rank(&losses, 50.0),
                loss_q75: nearest_rank(&losses, 75.0),
                n_q25: nearest_rank(&ns, 25.0),
                n_med: nearest_rank(&ns, 50.0),
                n_q75: nearest_rank(&ns, 75.0),
            }
        })
        .collect();

    let runs = logs
        .iter()
        .map(|log| RunSummary {
            seed: log.seed,
            final_smoothed_loss: log.final_smoothed_loss(),
            final_n: log.final_n(),
        })
        .collect();

    SweepResult {
        rows,
        runs,
        failures,
    }
}

/// Runs one variable-size sweep plus one fixed-size sweep per entry in
/// `sizes`, all with the same task config, and returns labeled results
/// ("variable", "fixed_10", ...).
pub fn compare_fixed(
    base: &TrainConfig,
    sizes: &[usize],
    n_runs: usize,
    seed_base: u64,
) -> Result<Vec<(String, SweepResult)>> {
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("size list must not be empty".into()));
    }
    if sizes.iter().any(|&s| s < 1) {
        return Err(Error::InvalidConfig("sizes must be at least 1".into()));
    }
    let mut results = Vec::with_capacity(sizes.len() + 1);
    let variable = TrainConfig {
        mode: Mode::Variable,
        ..base.clone()
    };
    results.push(("variable".to_string(), sweep(&variable, n_runs, seed_base)?));
    for &size in sizes {
        let fixed = TrainConfig {
            mode: Mode::Fixed(size),
            ..base.clone()
        };
        results.push((format!("fixed_{size}"), sweep(&fixed, n_runs, seed_base)?));
    }
    Ok(results)
}

/// Writes `cycle,loss_q25,loss_med,loss_q75,n_q25,n_med,n_q75` rows. Floats
/// use shortest-round-trip formatting with a decimal point, no locale.
pub fn write_csv<W: Write>(result: &SweepResult, mut w: W) -> std::io::Result<()> {
    writeln!(w, "cycle,loss_q25,loss_med,loss_q75,n_q25,n_med,n_q75")?;
    for r in &result.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.cycle, r.loss_q25, r.loss_med, r.loss_q75, r.n_q25, r.n_med, r.n_q75
        )?;
    }
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_csv(result, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Companion plot script: loads the named CSVs with matplotlib and draws the
/// loss and size curves. The artifact itself produces no graphics.
pub fn write_plot_script(csvs: &[(String, std::path::PathBuf)], path: &Path) -> Result<()> {
    let mut body = String::from(
        "#!/usr/bin/env python3\n\
         # Plots sweep CSVs (cycle, loss and size percentiles).\n\
         import matplotlib.pyplot as plt\n\
         import csv\n\n\
         def load(path):\n\
         \x20   cols = {}\n\
         \x20   with open(path) as f:\n\
         \x20       for row in csv.DictReader(f):\n\
         \x20           for k, v in row.items():\n\
         \x20               cols.setdefault(k, []).append(float(v))\n\
         \x20   return cols\n\n\
         fig, (ax_loss, ax_n) = plt.subplots(2, 1, sharex=True, figsize=(8, 8))\n",
    );
    for (label, csv_path) in csvs {
        body.push_str(&format!(
            "d = load({:?})\n\
             ax_loss.plot(d['cycle'], d['loss_med'], label={:?})\n\
             ax_loss.fill_between(d['cycle'], d['loss_q25'], d['loss_q75'], alpha=0.2)\n\
             ax_n.plot(d['cycle'], d['n_med'], label={:?})\n\
             ax_n.fill_between(d['cycle'], d['n_q25'], d['n_q75'], alpha=0.2)\n",
            csv_path.display().to_string(),
            label,
            label,
        ));
    }
    body.push_str(
        "ax_loss.set_ylabel('smoothed loss (nats/char)')\n\
         ax_n.set_ylabel('hidden neurons')\n\
         ax_n.set_xlabel('cycle')\n\
         ax_loss.legend()\n\
         plt.tight_layout()\n\
         plt.show()\n",
    );
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}
