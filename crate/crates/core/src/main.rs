//! Experiment CLI: single runs, multi-seed sweeps, fixed-size comparisons,
//! and the task-switch experiment, all emitting percentile CSV curves.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use growrnn::checkpoint::Checkpoint;
use growrnn::harness::{self, SweepResult};
use growrnn::structure::StructureConfig;
use growrnn::tasks::{Schedule, TaskKind};
use growrnn::trainer::{Mode, TrainConfig, Trainer};
use growrnn::{Error, Result};

#[derive(Parser)]
#[command(
    name = "growrnn",
    version,
    about = "Train character-prediction RNNs whose hidden layer grows and shrinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single network and write its loss/size curve as CSV.
    Train(TrainArgs),
    /// Run a multi-seed sweep and write median/IQR curves as CSV.
    Sweep(SweepArgs),
    /// Compare the variable-size network against fixed sizes on one task.
    CompareFixed(CompareArgs),
    /// Run the easy-hard-easy switching sweep (switches at 33% and 66%).
    SwitchExperiment(SweepArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Task: easy | hard | switch
    #[arg(long)]
    task: Option<String>,

    /// Training cycles per run
    #[arg(long)]
    cycles: Option<u64>,

    /// Characters read per cycle
    #[arg(long)]
    seq_len: Option<usize>,

    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,

    /// Base seed; runs of a sweep use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,

    /// Train at this fixed hidden size instead of growing from one neuron
    #[arg(long)]
    fixed_size: Option<usize>,

    /// Target number of sub-threshold reserve neurons
    #[arg(long)]
    k: Option<usize>,

    /// Deletion threshold on the outgoing L1 norm
    #[arg(long)]
    t_del: Option<f64>,

    /// Per-cycle addition probability
    #[arg(long)]
    p_add: Option<f64>,

    /// Per-candidate deletion probability
    #[arg(long)]
    p_del: Option<f64>,

    /// Strength of the outgoing-weight L1 penalty
    #[arg(long)]
    l1: Option<f64>,

    /// Cycles between log rows
    #[arg(long)]
    log_every: Option<u64>,

    /// Output CSV path (directory for compare-fixed)
    #[arg(long)]
    out: Option<PathBuf>,

    /// Worker threads for sweep runs (default: all cores)
    #[arg(long)]
    workers: Option<usize>,

    /// Flat key=value file supplying defaults; flags override it
    #[arg(long)]
    config: Option<PathBuf>,

    /// Also write a python plot script referencing the CSV output
    #[arg(long)]
    plot_script: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Resume from a checkpoint (its embedded config wins over flags)
    #[arg(long)]
    resume: Option<PathBuf>,

    /// Write checkpoints to this path
    #[arg(long)]
    checkpoint: Option<PathBuf>,

    /// Checkpoint every this many cycles (with --checkpoint)
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Runs in the sweep
    #[arg(long)]
    runs: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,

    /// Runs per sweep
    #[arg(long)]
    runs: Option<usize>,

    /// Fixed hidden sizes to compare against
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

/// Fully resolved options: defaults, overridden by the config file,
/// overridden by flags.
struct Settings {
    task: String,
    cycles: u64,
    seq_len: usize,
    lr: f64,
    seed: u64,
    fixed_size: Option<usize>,
    structure: StructureConfig,
    log_every: u64,
    out: Option<PathBuf>,
    workers: Option<usize>,
    runs: usize,
    sizes: Vec<usize>,
}

impl Settings {
    fn resolve(common: &CommonArgs, runs: Option<usize>, sizes: Option<&Vec<usize>>) -> Result<Self> {
        let file = match &common.config {
            Some(path) => parse_config_file(path)?,
            None => HashMap::new(),
        };
        let lookup = |key: &str| file.get(key).cloned();
        let parse_num = |key: &str, text: String| -> Result<f64> {
            text.parse().map_err(|_| {
                Error::InvalidConfig(format!("config key {key}: bad number {text:?}"))
            })
        };

        let mut s = Settings {
            task: "easy".into(),
            cycles: 100_000,
            seq_len: 40,
            lr: 0.1,
            seed: 0,
            fixed_size: None,
            structure: StructureConfig::default(),
            log_every: 100,
            out: None,
            workers: None,
            runs: 20,
            sizes: vec![10, 37, 100],
        };

        for key in file.keys() {
            const KNOWN: [&str; 16] = [
                "task", "cycles", "seq-len", "lr", "seed", "fixed-size", "k", "t-del",
                "p-add", "p-del", "l1", "log-every", "out", "workers", "runs", "sizes",
            ];
            if !KNOWN.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key {key:?}"
                )));
            }
        }

        if let Some(v) = lookup("task") {
            s.task = v;
        }
        if let Some(v) = lookup("cycles") {
            s.cycles = parse_num("cycles", v)? as u64;
        }
        if let Some(v) = lookup("seq-len") {
            s.seq_len = parse_num("seq-len", v)? as usize;
        }
        if let Some(v) = lookup("lr") {
            s.lr = parse_num("lr", v)?;
        }
        if let Some(v) = lookup("seed") {
            s.seed = parse_num("seed", v)? as u64;
        }
        if let Some(v) = lookup("fixed-size") {
            s.fixed_size = Some(parse_num("fixed-size", v)? as usize);
        }
        if let Some(v) = lookup("k") {
            s.structure.k = parse_num("k", v)? as usize;
        }
        if let Some(v) = lookup("t-del") {
            s.structure.t_del = parse_num("t-del", v)?;
        }
        if let Some(v) = lookup("p-add") {
            s.structure.p_add = parse_num("p-add", v)?;
        }
        if let Some(v) = lookup("p-del") {
            s.structure.p_del = parse_num("p-del", v)?;
        }
        if let Some(v) = lookup("l1") {
            s.structure.a_l1reg = parse_num("l1", v)?;
        }
        if let Some(v) = lookup("log-every") {
            s.log_every = parse_num("log-every", v)? as u64;
        }
        if let Some(v) = lookup("out") {
            s.out = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup("workers") {
            s.workers = Some(parse_num("workers", v)? as usize);
        }
        if let Some(v) = lookup("runs") {
            s.runs = parse_num("runs", v)? as usize;
        }
        if let Some(v) = lookup("sizes") {
            s.sizes = v
                .split(',')
                .map(|t| {
                    t.trim().parse().map_err(|_| {
                        Error::InvalidConfig(format!("config key sizes: bad entry {t:?}"))
                    })
                })
                .collect::<Result<Vec<usize>>>()?;
        }

        // flags override the file
        if let Some(v) = &common.task {
            s.task = v.clone();
        }
        if let Some(v) = common.cycles {
            s.cycles = v;
        }
        if let Some(v) = common.seq_len {
            s.seq_len = v;
        }
        if let Some(v) = common.lr {
            s.lr = v;
        }
        if let Some(v) = common.seed {
            s.seed = v;
        }
        if let Some(v) = common.fixed_size {
            s.fixed_size = Some(v);
        }
        if let Some(v) = common.k {
            s.structure.k = v;
        }
        if let Some(v) = common.t_del {
            s.structure.t_del = v;
        }
        if let Some(v) = common.p_add {
            s.structure.p_add = v;
        }
        if let Some(v) = common.p_del {
            s.structure.p_del = v;
        }
        if let Some(v) = common.l1 {
            s.structure.a_l1reg = v;
        }
        if let Some(v) = common.log_every {
            s.log_every = v;
        }
        if let Some(v) = &common.out {
            s.out = Some(v.clone());
        }
        if let Some(v) = common.workers {
            s.workers = Some(v);
        }
        if let Some(v) = runs {
            s.runs = v;
        }
        if let Some(v) = sizes {
            s.sizes = v.clone();
        }
        Ok(s)
    }

    fn schedule(&self) -> Result<Schedule> {
        match self.task.as_str() {
            "switch" => Ok(Schedule::easy_hard_easy(self.cycles)),
            name => match TaskKind::parse(name) {
                Some(kind) => Ok(Schedule::constant(kind)),
                None => Err(Error::InvalidConfig(format!(
                    "unknown task {name:?} (expected easy, hard, or switch)"
                ))),
            },
        }
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let config = TrainConfig {
            cycles: self.cycles,
            seq_len: self.seq_len,
            learning_rate: self.lr,
            schedule: self.schedule()?,
            mode: match self.fixed_size {
                Some(n) => Mode::Fixed(n),
                None => Mode::Variable,
            },
            structure: self.structure,
            seed: self.seed,
            log_every: self.log_every,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses a flat `key = value` file; `#` starts a comment.
fn parse_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "{}:{}: expected key=value, got {raw:?}",
                path.display(),
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

fn emit(result: &SweepResult, out: &Path, label: &str) -> Result<()> {
    harness::emit_csv(result, out)?;
    let last = result.final_row();
    println!(
        "{label}: wrote {} ({} rows); final loss_med={} n_med={}",
        out.display(),
        result.rows.len(),
        last.loss_med,
        last.n_med
    );
    Ok(())
}

fn maybe_plot_script(
    plot: &Option<PathBuf>,
    csvs: &[(String, PathBuf)],
) -> Result<()> {
    if let Some(path) = plot {
        harness::write_plot_script(csvs, path)?;
        println!("plot script: {}", path.display());
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<usize> {
    let settings = Settings::resolve(&args.common, None, None)?;
    let out = settings.out.clone().unwrap_or_else(|| "train.csv".into());

    let mut trainer = match &args.resume {
        Some(path) => Trainer::resume(Checkpoint::load(path)?)?,
        None => Trainer::new(settings.train_config()?)?,
    };
    let total = trainer.config().cycles;
    while trainer.cycle() < total {
        trainer.step()?;
        if let (Some(path), Some(every)) = (&args.checkpoint, args.checkpoint_every) {
            if every > 0 && trainer.cycle() % every == 0 {
                trainer.checkpoint().save(path)?;
            }
        }
    }
    if let Some(path) = &args.checkpoint {
        trainer.checkpoint().save(path)?;
    }
    let log = trainer.finish();
    let result = harness::aggregate(vec![log], vec![]);
    emit(&result, &out, "train")?;
    maybe_plot_script(
        &args.common.plot_script,
        &[("train".to_string(), out.clone())],
    )?;
    Ok(0)
}

fn cmd_sweep(args: &SweepArgs, force_switch: bool) -> Result<usize> {
    let mut settings = Settings::resolve(&args.common, args.runs, None)?;
    if force_switch {
        settings.task = "switch".into();
    }
    let default_name = if force_switch { "switch.csv" } else { "sweep.csv" };
    let out = settings.out.clone().unwrap_or_else(|| default_name.into());
    let config = settings.train_config()?;
    let result = with_pool(settings.workers, || {
        harness::sweep(&config, settings.runs, settings.seed)
    })??;
    emit(&result, &out, "sweep")?;
    maybe_plot_script(
        &args.common.plot_script,
        &[(settings.task.clone(), out.clone())],
    )?;
    Ok(result.failures.len())
}

fn cmd_compare_fixed(args: &CompareArgs) -> Result<usize> {
    let mut settings = Settings::resolve(&args.common, args.runs, args.sizes.as_ref())?;
    if args.common.task.is_none() {
        settings.task = "hard".into(); // the comparison task
    }
    let out_dir = settings
        .out
        .clone()
        .unwrap_or_else(|| "compare_fixed".into());
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let config = settings.train_config()?;
    let results = with_pool(settings.workers, || {
        harness::compare_fixed(&config, &settings.sizes, settings.runs, settings.seed)
    })??;

    let mut failed = 0;
    let mut csvs = Vec::new();
    let summary_path = out_dir.join("summary.csv");
    let mut summary = String::from("label,loss_q25,loss_med,loss_q75,n_q25,n_med,n_q75\n");
    for (label, result) in &results {
        let path = out_dir.join(format!("{label}.csv"));
        emit(result, &path, label)?;
        let last = result.final_row();
        summary.push_str(&format!(
            "{label},{},{},{},{},{},{}\n",
            last.loss_q25, last.loss_med, last.loss_q75, last.n_q25, last.n_med, last.n_q75
        ));
        failed += result.failures.len();
        csvs.push((label.clone(), path));
    }
    std::fs::write(&summary_path, summary).map_err(|e| Error::io(&summary_path, e))?;
    println!("summary: {}", summary_path.display());

    let mut ordering: Vec<(&String, f64)> = results
        .iter()
        .map(|(label, r)| (label, r.final_row().loss_med))
        .collect();
    ordering.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let ranked: Vec<String> = ordering
        .iter()
        .map(|(l, v)| format!("{l}={v:.4}"))
        .collect();
    println!("final loss ordering: {}", ranked.join(" < "));

    maybe_plot_script(&args.common.plot_script, &csvs)?;
    Ok(failed)
}

fn execute(cli: Cli) -> Result<usize> {
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args, false),
        Command::SwitchExperiment(args) => cmd_sweep(args, true),
        Command::CompareFixed(args) => cmd_compare_fixed(args),
    }
}

fn main() {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(0) => {}
        Ok(failed) => {
            eprintln!("{failed} run(s) failed; results aggregated without them");
            std::process::exit(1);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
