// Temporary diagnostic: watch reserve occupancy and event counts.
use growrnn::structure::{subthreshold_set, EventKind};
use growrnn::tasks::{Schedule, TaskKind};
use growrnn::trainer::{TrainConfig, Trainer};

fn main() {
    let task = std::env::args().nth(1).unwrap_or_else(|| "easy".into());
    let cycles: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_000);
    let seed: u64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let kind = TaskKind::parse(&task).unwrap();
    let config = TrainConfig {
        cycles,
        seed,
        schedule: Schedule::constant(kind),
        log_every: 1000,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(config).unwrap();
    println!("cycle,loss,n,subthresh,min_norm");
    while t.cycle() < cycles {
        t.step().unwrap();
        if t.cycle() % 1000 == 0 {
            let params = t.params();
            let sub = subthreshold_set(params, 0.05);
            let min_norm = (0..params.n_hidden())
                .map(|j| params.outgoing_l1(j))
                .fold(f64::INFINITY, f64::min);
            println!(
                "{},{:.4},{},{},{:.4}",
                t.cycle(),
                t.smoothed_loss(),
                t.n_hidden(),
                sub.len(),
                min_norm,
            );
        }
    }
    let log = t.finish();
    let adds = log
        .records
        .iter()
        .flat_map(|r| &r.events)
        .filter(|e| e.kind == EventKind::Added)
        .count();
    let dels = log
        .records
        .iter()
        .flat_map(|r| &r.events)
        .filter(|e| e.kind == EventKind::Deleted)
        .count();
    println!("adds={adds} dels={dels} final_n={}", log.final_n());
}
