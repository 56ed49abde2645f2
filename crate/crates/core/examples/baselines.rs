//! CPG against the supervised and consistency baselines on one split.

use cpg::data::{generate_splits, DatasetSpec, UnlabeledShape};
use cpg::trainer::{self, Method, TrainConfig};

fn main() -> cpg::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let splits = generate_splits(&DatasetSpec::desk_scale(UnlabeledShape::Arbitrary, seed))?;
    let config = TrainConfig::for_splits(&splits, seed);
    println!("{:<16} {:>6} {:>8} {:>6} {:>6}", "method", "acc", "macro_f1", "err", "util");
    for method in [
        Method::SupervisedCe,
        Method::SupervisedLa,
        Method::ConsistencySsl,
        Method::Cpg,
    ] {
        let h = trainer::run_on_splits(method, &config, &splits)?;
        let m = h.final_metrics().unwrap();
        println!(
            "{:<16} {:>6.3} {:>8.3} {:>6.3} {:>6.3}",
            method.name(),
            m.accuracy,
            m.macro_f1,
            m.error_rate,
            m.utilization_rate
        );
    }
    Ok(())
}
