//! Train CPG on one desk-scale split and print the learning curve.
//!
//! ```bash
//! cargo run --release --example train_cpg -- arbitrary 0
//! ```

use cpg::data::{generate_splits, DatasetSpec, UnlabeledShape};
use cpg::trainer::{self, Method, TrainConfig};

fn parse_shape(s: &str) -> UnlabeledShape {
    match s {
        "consistent" => UnlabeledShape::Consistent,
        "inverse" => UnlabeledShape::Inverse,
        "uniform" => UnlabeledShape::Uniform,
        _ => UnlabeledShape::Arbitrary,
    }
}

fn main() -> cpg::Result<()> {
    let mut args = std::env::args().skip(1);
    let shape = parse_shape(&args.next().unwrap_or_default());
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let splits = generate_splits(&DatasetSpec::desk_scale(shape, seed))?;
    let config = TrainConfig::for_splits(&splits, seed);
    let history = trainer::run_on_splits(Method::Cpg, &config, &splits)?;

    println!("epoch   acc   err  util  accepted  kl");
    for r in history.reports.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == config.warmup_epochs + 1) {
        let m = r.metrics.as_ref().unwrap();
        println!(
            "{:>5} {:.3} {:.3} {:.3} {:>9}  {}",
            r.epoch,
            m.accuracy,
            m.error_rate,
            m.utilization_rate,
            r.accepted,
            m.kl.map_or("-".into(), |k| format!("{k:.4}"))
        );
    }
    let last = history.final_metrics().unwrap();
    println!("per-class accuracy {:.3?}", last.per_class_accuracy);
    println!("final prior        {:.3?}", history.last().pi);
    Ok(())
}
