//! Write an experiment config, run it through the library and print the
//! summary. The same file drives `cpg run --config`.

use cpg::data::UnlabeledShape;
use cpg::experiment::{self, ExperimentConfig};
use cpg::trainer::Method;

fn main() -> cpg::Result<()> {
    let mut cfg = ExperimentConfig::desk_scale(Method::Cpg, UnlabeledShape::Arbitrary);
    cfg.seeds = vec![0, 1];
    cfg.train.total_epochs = Some(40);
    cfg.train.warmup_epochs = Some(10);
    println!("{}", cfg.to_toml()?);

    let out = experiment::apply_output_root(std::env::temp_dir().join("cpg-experiment-example"));
    let result = experiment::run(&cfg, &out, true)?;
    for (name, m) in &result.summary.metrics {
        println!("{name:<17} {:.4} ± {:.4}", m.mean, m.std);
    }
    for f in &result.files {
        println!("{}", f.display());
    }
    Ok(())
}
