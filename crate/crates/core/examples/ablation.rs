//! The five-row component ablation over consistent, inverse and arbitrary
//! unlabeled data. Pass a seed count to trade time for stability.
//!
//! ```bash
//! cargo run --release --example ablation -- 3
//! ```

use cpg::data::UnlabeledShape;
use cpg::experiment::{ablation_matrix, ExperimentConfig};
use cpg::trainer::Method;

fn main() -> cpg::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let mut cfg = ExperimentConfig::desk_scale(Method::Cpg, UnlabeledShape::Arbitrary);
    cfg.seeds = (0..seeds).collect();
    let matrix = ablation_matrix(&cfg)?;
    print!("{}", matrix.to_csv());
    Ok(())
}
