//! Welch's t-test and the win/tie/loss verdicts used by `compare`.

use cpg::experiment::{compare_summaries, SeedResult, Summary};
use cpg::metrics::{welch_t_test, Verdict};
use cpg::trainer::Method;

fn summary(method: Method, accuracy: &[f64]) -> Summary {
    let per_seed = accuracy
        .iter()
        .enumerate()
        .map(|(seed, &a)| SeedResult {
            seed: seed as u64,
            accuracy: a,
            macro_f1: a - 0.01,
            error_rate: 0.1,
            utilization_rate: 0.9,
            kl: None,
            first_kl: None,
        })
        .collect();
    Summary::new(method, per_seed)
}

fn main() -> cpg::Result<()> {
    let w = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0])?;
    println!("t {:.4}  df {:.1}  p {:.4}  -> {:?}", w.t, w.df, w.p_value, Verdict::from_test(&w, 0.05));

    let cpg = summary(Method::Cpg, &[0.901, 0.899, 0.898]);
    let ce = summary(Method::SupervisedCe, &[0.829, 0.841, 0.828]);
    print!("{}", compare_summaries(&cpg, &ce)?.render());
    print!("{}", compare_summaries(&cpg, &cpg)?.render());
    Ok(())
}
