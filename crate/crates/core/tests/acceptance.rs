//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 6-10 train on the desk-scale suite (5 classes, 16 features,
//! labeled head 100 with ratio 10, unlabeled head 900 with ratio 10,
//! unlabeled shapes consistent / inverse / arbitrary, seeds 0-2).

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cpg::cycle::{reliability_mask, ViewPrediction};
use cpg::data::{generate_splits, DatasetSpec, SplitBundle, UnlabeledShape};
use cpg::experiment::{self, ExperimentConfig};
use cpg::loss::{la_loss, ClassPrior};
use cpg::metrics::welch_t_test;
use cpg::trainer::{Evaluator, Method, RunHistory, Toggles, TrainConfig, Trainer, TrainingData};
use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, StudentsT};

const SEEDS: [u64; 3] = [0, 1, 2];
const SCENARIOS: [UnlabeledShape; 3] = [
    UnlabeledShape::Consistent,
    UnlabeledShape::Inverse,
    UnlabeledShape::Arbitrary,
];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    println!("[{}] {id:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome {
        id,
        name,
        pass,
        detail,
    }
}

fn gradient_fidelity() -> Outcome {
    let configs = 24;
    let worst = (0..configs)
        .map(|i| common::Problem::random(50_000 + i, &common::routing_for(i as usize)).max_relative_error())
        .fold(0.0, f64::max);
    report(
        1,
        "gradient fidelity",
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {configs} configurations"),
    )
}

fn uniform_prior_reduction() -> Outcome {
    let mut r = common::rng(2);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = r.random_range(2..12);
        let z: Vec<f64> = (0..c).map(|_| r.random_range(-30.0..30.0)).collect();
        let y = r.random_range(0..c);
        let gap = (la_loss(&z, y, &ClassPrior::uniform(c)) - common::oracle_ce(&z, y)).abs();
        worst = worst.max(gap);
    }
    report(
        2,
        "uniform-prior reduction",
        worst < 1e-9,
        format!("max |LA - CE| {worst:.2e} over 1000 draws"),
    )
}

fn filter_equivalence() -> Outcome {
    let mut r = common::rng(3);
    let tau = 0.95;
    let grid = [0.0, 0.5, 0.9499999999, tau, 0.9500000001, 0.99, 1.0];
    let mut mismatches = 0;
    let mut boundary = 0;
    for i in 0..10_000 {
        let pick = |r: &mut rand_chacha::ChaCha8Rng| {
            if i % 2 == 0 {
                grid[r.random_range(0..grid.len())]
            } else {
                r.random_range(0.0..=1.0)
            }
        };
        let vp = ViewPrediction {
            label_weak: r.random_range(0..3),
            conf_weak: pick(&mut r),
            label_strong: r.random_range(0..3),
            conf_strong: pick(&mut r),
        };
        if vp.conf_weak == tau || vp.conf_strong == tau {
            boundary += 1;
        }
        let indicator = |b: bool| b as u8;
        let brute = indicator(vp.conf_weak > tau)
            * indicator(vp.conf_strong > tau)
            * indicator(vp.label_weak == vp.label_strong);
        if reliability_mask(&vp, tau) != (brute == 1) {
            mismatches += 1;
        }
    }
    report(
        3,
        "filter equivalence",
        mismatches == 0 && boundary > 0,
        format!("{mismatches} mismatches in 10000 draws ({boundary} exactly at tau)"),
    )
}

/// Runs `method` epoch by epoch, checking the prior against a from-scratch
/// recount after every epoch. Returns the history and the largest gap seen,
/// including the per-step gaps the trainer records.
fn run_tracked(method: Method, cfg: &TrainConfig, splits: &SplitBundle) -> (RunHistory, f64) {
    let unlabeled = splits.unlabeled_inputs();
    let data = TrainingData {
        labeled: &splits.labeled,
        unlabeled: &unlabeled,
    };
    let eval = Evaluator::from_splits(splits);
    let mut trainer = Trainer::new(method, cfg.clone(), data).unwrap();
    let mut gap: f64 = 0.0;
    while !trainer.is_finished() {
        let rep = trainer.run_epoch(Some(&eval)).unwrap();
        let mut counts = vec![0usize; splits.num_classes()];
        for e in &splits.labeled {
            counts[e.label] += 1;
        }
        if method == Method::Cpg && cfg.toggles.csoc {
            for l in trainer.registry().assignments().values() {
                counts[*l] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        for (c, p) in rep.pi.iter().enumerate() {
            gap = gap.max((counts[c] as f64 / total as f64 - p).abs());
        }
        gap = gap.max(rep.prior_drift);
    }
    (trainer.finish(), gap)
}

#[derive(Default)]
struct Cell {
    acc: BTreeMap<&'static str, Vec<f64>>,
    err: BTreeMap<&'static str, Vec<f64>>,
    util: BTreeMap<&'static str, Vec<f64>>,
    kl_improved: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct Suite {
    cells: Vec<(UnlabeledShape, Cell)>,
    max_prior_gap: f64,
    identity_ok: bool,
    identity_detail: String,
}

const VARIANTS: [(&str, Method, Toggles); 7] = [
    ("supervised_ce", Method::SupervisedCe, Toggles::ALL),
    ("supervised_la", Method::SupervisedLa, Toggles::ALL),
    ("consistency_ssl", Method::ConsistencySsl, Toggles::ALL),
    ("cpg", Method::Cpg, Toggles::ALL),
    (
        "AB",
        Method::Cpg,
        Toggles {
            aux_branch: true,
            csoc: false,
            caa: false,
        },
    ),
    (
        "AB+CAA",
        Method::Cpg,
        Toggles {
            aux_branch: true,
            csoc: false,
            caa: true,
        },
    ),
    (
        "AB+CSOC",
        Method::Cpg,
        Toggles {
            aux_branch: true,
            csoc: true,
            caa: false,
        },
    ),
];

fn run_suite() -> Suite {
    let mut cells = Vec::new();
    let mut max_prior_gap: f64 = 0.0;
    let mut identity_ok = true;
    let mut identity_runs = 0;
    for shape in SCENARIOS {
        let mut cell = Cell::default();
        for seed in SEEDS {
            let splits = generate_splits(&DatasetSpec::desk_scale(shape, seed)).unwrap();
            let base = TrainConfig::for_splits(&splits, seed);
            let mut la_trace = None;
            for (name, method, toggles) in VARIANTS {
                let cfg = TrainConfig {
                    toggles,
                    ..base.clone()
                };
                let (h, gap) = run_tracked(method, &cfg, &splits);
                max_prior_gap = max_prior_gap.max(gap);
                let last = h.final_metrics().unwrap();
                cell.acc.entry(name).or_default().push(last.accuracy);
                cell.err.entry(name).or_default().push(last.error_rate);
                cell.util.entry(name).or_default().push(last.utilization_rate);
                if name == "cpg" {
                    let first = h
                        .reports
                        .iter()
                        .filter(|r| r.epoch > cfg.warmup_epochs && r.accepted > 0)
                        .find_map(|r| r.metrics.as_ref().and_then(|m| m.kl));
                    if let (Some(first), Some(last)) = (first, last.kl) {
                        if last < first {
                            cell.kl_improved += 1;
                        }
                    }
                }
                if name == "supervised_la" {
                    la_trace = Some(h.loss_trace.clone());
                }
            }
            let none = TrainConfig {
                toggles: Toggles::NONE,
                ..base.clone()
            };
            let (h, _) = run_tracked(Method::Cpg, &none, &splits);
            identity_runs += 1;
            identity_ok &= Some(&h.loss_trace) == la_trace.as_ref();
        }
        println!(
            "      {:<10} acc: {}",
            shape.name(),
            cell.acc
                .iter()
                .map(|(k, v)| format!("{k} {:.3}", mean(v)))
                .collect::<Vec<_>>()
                .join(", ")
        );
        cells.push((shape, cell));
    }
    Suite {
        cells,
        max_prior_gap,
        identity_ok,
        identity_detail: format!("{identity_runs} seed/scenario pairs, loss traces compared bit for bit"),
    }
}

fn cell(suite: &Suite, shape: UnlabeledShape) -> &Cell {
    &suite.cells.iter().find(|(s, _)| *s == shape).unwrap().1
}

fn ssl_gain(suite: &Suite) -> Outcome {
    let c = cell(suite, UnlabeledShape::Arbitrary);
    let cpg = mean(&c.acc["cpg"]);
    let ce = mean(&c.acc["supervised_ce"]);
    let ssl = mean(&c.acc["consistency_ssl"]);
    report(
        6,
        "directional SSL gain",
        cpg - ce >= 0.03 && cpg >= ssl,
        format!(
            "arbitrary: cpg {:.2}% vs supervised_ce {:.2}% (+{:.2} pp), consistency_ssl {:.2}%",
            100.0 * cpg,
            100.0 * ce,
            100.0 * (cpg - ce),
            100.0 * ssl
        ),
    )
}

fn pseudo_label_quality(suite: &Suite) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (shape, c) in &suite.cells {
        let cpg_err = mean(&c.err["cpg"]);
        let ssl_err = mean(&c.err["consistency_ssl"]);
        let util = mean(&c.util["cpg"]);
        pass &= cpg_err < ssl_err && util >= 0.3;
        parts.push(format!(
            "{} err {:.3} vs {:.3}, util {:.3}",
            shape.name(),
            cpg_err,
            ssl_err,
            util
        ));
    }
    report(7, "pseudo-label quality", pass, parts.join("; "))
}

fn distribution_approach(suite: &Suite) -> Outcome {
    let pass = suite.cells.iter().all(|(_, c)| c.kl_improved >= 2);
    let detail = suite
        .cells
        .iter()
        .map(|(s, c)| format!("{} {}/3", s.name(), c.kl_improved))
        .collect::<Vec<_>>()
        .join(", ");
    report(8, "distribution approach", pass, format!("seeds with final KL < first post-warmup KL: {detail}"))
}

fn ablation_direction(suite: &Suite) -> Outcome {
    let avg = |name: &str| mean(&suite.cells.iter().map(|(_, c)| mean(&c.acc[name])).collect::<Vec<_>>());
    let full = avg("cpg");
    let csoc = avg("AB+CSOC");
    let caa = avg("AB+CAA");
    let ab = avg("AB");
    let band = 0.005;
    let ge = |a: f64, b: f64| a >= b - band;
    report(
        9,
        "ablation direction",
        ge(full, csoc) && ge(csoc, ab) && ge(full, caa) && ge(caa, ab),
        format!(
            "suite average: full {:.2}%, AB+CSOC {:.2}%, AB+CAA {:.2}%, AB {:.2}%",
            100.0 * full,
            100.0 * csoc,
            100.0 * caa,
            100.0 * ab
        ),
    )
}

fn la_vs_ce(suite: &Suite) -> Outcome {
    // Supervised runs never see unlabeled data, so one scenario covers them.
    let c = cell(suite, UnlabeledShape::Consistent);
    let la = mean(&c.acc["supervised_la"]);
    let ce = mean(&c.acc["supervised_ce"]);
    report(
        10,
        "LA vs CE supervised",
        la > ce,
        format!("supervised_la {:.2}% vs supervised_ce {:.2}%", 100.0 * la, 100.0 * ce),
    )
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cpg"))
        .args(args)
        .env_remove(experiment::OUTPUT_ROOT_ENV)
        .output()
        .unwrap()
}

fn metric_files(dir: &Path, seeds: &[u64]) -> Vec<(String, Vec<u8>)> {
    let mut names = vec![experiment::SUMMARY.to_string(), experiment::RESOLVED_CONFIG.to_string()];
    for s in seeds {
        names.push(format!("seed_{s}/{}", experiment::METRICS_FILE));
        names.push(format!("seed_{s}/{}", experiment::REGISTRY_FILE));
        names.push(format!("seed_{s}/class_stats.csv"));
    }
    names
        .into_iter()
        .map(|n| {
            let bytes = std::fs::read(dir.join(&n)).unwrap_or_default();
            (n, bytes)
        })
        .collect()
}

fn statistics_and_determinism(tmp: &Path) -> (Outcome, Outcome) {
    let w = welch_t_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
    let oracle_p = 2.0 * StudentsT::new(0.0, 1.0, w.df).unwrap().cdf(-w.t.abs());
    let welch_ok = (w.t - -3.674).abs() < 1e-3 && (w.p_value - 0.0213).abs() < 1e-3 && (w.p_value - oracle_p).abs() < 1e-9;

    let mut cfg = ExperimentConfig::desk_scale(Method::Cpg, UnlabeledShape::Arbitrary);
    cfg.train.total_epochs = Some(50);
    cfg.train.warmup_epochs = Some(10);
    let cfg_path = tmp.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let first = tmp.join("first");
    let again = tmp.join("again");
    let out = cli(&["run", "--config", cfg_path.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = first.join(experiment::RESOLVED_CONFIG);
    let out = cli(&["run", "--config", resolved.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = metric_files(&first, &cfg.seeds);
    let b = metric_files(&again, &cfg.seeds);
    let identical = a.iter().zip(&b).filter(|(x, y)| x == y && !x.1.is_empty()).count();

    let cmp = cli(&["compare", first.to_str().unwrap(), first.to_str().unwrap()]);
    let text = String::from_utf8_lossy(&cmp.stdout).to_string();
    let verdicts: Vec<&str> = text.lines().skip(1).filter_map(|l| l.split_whitespace().last()).collect();
    let all_ties = cmp.status.success() && !verdicts.is_empty() && verdicts.iter().all(|v| *v == "Tie");

    let stats = report(
        11,
        "statistics",
        welch_ok && all_ties,
        format!(
            "t {:.4}, p {:.5} (statrs {:.5}); self-compare verdicts {:?}",
            w.t, w.p_value, oracle_p, verdicts
        ),
    );
    let det = report(
        12,
        "determinism",
        identical == a.len(),
        format!("{identical}/{} metric files byte-identical after rerun from resolved config", a.len()),
    );
    (stats, det)
}

fn main() {
    let started = Instant::now();
    let mut outcomes = vec![gradient_fidelity(), uniform_prior_reduction(), filter_equivalence()];

    let suite = run_suite();
    outcomes.push(report(
        4,
        "distribution bookkeeping",
        suite.max_prior_gap <= 1e-12,
        format!("max |pi_incremental - pi_recounted| {:.2e}", suite.max_prior_gap),
    ));
    outcomes.push(report(5, "degenerate-toggle identity", suite.identity_ok, suite.identity_detail.clone()));
    outcomes.push(ssl_gain(&suite));
    outcomes.push(pseudo_label_quality(&suite));
    outcomes.push(distribution_approach(&suite));
    outcomes.push(ablation_direction(&suite));
    outcomes.push(la_vs_ce(&suite));

    let tmp = tempfile::tempdir().unwrap();
    let (stats, det) = statistics_and_determinism(tmp.path());
    outcomes.push(stats);
    outcomes.push(det);

    outcomes.sort_by_key(|o| o.id);
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.pass).collect();
    println!(
        "acceptance: {}/{} criteria passed in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        for o in failed {
            eprintln!("failed: {} {} ({})", o.id, o.name, o.detail);
        }
        std::process::exit(1);
    }
}
