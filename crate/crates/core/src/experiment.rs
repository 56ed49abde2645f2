//! Config-driven experiments: seed sweeps, comparisons, ablation matrices
//! and split materialization. The `cpg` binary is a thin wrapper over the
//! functions here.
//!
//! A config file is TOML (JSON is accepted when the file ends in `.json`):
//!
//! ```toml
//! method = "cpg"            # cpg | supervised_ce | supervised_la | consistency_ssl
//! seeds = [0, 1, 2]
//! out_dir = "runs/cpg"      # optional
//!
//! [dataset]                 # every field of DatasetSpec; `seed` is replaced by each run seed
//! num_classes = 5
//! n_max = 100
//! m_max = 900
//! gamma_l = 10.0
//! gamma_u = 10.0
//! labeled_shape = "long_tailed"
//! unlabeled_shape = "arbitrary"
//! feature_dim = 16
//!
//! [train]                   # optional; missing keys take their defaults
//! total_epochs = 150
//! tau = 0.95
//! ```
//!
//! Every run directory receives `resolved_config.toml` with all defaults
//! filled in. Running that file again reproduces the metric files byte for
//! byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle::{PseudoRegistry, VoteRule};
use crate::data::{self, AugmentationPolicy, DatasetSpec, SplitBundle, UnlabeledShape};
use crate::error::{Error, Result};
use crate::metrics::{self, Verdict};
use crate::model::{Activation, OptimizerConfig};
use crate::trainer::{self, EpochReport, Method, RunHistory, Toggles, TrainConfig};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "CPG_OUTPUT_ROOT";

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const SUMMARY: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const REGISTRY_FILE: &str = "registry.json";
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_scenarios() -> Vec<UnlabeledShape> {
    vec![
        UnlabeledShape::Consistent,
        UnlabeledShape::Inverse,
        UnlabeledShape::Arbitrary,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Unlabeled shapes swept by `ablate`.
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<UnlabeledShape>,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub base_lr: Option<f64>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    /// Defaults to `total_epochs * steps_per_epoch`.
    pub total_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden_dims: Option<Vec<usize>>,
    pub activation: Option<Activation>,
}

/// Training settings shared by all seeds. Seeds and data-shaped fields
/// (input width, class count) are filled in per run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub warmup_epochs: Option<usize>,
    pub total_epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub labeled_batch: Option<usize>,
    pub unlabeled_ratio: Option<usize>,
    pub tau: Option<f64>,
    pub vote: Option<VoteRule>,
    pub toggles: Option<Toggles>,
    pub ema_decay: Option<f64>,
    pub synth_count: Option<usize>,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub model: ModelSection,
    /// Defaults to noise levels relative to the feature spread of the first
    /// seed's split.
    pub augmentation: Option<AugmentationPolicy>,
}

impl TrainSection {
    /// Full training config for one seed.
    pub fn resolve(&self, splits: &SplitBundle, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::for_splits(splits, seed);
        cfg.warmup_epochs = self.warmup_epochs.unwrap_or(cfg.warmup_epochs);
        cfg.total_epochs = self.total_epochs.unwrap_or(cfg.total_epochs);
        cfg.steps_per_epoch = self.steps_per_epoch.unwrap_or(cfg.steps_per_epoch);
        cfg.labeled_batch = self.labeled_batch.unwrap_or(cfg.labeled_batch);
        cfg.unlabeled_ratio = self.unlabeled_ratio.unwrap_or(cfg.unlabeled_ratio);
        cfg.tau = self.tau.unwrap_or(cfg.tau);
        cfg.vote = self.vote.unwrap_or(cfg.vote);
        cfg.toggles = self.toggles.unwrap_or(cfg.toggles);
        cfg.ema_decay = self.ema_decay.unwrap_or(cfg.ema_decay);
        cfg.synth_count = self.synth_count.unwrap_or(cfg.synth_count);
        let opt = &self.optimizer;
        cfg.optimizer = OptimizerConfig {
            base_lr: opt.base_lr.unwrap_or(cfg.optimizer.base_lr),
            momentum: opt.momentum.unwrap_or(cfg.optimizer.momentum),
            weight_decay: opt.weight_decay.unwrap_or(cfg.optimizer.weight_decay),
            total_steps: opt.total_steps.unwrap_or(cfg.total_epochs * cfg.steps_per_epoch),
        };
        if let Some(h) = &self.model.hidden_dims {
            cfg.model.hidden_dims = h.clone();
        }
        cfg.model.activation = self.model.activation.unwrap_or(cfg.model.activation);
        cfg.augmentation = self.augmentation.unwrap_or(cfg.augmentation);
        cfg
    }

    /// Section with every field set from `cfg`.
    pub fn filled_from(cfg: &TrainConfig) -> Self {
        TrainSection {
            warmup_epochs: Some(cfg.warmup_epochs),
            total_epochs: Some(cfg.total_epochs),
            steps_per_epoch: Some(cfg.steps_per_epoch),
            labeled_batch: Some(cfg.labeled_batch),
            unlabeled_ratio: Some(cfg.unlabeled_ratio),
            tau: Some(cfg.tau),
            vote: Some(cfg.vote),
            toggles: Some(cfg.toggles),
            ema_decay: Some(cfg.ema_decay),
            synth_count: Some(cfg.synth_count),
            optimizer: OptimizerSection {
                base_lr: Some(cfg.optimizer.base_lr),
                momentum: Some(cfg.optimizer.momentum),
                weight_decay: Some(cfg.optimizer.weight_decay),
                total_steps: Some(cfg.optimizer.total_steps),
            },
            model: ModelSection {
                hidden_dims: Some(cfg.model.hidden_dims.clone()),
                activation: Some(cfg.model.activation),
            },
            augmentation: Some(cfg.augmentation),
        }
    }
}

impl ExperimentConfig {
    /// Desk-scale config for `method` on the given unlabeled shape.
    pub fn desk_scale(method: Method, shape: UnlabeledShape) -> Self {
        ExperimentConfig {
            method,
            seeds: default_seeds(),
            out_dir: None,
            scenarios: default_scenarios(),
            dataset: DatasetSpec::desk_scale(shape, 0),
            train: TrainSection::default(),
        }
    }

    pub fn from_str(text: &str, json: bool) -> Result<Self> {
        let cfg: ExperimentConfig = if json {
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let json = path.extension().is_some_and(|e| e == "json");
        Self::from_str(&text, json)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds: at least one seed is required".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::InvalidConfig("scenarios: at least one scenario is required".into()));
        }
        self.dataset.validate()
    }

    fn spec_for(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            seed,
            ..self.dataset.clone()
        }
    }

    /// Fills every defaulted training field, resolving data-derived defaults
    /// against the first seed's split.
    pub fn resolved(&self) -> Result<ExperimentConfig> {
        self.validate()?;
        if self.method != Method::Cpg && (self.train.toggles.is_some() || self.train.synth_count.is_some()) {
            log::warn!(
                "train.toggles and train.synth_count have no effect for method {}",
                self.method.name()
            );
        }
        let splits = data::generate_splits(&self.spec_for(self.seeds[0]))?;
        let cfg = self.train.resolve(&splits, self.seeds[0]);
        cfg.validate()?;
        Ok(ExperimentConfig {
            train: TrainSection::filled_from(&cfg),
            ..self.clone()
        })
    }

    /// Output directory after the `--out` flag, the config, and the
    /// output-root environment override are applied.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        let base = flag
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("runs").join(self.method.name()));
        apply_output_root(base)
    }
}

/// Prefixes a relative path with the output-root override when set.
pub fn apply_output_root(path: PathBuf) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path,
    }
}

/// One JSONL line per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub acc: f64,
    pub macro_f1: f64,
    pub per_class_acc: Vec<f64>,
    pub balanced_error: f64,
    pub err_rate: f64,
    pub util_rate: f64,
    pub kl: Option<f64>,
    #[serde(rename = "O_t")]
    pub o_t: usize,
    pub eps_t: f64,
    pub risk_reduction: Option<f64>,
    pub accepted: usize,
    pub pi: Vec<f64>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub total_votes: u64,
    pub prior_drift: f64,
    pub loss_primary: f64,
    pub loss_aux_la: f64,
    pub loss_aux_consistency: f64,
    pub loss_total: f64,
}

impl EpochRecord {
    fn from_report(r: &EpochReport) -> Result<Self> {
        let m = r
            .metrics
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("epoch report without metrics".into()))?;
        let row = r.ledger.as_ref();
        Ok(EpochRecord {
            epoch: r.epoch,
            acc: m.accuracy,
            macro_f1: m.macro_f1,
            per_class_acc: m.per_class_accuracy.clone(),
            balanced_error: m.balanced_error,
            err_rate: m.error_rate,
            util_rate: m.utilization_rate,
            kl: m.kl,
            o_t: r.base_size + r.accepted,
            eps_t: m.error_rate,
            risk_reduction: row.and_then(|row| row.risk_reduction),
            accepted: r.accepted,
            pi: r.pi.clone(),
            tp: m.tp.clone(),
            fp: m.fp.clone(),
            total_votes: r.total_votes,
            prior_drift: r.prior_drift,
            loss_primary: r.losses.primary,
            loss_aux_la: r.losses.aux_la,
            loss_aux_consistency: r.losses.aux_consistency,
            loss_total: r.losses.total,
        })
    }
}

/// Final-epoch numbers of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub error_rate: f64,
    pub utilization_rate: f64,
    pub kl: Option<f64>,
    /// KL at the first post-warmup epoch with at least one accepted pseudo-label.
    pub first_kl: Option<f64>,
}

impl SeedResult {
    pub fn from_history(seed: u64, h: &RunHistory, warmup_epochs: usize) -> Result<Self> {
        let last = h
            .final_metrics()
            .ok_or_else(|| Error::InvalidInput("run has no evaluated epoch".into()))?;
        let first_kl = h
            .reports
            .iter()
            .filter(|r| r.epoch > warmup_epochs && r.accepted > 0)
            .find_map(|r| r.metrics.as_ref().and_then(|m| m.kl));
        Ok(SeedResult {
            seed,
            accuracy: last.accuracy,
            macro_f1: last.macro_f1,
            error_rate: last.error_rate,
            utilization_rate: last.utilization_rate,
            kl: last.kl,
            first_kl,
        })
    }

    fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "accuracy" => Some(self.accuracy),
            "macro_f1" => Some(self.macro_f1),
            "error_rate" => Some(self.error_rate),
            "utilization_rate" => Some(self.utilization_rate),
            "kl" => self.kl,
            _ => None,
        }
    }
}

/// Metric names reported in summaries, and whether larger is better.
pub const SUMMARY_METRICS: [(&str, bool); 5] = [
    ("accuracy", true),
    ("macro_f1", true),
    ("error_rate", false),
    ("utilization_rate", true),
    ("kl", false),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub values: Vec<f64>,
}

impl MeanStd {
    pub fn of(values: Vec<f64>) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(MeanStd { mean, std, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedResult>,
    pub metrics: BTreeMap<String, MeanStd>,
}

impl Summary {
    pub fn new(method: Method, per_seed: Vec<SeedResult>) -> Self {
        let mut metrics = BTreeMap::new();
        for (name, _) in SUMMARY_METRICS {
            let values: Vec<f64> = per_seed.iter().filter_map(|r| r.metric(name)).collect();
            if values.len() == per_seed.len() {
                if let Some(ms) = MeanStd::of(values) {
                    metrics.insert(name.to_string(), ms);
                }
            }
        }
        Summary {
            method,
            seeds: per_seed.iter().map(|r| r.seed).collect(),
            per_seed,
            metrics,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(SUMMARY);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Result of one seed, kept in memory by [`run_experiment`].
pub struct SeedRun {
    pub seed: u64,
    pub config: TrainConfig,
    pub history: RunHistory,
}

/// What [`run`] wrote.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

/// Trains every seed of an already resolved config, in parallel.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            run_seed(cfg, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })
        })
        .collect()
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let splits = data::generate_splits(&cfg.spec_for(seed))?;
    let config = cfg.train.resolve(&splits, seed);
    log::info!("{} seed {seed}: training {} epochs", cfg.method.name(), config.total_epochs);
    let history = trainer::run_on_splits(cfg.method, &config, &splits)?;
    Ok(SeedRun {
        seed,
        config,
        history,
    })
}

/// `run`: trains all seeds and writes per-seed histories, a summary, and
/// the resolved config under `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path, emit_plot_data: bool) -> Result<RunOutput> {
    let cfg = cfg.resolved()?;
    let runs = run_experiment(&cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut files = Vec::new();

    let resolved_path = out.join(RESOLVED_CONFIG);
    write(&resolved_path, &cfg.to_toml()?)?;
    files.push(resolved_path);

    let mut per_seed = Vec::new();
    let mut timings = BTreeMap::new();
    let mut plot = String::from("method,seed,epoch,metric,value\n");
    for run in &runs {
        let dir = out.join(format!("seed_{}", run.seed));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut jsonl = String::new();
        for report in &run.history.reports {
            let record = EpochRecord::from_report(report)?;
            jsonl.push_str(&serde_json::to_string(&record)?);
            jsonl.push('\n');
            if emit_plot_data {
                plot_rows(&mut plot, cfg.method, run.seed, &record);
            }
        }
        let metrics_path = dir.join(METRICS_FILE);
        write(&metrics_path, &jsonl)?;
        files.push(metrics_path);
        if cfg.method == Method::Cpg {
            let reg = dir.join(REGISTRY_FILE);
            run.history.registry.save_snapshot(&reg)?;
            files.push(reg);
            let stats = dir.join("class_stats.csv");
            run.history.class_stats.write_csv(&stats)?;
            files.push(stats);
        }
        timings.insert(
            run.seed.to_string(),
            run.history.reports.iter().map(|r| r.wall_clock_secs).sum::<f64>(),
        );
        per_seed.push(SeedResult::from_history(run.seed, &run.history, run.config.warmup_epochs)?);
    }

    let summary = Summary::new(cfg.method, per_seed);
    let summary_path = out.join(SUMMARY);
    write(&summary_path, &serde_json::to_string_pretty(&summary)?)?;
    files.push(summary_path);
    if emit_plot_data {
        let plot_path = out.join("plot_data.csv");
        write(&plot_path, &plot)?;
        files.push(plot_path);
    }
    let timing_path = out.join("timings.json");
    write(&timing_path, &serde_json::to_string_pretty(&timings)?)?;
    files.push(timing_path);

    Ok(RunOutput {
        dir: out.to_path_buf(),
        summary,
        files,
    })
}

fn plot_rows(out: &mut String, method: Method, seed: u64, r: &EpochRecord) {
    let m = method.name();
    let mut row = |metric: &str, value: f64| {
        let _ = writeln!(out, "{m},{seed},{},{metric},{value}", r.epoch);
    };
    row("accuracy", r.acc);
    row("macro_f1", r.macro_f1);
    row("error_rate", r.err_rate);
    row("utilization_rate", r.util_rate);
    if let Some(kl) = r.kl {
        row("kl", kl);
    }
    row("accepted", r.accepted as f64);
    row("loss_total", r.loss_total);
    for (c, p) in r.pi.iter().enumerate() {
        row(&format!("pi_{c}"), *p);
    }
    for (c, v) in r.tp.iter().enumerate() {
        row(&format!("tp_{c}"), *v as f64);
    }
    for (c, v) in r.fp.iter().enumerate() {
        row(&format!("fp_{c}"), *v as f64);
    }
    for (c, v) in r.per_class_acc.iter().enumerate() {
        row(&format!("class_acc_{c}"), *v);
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One metric in a [`Comparison`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricComparison {
    pub metric: String,
    pub a: MeanStd,
    pub b: MeanStd,
    pub t: f64,
    pub p_value: f64,
    /// From the point of view of `a`, accounting for lower-is-better metrics.
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method_a: Method,
    pub method_b: Method,
    pub alpha: f64,
    pub metrics: Vec<MetricComparison>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} vs {} (Welch t-test, alpha {})\n",
            self.method_a.name(),
            self.method_b.name(),
            self.alpha
        );
        for m in &self.metrics {
            let _ = writeln!(
                s,
                "{:<17} {:.4} ± {:.4}  vs  {:.4} ± {:.4}  t {:>8.3}  p {:.4}  {:?}",
                m.metric, m.a.mean, m.a.std, m.b.mean, m.b.std, m.t, m.p_value, m.verdict
            );
        }
        s
    }
}

/// Compares two summaries metric by metric.
pub fn compare_summaries(a: &Summary, b: &Summary) -> Result<Comparison> {
    if a.per_seed.len() != b.per_seed.len() {
        return Err(Error::InvalidInput(format!(
            "seed counts differ: {} vs {}",
            a.per_seed.len(),
            b.per_seed.len()
        )));
    }
    if a.per_seed.len() < 2 {
        return Err(Error::InvalidInput(
            "one seed per side: variance is undefined, rerun with at least two seeds".into(),
        ));
    }
    let mut out = Vec::new();
    for (name, higher_is_better) in SUMMARY_METRICS {
        let (Some(ma), Some(mb)) = (a.metrics.get(name), b.metrics.get(name)) else {
            continue;
        };
        let test = metrics::welch_t_test(&ma.values, &mb.values)?;
        let mut verdict = Verdict::from_test(&test, SIGNIFICANCE_LEVEL);
        if !higher_is_better {
            verdict = match verdict {
                Verdict::Win => Verdict::Loss,
                Verdict::Loss => Verdict::Win,
                Verdict::Tie => Verdict::Tie,
            };
        }
        out.push(MetricComparison {
            metric: name.to_string(),
            a: ma.clone(),
            b: mb.clone(),
            t: test.t,
            p_value: test.p_value,
            verdict,
        });
    }
    Ok(Comparison {
        method_a: a.method,
        method_b: b.method,
        alpha: SIGNIFICANCE_LEVEL,
        metrics: out,
    })
}

/// `compare`: reads `summary.json` from two run directories.
pub fn compare(dir_a: &Path, dir_b: &Path) -> Result<Comparison> {
    compare_summaries(&Summary::load(dir_a)?, &Summary::load(dir_b)?)
}

/// The five component rows of the ablation matrix.
pub const ABLATION_ROWS: [(&str, Toggles); 5] = [
    ("none", Toggles::NONE),
    (
        "AB",
        Toggles {
            aux_branch: true,
            csoc: false,
            caa: false,
        },
    ),
    (
        "AB+CAA",
        Toggles {
            aux_branch: true,
            csoc: false,
            caa: true,
        },
    ),
    (
        "AB+CSOC",
        Toggles {
            aux_branch: true,
            csoc: true,
            caa: false,
        },
    ),
    ("AB+CSOC+CAA", Toggles::ALL),
];

/// Mean accuracy per row and scenario, plus a row average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub scenarios: Vec<UnlabeledShape>,
    pub rows: Vec<AblationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: Toggles,
    /// Mean accuracy over seeds, one per scenario.
    pub cells: Vec<f64>,
    /// Per-seed accuracy, one vector per scenario.
    pub values: Vec<Vec<f64>>,
    pub average: f64,
}

impl AblationMatrix {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("row");
        for sc in &self.scenarios {
            s.push(',');
            s.push_str(sc.name());
        }
        s.push_str(",average\n");
        for r in &self.rows {
            s.push_str(&r.name);
            for c in &r.cells {
                let _ = write!(s, ",{c:.6}");
            }
            let _ = writeln!(s, ",{:.6}", r.average);
        }
        s
    }
}

/// Computes the ablation matrix without writing anything.
pub fn ablation_matrix(cfg: &ExperimentConfig) -> Result<AblationMatrix> {
    let cfg = cfg.resolved()?;
    if cfg.method != Method::Cpg {
        return Err(Error::InvalidConfig(format!(
            "method: ablate needs method \"cpg\", got \"{}\"",
            cfg.method.name()
        )));
    }
    let jobs: Vec<(usize, usize, u64)> = (0..ABLATION_ROWS.len())
        .flat_map(|r| {
            let seeds = &cfg.seeds;
            (0..cfg.scenarios.len()).flat_map(move |s| seeds.iter().map(move |&seed| (r, s, seed)))
        })
        .collect();
    let accs: Vec<f64> = jobs
        .par_iter()
        .map(|&(r, s, seed)| {
            let mut c = cfg.clone();
            c.dataset.unlabeled_shape = cfg.scenarios[s];
            c.train.toggles = Some(ABLATION_ROWS[r].1);
            let run = run_seed(&c, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            })?;
            Ok(run.history.final_metrics().map_or(f64::NAN, |m| m.accuracy))
        })
        .collect::<Result<_>>()?;
    let per_row = cfg.scenarios.len() * cfg.seeds.len();
    let rows = ABLATION_ROWS
        .iter()
        .enumerate()
        .map(|(r, (name, toggles))| {
            let values: Vec<Vec<f64>> = accs[r * per_row..(r + 1) * per_row]
                .chunks(cfg.seeds.len())
                .map(<[f64]>::to_vec)
                .collect();
            let cells: Vec<f64> = values
                .iter()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect();
            let average = cells.iter().sum::<f64>() / cells.len() as f64;
            AblationRow {
                name: name.to_string(),
                toggles: *toggles,
                cells,
                values,
                average,
            }
        })
        .collect();
    Ok(AblationMatrix {
        scenarios: cfg.scenarios.clone(),
        rows,
    })
}

/// `ablate`: writes `ablation.csv` and `ablation.json` under `out`.
pub fn ablate(cfg: &ExperimentConfig, out: &Path) -> Result<(AblationMatrix, Vec<PathBuf>)> {
    let matrix = ablation_matrix(cfg)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv = out.join("ablation.csv");
    write(&csv, &matrix.to_csv())?;
    let json = out.join("ablation.json");
    write(&json, &serde_json::to_string_pretty(&matrix)?)?;
    let resolved = out.join(RESOLVED_CONFIG);
    write(&resolved, &cfg.resolved()?.to_toml()?)?;
    Ok((matrix, vec![csv, json, resolved]))
}

/// `gen-data`: materializes the splits of every seed as CSV.
pub fn gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut dirs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed_{seed}"));
        data::generate_splits(&cfg.spec_for(seed))?.save(&dir)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Human-readable digest of a registry snapshot.
pub fn inspect(path: &Path, num_classes: Option<usize>) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let c = match num_classes {
        Some(c) => c,
        None => {
            let entries: Vec<serde_json::Value> = serde_json::from_str(&text)?;
            entries
                .first()
                .and_then(|e| e["votes"].as_array().map(Vec::len))
                .ok_or_else(|| Error::InvalidInput("empty registry snapshot".into()))?
        }
    };
    let reg = PseudoRegistry::from_json(&text, c)?;
    let entries = reg.entries();
    let voted = entries.iter().filter(|e| e.total() > 0).count();
    let mut resolved = vec![0usize; c];
    let mut votes = vec![0u64; c];
    for e in entries {
        if let Some(l) = e.resolved_label {
            resolved[l] += 1;
        }
        for (k, v) in e.votes.iter().enumerate() {
            votes[k] += *v as u64;
        }
    }
    let mut s = format!(
        "{}\nsamples {}  with votes {}  resolved {}  total votes {}\n",
        path.display(),
        entries.len(),
        voted,
        resolved.iter().sum::<usize>(),
        reg.total_votes()
    );
    s.push_str("class  resolved  votes\n");
    for k in 0..c {
        let _ = writeln!(s, "{k:>5}  {:>8}  {:>5}", resolved[k], votes[k]);
    }
    Ok(s)
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// divergence, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::InvalidConfig(_) | Error::InvalidSpec(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}
