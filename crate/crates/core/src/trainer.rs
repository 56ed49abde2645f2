//! End-to-end training: labeled-only warmup, then per-batch pseudo-label
//! filtering, voting, pool expansion, prior refresh, class-aware
//! augmentation and one SGD step. Also hosts the baselines and inference.
//!
//! The training path receives unlabeled data as [`UnlabeledInput`] only.
//! Ground truth enters through [`Evaluator`], which hands it straight to the
//! metrics module.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::caa::{self, ClassStats, SynthNoise};
use crate::cycle::{self, ClassDistribution, LabeledPool, PseudoRegistry, VoteRule};
use crate::data::{self, AugmentationPolicy, LabeledExample, SplitBundle, UnlabeledInput};
use crate::error::{Error, Result};
use crate::loss::{argmax, softmax, ClassPrior, LossSpec};
use crate::metrics::{self, EpochRisk, HiddenLabels, LedgerRow, PseudoLabelAudit, RiskLedger};
use crate::model::{self, Branch, Checkpoint, LossPart, ModelConfig, ModelState, OptimizerConfig, TrainItem};
use crate::rng::{self, streams, Rng};

/// Which objective a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Cpg,
    SupervisedCe,
    SupervisedLa,
    ConsistencySsl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cpg => "cpg",
            Method::SupervisedCe => "supervised_ce",
            Method::SupervisedLa => "supervised_la",
            Method::ConsistencySsl => "consistency_ssl",
        }
    }
}

/// Baselines accepted by [`run_baseline`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    SupervisedCe,
    SupervisedLa,
    ConsistencySsl,
}

impl From<BaselineKind> for Method {
    fn from(kind: BaselineKind) -> Self {
        match kind {
            BaselineKind::SupervisedCe => Method::SupervisedCe,
            BaselineKind::SupervisedLa => Method::SupervisedLa,
            BaselineKind::ConsistencySsl => Method::ConsistencySsl,
        }
    }
}

/// Component switches of the CPG objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    /// Auxiliary branch.
    pub aux_branch: bool,
    /// Pseudo-labeling cycle.
    pub csoc: bool,
    /// Class-aware adaptive augmentation.
    pub caa: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        aux_branch: true,
        csoc: true,
        caa: true,
    };
    pub const NONE: Toggles = Toggles {
        aux_branch: false,
        csoc: false,
        caa: false,
    };
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub steps_per_epoch: usize,
    pub labeled_batch: usize,
    pub unlabeled_ratio: usize,
    pub tau: f64,
    pub vote: VoteRule,
    pub toggles: Toggles,
    pub ema_decay: f64,
    pub synth_count: usize,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub augmentation: AugmentationPolicy,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults for data of the given shape.
    pub fn desk_scale(input_dim: usize, num_classes: usize, feature_std: f64, seed: u64) -> Self {
        let total_epochs = 150;
        let steps_per_epoch = 20;
        TrainConfig {
            warmup_epochs: 30,
            total_epochs,
            steps_per_epoch,
            labeled_batch: 16,
            unlabeled_ratio: 7,
            tau: 0.95,
            vote: VoteRule::default(),
            toggles: Toggles::ALL,
            ema_decay: 0.9,
            synth_count: caa::DEFAULT_SYNTH_COUNT,
            optimizer: OptimizerConfig::with_total_steps(total_epochs * steps_per_epoch),
            model: ModelConfig {
                init_seed: seed,
                ..ModelConfig::new(input_dim, num_classes)
            },
            augmentation: AugmentationPolicy::relative_to(feature_std),
            seed,
        }
    }

    /// Defaults matched to a generated split bundle.
    pub fn for_splits(splits: &SplitBundle, seed: u64) -> Self {
        TrainConfig::desk_scale(
            splits.feature_dim(),
            splits.num_classes(),
            splits.mean_feature_std(),
            seed,
        )
    }

    /// Sets the epoch budget and keeps the schedule length in sync.
    pub fn with_epochs(mut self, warmup: usize, total: usize) -> Self {
        self.warmup_epochs = warmup;
        self.total_epochs = total;
        self.optimizer.total_steps = total * self.steps_per_epoch;
        self
    }

    pub fn unlabeled_batch(&self) -> usize {
        self.labeled_batch * self.unlabeled_ratio
    }

    pub fn total_steps(&self) -> usize {
        self.total_epochs * self.steps_per_epoch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.total_epochs == 0 || self.steps_per_epoch == 0 || self.labeled_batch == 0 {
            return bad("total_epochs, steps_per_epoch and labeled_batch must be positive".into());
        }
        if self.warmup_epochs > self.total_epochs {
            return bad(format!(
                "warmup_epochs {} exceeds total_epochs {}",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        if self.optimizer.total_steps < self.total_steps() {
            return bad(format!(
                "optimizer.total_steps {} is shorter than the run ({} steps)",
                self.optimizer.total_steps,
                self.total_steps()
            ));
        }
        self.vote.validate()?;
        self.optimizer.validate()?;
        self.model.validate()?;
        self.augmentation.validate()
    }
}

/// Training inputs with no ground truth for unlabeled samples.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub labeled: &'a [LabeledExample],
    pub unlabeled: &'a [UnlabeledInput],
}

/// Held-out evaluation: the test split and sealed unlabeled ground truth.
#[derive(Debug, Clone)]
pub struct Evaluator {
    test: Vec<LabeledExample>,
    hidden: HiddenLabels,
    num_classes: usize,
}

impl Evaluator {
    pub fn new(test: Vec<LabeledExample>, hidden: HiddenLabels, num_classes: usize) -> Self {
        Evaluator {
            test,
            hidden,
            num_classes,
        }
    }

    pub fn from_splits(splits: &SplitBundle) -> Self {
        Evaluator::new(splits.test.clone(), splits.hidden_labels(), splits.num_classes())
    }

    pub fn audit(&self, assignments: &BTreeMap<u64, usize>) -> PseudoLabelAudit {
        metrics::pseudo_audit(assignments, &self.hidden)
    }

    /// KL between accepted pseudo-labels and the unlabeled ground truth.
    pub fn kl_to_ground_truth(&self, assignments: &BTreeMap<u64, usize>) -> Option<f64> {
        let p = metrics::assignment_distribution(assignments, self.num_classes)?;
        let q = metrics::ground_truth_distribution(&self.hidden);
        metrics::kl_divergence(&p, &q).ok()
    }

    fn evaluate(&self, state: &ModelState) -> Result<TestMetrics> {
        let preds = self
            .test
            .iter()
            .map(|e| predict(state, &e.features))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = self.test.iter().map(|e| e.label).collect();
        Ok(TestMetrics {
            accuracy: metrics::accuracy(&preds, &labels)?,
            macro_f1: metrics::macro_f1(&preds, &labels, self.num_classes)?,
            per_class_accuracy: metrics::per_class_accuracy(&preds, &labels, self.num_classes)?,
            balanced_error: metrics::balanced_error(&preds, &labels, self.num_classes)?,
        })
    }
}

struct TestMetrics {
    accuracy: f64,
    macro_f1: f64,
    per_class_accuracy: Vec<f64>,
    balanced_error: f64,
}

/// Mean per-step loss of each component over an epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub primary: f64,
    pub aux_la: f64,
    pub aux_consistency: f64,
    pub total: f64,
}

/// Evaluation numbers for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_accuracy: Vec<f64>,
    pub balanced_error: f64,
    pub error_rate: f64,
    pub utilization_rate: f64,
    pub kl: Option<f64>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub losses: EpochLosses,
    /// Base labeled size `N`.
    pub base_size: usize,
    /// Accepted pseudo-labels `M_t`.
    pub accepted: usize,
    pub pi: Vec<f64>,
    pub votes_this_epoch: u64,
    pub total_votes: u64,
    /// Largest `|pi_incremental - pi_recounted|` seen over the epoch's steps.
    pub prior_drift: f64,
    pub metrics: Option<EpochMetrics>,
    pub ledger: Option<LedgerRow>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunHistory {
    pub method: Method,
    pub reports: Vec<EpochReport>,
    /// Total loss of every SGD step, in order.
    pub loss_trace: Vec<f64>,
    pub ledger: RiskLedger,
    pub state: ModelState,
    pub registry: PseudoRegistry,
    pub assignments: BTreeMap<u64, usize>,
    pub class_stats: ClassStats,
}

impl RunHistory {
    pub fn last(&self) -> &EpochReport {
        self.reports.last().expect("at least one epoch")
    }

    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.last().metrics.as_ref()
    }
}

/// Primary-head prediction: argmax of the softmax, ties to the lowest index.
pub fn predict(state: &ModelState, x: &[f64]) -> Result<usize> {
    predict_with(state, Branch::Primary, x)
}

pub fn predict_with(state: &ModelState, branch: Branch, x: &[f64]) -> Result<usize> {
    Ok(argmax(&softmax(&state.logits(branch, x)?)))
}

/// Resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerCheckpoint {
    pub method: Method,
    pub config: TrainConfig,
    pub model: Checkpoint,
    pub registry: PseudoRegistry,
    pub assignments: BTreeMap<u64, usize>,
    pub class_stats: ClassStats,
    pub global_step: usize,
    pub reports: Vec<EpochReport>,
    pub loss_trace: Vec<f64>,
    pub ledger: RiskLedger,
}

impl TrainerCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Step-by-step driver behind [`train`] and [`run_baseline`].
pub struct Trainer<'a> {
    method: Method,
    config: TrainConfig,
    data: TrainingData<'a>,
    state: ModelState,
    registry: PseudoRegistry,
    pool: LabeledPool,
    stats: ClassStats,
    unlabeled_index: HashMap<u64, usize>,
    batch_rng: Rng,
    unlabeled_rng: Rng,
    view_rng: Rng,
    synth_rng: Rng,
    global_step: usize,
    epoch: usize,
    reports: Vec<EpochReport>,
    loss_trace: Vec<f64>,
    ledger: RiskLedger,
}

impl<'a> Trainer<'a> {
    pub fn new(method: Method, config: TrainConfig, data: TrainingData<'a>) -> Result<Self> {
        config.validate()?;
        let c = config.model.num_classes;
        if data.labeled.is_empty() {
            return Err(Error::InvalidInput("no labeled data".into()));
        }
        let dim = config.model.input_dim;
        if let Some(bad) = data
            .labeled
            .iter()
            .map(|e| e.features.len())
            .chain(data.unlabeled.iter().map(|u| u.features.len()))
            .find(|&len| len != dim)
        {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad,
            });
        }
        let state = model::init(&config.model)?;
        let pool = LabeledPool::new(data.labeled.to_vec(), c)?;
        let registry = PseudoRegistry::new(data.unlabeled.iter().map(|u| u.id), c);
        let unlabeled_index = data
            .unlabeled
            .iter()
            .enumerate()
            .map(|(i, u)| (u.id, i))
            .collect();
        let seed = config.seed;
        Ok(Trainer {
            method,
            data,
            state,
            registry,
            pool,
            stats: ClassStats::new(c),
            unlabeled_index,
            batch_rng: rng::stream(seed, streams::BATCHES),
            unlabeled_rng: rng::stream(seed, streams::UNLABELED_BATCHES),
            view_rng: rng::stream(seed, streams::VIEWS),
            synth_rng: rng::stream(seed, streams::SYNTH),
            global_step: 0,
            epoch: 0,
            reports: Vec::new(),
            loss_trace: Vec::new(),
            ledger: RiskLedger::default(),
            config,
        })
    }

    /// Rebuilds a trainer from a checkpoint taken on the same data.
    pub fn resume(ck: TrainerCheckpoint, data: TrainingData<'a>) -> Result<Self> {
        let mut trainer = Trainer::new(ck.method, ck.config, data)?;
        trainer.state = ck.model.restore()?;
        let [batch, unlabeled, view, synth]: [Rng; 4] = ck
            .model
            .rngs
            .try_into()
            .map_err(|_| Error::Serde("checkpoint must hold four rng states".into()))?;
        trainer.batch_rng = batch;
        trainer.unlabeled_rng = unlabeled;
        trainer.view_rng = view;
        trainer.synth_rng = synth;
        trainer.epoch = ck.model.epoch;
        trainer.registry = ck.registry;
        trainer.pool.apply(&ck.assignments)?;
        trainer.stats = ck.class_stats;
        trainer.global_step = ck.global_step;
        trainer.reports = ck.reports;
        trainer.loss_trace = ck.loss_trace;
        trainer.ledger = ck.ledger;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> TrainerCheckpoint {
        TrainerCheckpoint {
            method: self.method,
            config: self.config.clone(),
            model: Checkpoint::capture(
                &self.state,
                &self.config.optimizer,
                self.epoch,
                vec![
                    self.batch_rng.clone(),
                    self.unlabeled_rng.clone(),
                    self.view_rng.clone(),
                    self.synth_rng.clone(),
                ],
            ),
            registry: self.registry.clone(),
            assignments: self.pool.pseudo().clone(),
            class_stats: self.stats.clone(),
            global_step: self.global_step,
            reports: self.reports.clone(),
            loss_trace: self.loss_trace.clone(),
            ledger: self.ledger.clone(),
        }
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.total_epochs
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    pub fn pool(&self) -> &LabeledPool {
        &self.pool
    }

    pub fn registry(&self) -> &PseudoRegistry {
        &self.registry
    }

    fn toggles(&self) -> Toggles {
        match self.method {
            Method::Cpg => self.config.toggles,
            _ => Toggles::NONE,
        }
    }

    fn uses_unlabeled(&self) -> bool {
        let t = self.toggles();
        t.aux_branch || t.csoc || self.method == Method::ConsistencySsl
    }

    fn pool_features(&self, index: usize) -> (&'a [f64], usize) {
        let base = self.data.labeled;
        if index < base.len() {
            let e = &base[index];
            return (&e.features, e.label);
        }
        let (id, &label) = self
            .pool
            .pseudo()
            .iter()
            .nth(index - base.len())
            .expect("index within pool");
        let u = &self.data.unlabeled[self.unlabeled_index[id]];
        (&u.features, label)
    }

    /// Runs one epoch and evaluates it when `eval` is given.
    pub fn run_epoch(&mut self, eval: Option<&Evaluator>) -> Result<EpochReport> {
        if self.is_finished() {
            return Err(Error::InvalidInput("training already finished".into()));
        }
        let started = Instant::now();
        self.epoch += 1;
        let epoch = self.epoch;
        let cycle_open = epoch > self.config.warmup_epochs;
        let toggles = self.toggles();
        let votes_before = self.registry.total_votes();
        let mut sums = EpochLosses::default();
        let mut drift: f64 = 0.0;

        for step in 0..self.config.steps_per_epoch {
            let s = self
                .train_step(epoch, cycle_open, toggles)
                .map_err(|e| match e {
                    Error::NonFinite(reason) => Error::Diverged {
                        epoch,
                        step,
                        reason,
                    },
                    other => other,
                })?;
            sums.primary += s.losses.primary;
            sums.aux_la += s.losses.aux_la;
            sums.aux_consistency += s.losses.aux_consistency;
            sums.total += s.losses.total;
            drift = drift.max(s.prior_drift);
        }
        let n = self.config.steps_per_epoch as f64;
        let losses = EpochLosses {
            primary: sums.primary / n,
            aux_la: sums.aux_la / n,
            aux_consistency: sums.aux_consistency / n,
            total: sums.total / n,
        };

        let assignments = self.accepted_pseudo_labels()?;
        let pi = ClassDistribution::from_counts(&self.pool.phi())?.pi;
        let (metrics, ledger_row) = match eval {
            Some(eval) => {
                let test = eval.evaluate(&self.state)?;
                let audit = eval.audit(&assignments);
                let row = metrics::ledger_update(
                    &mut self.ledger,
                    EpochRisk {
                        epoch,
                        base_size: self.data.labeled.len(),
                        accepted: assignments.len(),
                        error_rate: audit.error_rate,
                        balanced_error: test.balanced_error,
                    },
                );
                let m = EpochMetrics {
                    accuracy: test.accuracy,
                    macro_f1: test.macro_f1,
                    per_class_accuracy: test.per_class_accuracy,
                    balanced_error: test.balanced_error,
                    error_rate: audit.error_rate,
                    utilization_rate: audit.utilization_rate,
                    kl: eval.kl_to_ground_truth(&assignments),
                    tp: audit.tp,
                    fp: audit.fp,
                };
                (Some(m), Some(row))
            }
            None => (None, None),
        };
        let total_votes = self.registry.total_votes();
        let report = EpochReport {
            epoch,
            losses,
            base_size: self.data.labeled.len(),
            accepted: assignments.len(),
            pi,
            votes_this_epoch: total_votes - votes_before,
            total_votes,
            prior_drift: drift,
            metrics,
            ledger: ledger_row,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        };
        self.reports.push(report.clone());
        Ok(report)
    }

    /// Pseudo-labels the method currently relies on: the resolved pool for
    /// CPG, confident clean-input predictions for the consistency baseline.
    pub fn accepted_pseudo_labels(&self) -> Result<BTreeMap<u64, usize>> {
        match self.method {
            Method::Cpg => Ok(self.pool.pseudo().clone()),
            Method::ConsistencySsl => {
                let mut out = BTreeMap::new();
                for u in self.data.unlabeled {
                    let (label, conf) = cycle::predict_one(&self.state, &u.features)?;
                    if conf > self.config.tau {
                        out.insert(u.id, label);
                    }
                }
                Ok(out)
            }
            Method::SupervisedCe | Method::SupervisedLa => Ok(BTreeMap::new()),
        }
    }

    fn train_step(&mut self, epoch: usize, cycle_open: bool, toggles: Toggles) -> Result<StepOutcome> {
        let cfg = self.config.clone();
        let policy = cfg.augmentation;

        // unlabeled batch and its two views
        let mut weak = Vec::new();
        let mut strong = Vec::new();
        let mut ids = Vec::new();
        if self.uses_unlabeled() && !self.data.unlabeled.is_empty() {
            for _ in 0..cfg.unlabeled_batch() {
                let u = &self.data.unlabeled[data::draw_index(&mut self.unlabeled_rng, self.data.unlabeled.len())];
                weak.push(data::weak_view(&u.features, &policy, &mut self.view_rng));
                strong.push(data::strong_view(&u.features, &policy, &mut self.view_rng));
                ids.push(u.id);
            }
        }

        // reliable pseudo-labels -> votes -> pool -> prior
        let mut prior_drift: f64 = 0.0;
        if toggles.csoc && cycle_open {
            let mut votes = Vec::new();
            for ((w, s), &id) in weak.iter().zip(&strong).zip(&ids) {
                let vp = cycle::predict_on_views(&self.state, w, s)?;
                if cycle::reliability_mask(&vp, cfg.tau) {
                    votes.push((id, vp.label_weak));
                }
            }
            for (id, label) in votes {
                self.registry.record_vote(id, label, epoch)?;
            }
            let assignments = self.registry.resolve(&cfg.vote);
            self.pool.apply(&assignments)?;
            let incremental = ClassDistribution::from_counts(&self.pool.phi())?;
            let recounted = ClassDistribution::from_counts(&self.pool.recount())?;
            prior_drift = incremental
                .pi
                .iter()
                .zip(&recounted.pi)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        }
        let prior = match self.method {
            Method::SupervisedCe | Method::ConsistencySsl => None,
            _ => Some(ClassPrior::from_counts(&self.pool.phi())?),
        };

        // labeled batch from the (updated) pool
        let pool_len = self.pool.len();
        let mut batch: Vec<(&'a [f64], usize)> = Vec::with_capacity(cfg.labeled_batch);
        for _ in 0..cfg.labeled_batch {
            let index = data::draw_index(&mut self.batch_rng, pool_len);
            batch.push(self.pool_features(index));
        }

        // class-aware augmentation of minority representations
        let mut synth: Vec<Vec<SynthNoise>> = vec![Vec::new(); batch.len()];
        if toggles.caa && cycle_open {
            let reps = batch
                .iter()
                .map(|(x, _)| self.state.encode(x))
                .collect::<Result<Vec<_>>>()?;
            let labelled: Vec<(&[f64], usize)> =
                reps.iter().zip(&batch).map(|(h, (_, l))| (&h[..], *l)).collect();
            caa::update_class_stats(&mut self.stats, &labelled, cfg.ema_decay);
            synth = caa::plan_augmentation(
                &labelled,
                &self.stats,
                &self.pool.phi(),
                cfg.synth_count,
                &mut self.synth_rng,
            );
        }

        let mut parts: Vec<LossPart> = Vec::new();
        let primary_spec = match (&self.method, &prior) {
            (Method::SupervisedCe | Method::ConsistencySsl, _) => LossSpec::ce_primary(),
            (_, Some(p)) => LossSpec::la_primary(p.clone()),
            _ => unreachable!("logit-adjusted methods always carry a prior"),
        };
        parts.push(LossPart {
            spec: primary_spec,
            items: batch
                .iter()
                .zip(synth)
                .map(|((x, l), noise)| TrainItem {
                    features: x,
                    target: *l,
                    synth: noise,
                })
                .collect(),
        });
        let mut aux_la_idx = None;
        let mut aux_cons_idx = None;
        if toggles.aux_branch {
            let prior = prior.clone().expect("cpg carries a prior");
            aux_la_idx = Some(parts.len());
            parts.push(LossPart {
                spec: LossSpec::la_auxiliary(prior),
                items: batch.iter().map(|(x, l)| TrainItem::new(x, *l)).collect(),
            });
            let mut items = Vec::with_capacity(weak.len());
            for (w, s) in weak.iter().zip(&strong) {
                let target = predict_with(&self.state, Branch::Auxiliary, w)?;
                items.push(TrainItem::new(s, target));
            }
            aux_cons_idx = Some(parts.len());
            parts.push(LossPart {
                spec: LossSpec::aux_consistency(),
                items,
            });
        }
        if self.method == Method::ConsistencySsl {
            let mut items = Vec::new();
            for (w, s) in weak.iter().zip(&strong) {
                let (label, conf) = cycle::predict_one(&self.state, w)?;
                if conf > cfg.tau {
                    items.push(TrainItem::new(s, label));
                }
            }
            aux_cons_idx = Some(parts.len());
            parts.push(LossPart {
                spec: LossSpec::consistency_primary(),
                items,
            });
        }

        let (values, grads) = model::grads(&self.state, &parts)?;
        let total = values.overall.total;
        if !total.is_finite() {
            return Err(Error::NonFinite("overall loss".into()));
        }
        let lr = model::cosine_lr(self.global_step, &self.config.optimizer)?;
        model::sgd_step(&mut self.state, &grads, lr, &self.config.optimizer)?;
        self.global_step += 1;
        self.loss_trace.push(total);

        Ok(StepOutcome {
            losses: EpochLosses {
                primary: values.parts[0],
                aux_la: aux_la_idx.map_or(0.0, |i| values.parts[i]),
                aux_consistency: aux_cons_idx.map_or(0.0, |i| values.parts[i]),
                total,
            },
            prior_drift,
        })
    }

    pub fn finish(self) -> RunHistory {
        let assignments = self.pool.pseudo().clone();
        RunHistory {
            method: self.method,
            reports: self.reports,
            loss_trace: self.loss_trace,
            ledger: self.ledger,
            state: self.state,
            registry: self.registry,
            assignments,
            class_stats: self.stats,
        }
    }
}

struct StepOutcome {
    losses: EpochLosses,
    prior_drift: f64,
}

fn run_method(
    method: Method,
    config: &TrainConfig,
    data: TrainingData,
    eval: Option<&Evaluator>,
) -> Result<RunHistory> {
    let mut trainer = Trainer::new(method, config.clone(), data)?;
    while !trainer.is_finished() {
        trainer.run_epoch(eval)?;
    }
    Ok(trainer.finish())
}

/// Full CPG training run.
pub fn train(config: &TrainConfig, data: TrainingData, eval: Option<&Evaluator>) -> Result<RunHistory> {
    run_method(Method::Cpg, config, data, eval)
}

/// Supervised or consistency baseline with the same batching and schedule.
pub fn run_baseline(
    kind: BaselineKind,
    config: &TrainConfig,
    data: TrainingData,
    eval: Option<&Evaluator>,
) -> Result<RunHistory> {
    run_method(kind.into(), config, data, eval)
}

/// Runs any method on a split bundle with evaluation enabled.
pub fn run_on_splits(method: Method, config: &TrainConfig, splits: &SplitBundle) -> Result<RunHistory> {
    let unlabeled = splits.unlabeled_inputs();
    let data = TrainingData {
        labeled: &splits.labeled,
        unlabeled: &unlabeled,
    };
    let eval = Evaluator::from_splits(splits);
    run_method(method, config, data, Some(&eval))
}
