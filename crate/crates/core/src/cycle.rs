//! The self-reinforcing pseudo-labeling cycle: reliability filtering of
//! unlabeled predictions, cumulative voting, expansion of the labeled pool
//! and the pool's class distribution.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{self, AugmentationPolicy, LabeledExample};
use crate::error::{Error, Result};
use crate::loss::{argmax, softmax, ClassPrior};
use crate::model::{Branch, ModelState};
use crate::rng::Rng;

/// Pseudo-label and confidence of the weak and strong views of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewPrediction {
    pub label_weak: usize,
    pub conf_weak: f64,
    pub label_strong: usize,
    pub conf_strong: f64,
}

/// Argmax and max of the primary head's softmax.
pub fn predict_one(state: &ModelState, x: &[f64]) -> Result<(usize, f64)> {
    let probs = softmax(&state.logits(Branch::Primary, x)?);
    let label = argmax(&probs);
    Ok((label, probs[label]))
}

/// Predictions for already-augmented views.
pub fn predict_on_views(state: &ModelState, weak: &[f64], strong: &[f64]) -> Result<ViewPrediction> {
    let (label_weak, conf_weak) = predict_one(state, weak)?;
    let (label_strong, conf_strong) = predict_one(state, strong)?;
    Ok(ViewPrediction {
        label_weak,
        conf_weak,
        label_strong,
        conf_strong,
    })
}

/// Draws a weak and a strong view of `x` and predicts both.
pub fn predict_views(
    state: &ModelState,
    x: &[f64],
    policy: &AugmentationPolicy,
    rng: &mut Rng,
) -> Result<ViewPrediction> {
    let weak = data::weak_view(x, policy, rng);
    let strong = data::strong_view(x, policy, rng);
    predict_on_views(state, &weak, &strong)
}

/// Both views confident above `tau` (strictly) and agreeing on the label.
pub fn reliability_mask(vp: &ViewPrediction, tau: f64) -> bool {
    vp.conf_weak > tau && vp.conf_strong > tau && vp.label_weak == vp.label_strong
}

/// Votes and resolution status of one unlabeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteEntry {
    pub id: u64,
    pub votes: Vec<u32>,
    pub resolved_label: Option<usize>,
    pub first_vote_epoch: Option<usize>,
}

impl VoteEntry {
    pub fn total(&self) -> u64 {
        self.votes.iter().map(|&v| v as u64).sum()
    }
}

/// When a vote tally becomes a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRule {
    pub min_votes: u32,
    /// The modal class must hold strictly more than this share of the votes.
    pub majority_frac: f64,
    /// Keep a label once assigned instead of re-resolving every step.
    #[serde(default)]
    pub freeze: bool,
}

impl Default for VoteRule {
    fn default() -> Self {
        VoteRule {
            min_votes: 3,
            majority_frac: 0.5,
            freeze: false,
        }
    }
}

impl VoteRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_votes < 1 || !(self.majority_frac > 0.5 - 1e-12 && self.majority_frac <= 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "vote rule needs min_votes >= 1 and majority_frac in [0.5, 1], got {self:?}"
            )));
        }
        Ok(())
    }

    /// The label a tally resolves to, if any.
    pub fn decide(&self, votes: &[u32]) -> Option<usize> {
        let total: u64 = votes.iter().map(|&v| v as u64).sum();
        if total < self.min_votes as u64 {
            return None;
        }
        let best = *votes.iter().max()?;
        let mut modal = votes.iter().enumerate().filter(|(_, &v)| v == best);
        let (label, _) = modal.next()?;
        if modal.next().is_some() {
            return None;
        }
        (best as f64 > self.majority_frac * total as f64).then_some(label)
    }
}

/// Cumulative per-sample votes over the whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RegistryData", into = "RegistryData")]
pub struct PseudoRegistry {
    num_classes: usize,
    entries: Vec<VoteEntry>,
    index: HashMap<u64, usize>,
}

#[derive(Serialize, Deserialize)]
struct RegistryData {
    num_classes: usize,
    entries: Vec<VoteEntry>,
}

impl From<RegistryData> for PseudoRegistry {
    fn from(data: RegistryData) -> Self {
        let mut reg = PseudoRegistry {
            num_classes: data.num_classes,
            entries: data.entries,
            index: HashMap::new(),
        };
        reg.rebuild_index();
        reg
    }
}

impl From<PseudoRegistry> for RegistryData {
    fn from(reg: PseudoRegistry) -> Self {
        RegistryData {
            num_classes: reg.num_classes,
            entries: reg.entries,
        }
    }
}

impl PseudoRegistry {
    pub fn new(ids: impl IntoIterator<Item = u64>, num_classes: usize) -> Self {
        let entries: Vec<VoteEntry> = ids
            .into_iter()
            .map(|id| VoteEntry {
                id,
                votes: vec![0; num_classes],
                resolved_label: None,
                first_vote_epoch: None,
            })
            .collect();
        let mut reg = PseudoRegistry {
            num_classes,
            entries,
            index: HashMap::new(),
        };
        reg.rebuild_index();
        reg
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id, i))
            .collect();
    }

    pub fn entries(&self) -> &[VoteEntry] {
        &self.entries
    }

    pub fn entry(&self, id: u64) -> Option<&VoteEntry> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    /// Adds one vote for `label` to sample `id`.
    pub fn record_vote(&mut self, id: u64, label: usize, epoch: usize) -> Result<()> {
        if label >= self.num_classes {
            return Err(Error::InvalidInput(format!("vote for class {label}")));
        }
        let &i = self.index.get(&id).ok_or(Error::UnknownId(id))?;
        let entry = &mut self.entries[i];
        entry.votes[label] += 1;
        entry.first_vote_epoch.get_or_insert(epoch);
        Ok(())
    }

    pub fn total_votes(&self) -> u64 {
        self.entries.iter().map(VoteEntry::total).sum()
    }

    /// Re-derives every sample's label from its cumulative votes and returns
    /// the assigned ones.
    pub fn resolve(&mut self, rule: &VoteRule) -> BTreeMap<u64, usize> {
        let mut out = BTreeMap::new();
        for entry in &mut self.entries {
            let decided = match (rule.freeze, entry.resolved_label) {
                (true, Some(label)) => Some(label),
                _ => rule.decide(&entry.votes),
            };
            entry.resolved_label = decided;
            if let Some(label) = decided {
                out.insert(entry.id, label);
            }
        }
        out
    }

    /// Currently resolved labels.
    pub fn assignments(&self) -> BTreeMap<u64, usize> {
        self.entries
            .iter()
            .filter_map(|e| e.resolved_label.map(|l| (e.id, l)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn from_json(json: &str, num_classes: usize) -> Result<Self> {
        let entries: Vec<VoteEntry> = serde_json::from_str(json)?;
        if entries.iter().any(|e| e.votes.len() != num_classes) {
            return Err(Error::Serde("vote vector length differs from num_classes".into()));
        }
        let mut reg = PseudoRegistry {
            num_classes,
            entries,
            index: HashMap::new(),
        };
        reg.rebuild_index();
        Ok(reg)
    }
}

/// Base labeled examples plus the currently accepted pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPool {
    base: Vec<LabeledExample>,
    pseudo: BTreeMap<u64, usize>,
    base_counts: Vec<usize>,
    pseudo_counts: Vec<usize>,
}

impl LabeledPool {
    /// Pool holding only `base`. Every class must be present.
    pub fn new(base: Vec<LabeledExample>, num_classes: usize) -> Result<Self> {
        let mut base_counts = vec![0; num_classes];
        for e in &base {
            if e.label >= num_classes {
                return Err(Error::InvalidInput(format!("label {} >= {num_classes}", e.label)));
            }
            base_counts[e.label] += 1;
        }
        if let Some(c) = base_counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        Ok(LabeledPool {
            base,
            pseudo: BTreeMap::new(),
            base_counts,
            pseudo_counts: vec![0; num_classes],
        })
    }

    pub fn base(&self) -> &[LabeledExample] {
        &self.base
    }

    pub fn pseudo(&self) -> &BTreeMap<u64, usize> {
        &self.pseudo
    }

    /// `n`: base counts per class.
    pub fn base_counts(&self) -> &[usize] {
        &self.base_counts
    }

    /// `m`: pseudo-label counts per class.
    pub fn pseudo_counts(&self) -> &[usize] {
        &self.pseudo_counts
    }

    /// `phi = n + m`.
    pub fn phi(&self) -> Vec<usize> {
        self.base_counts
            .iter()
            .zip(&self.pseudo_counts)
            .map(|(n, m)| n + m)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.pseudo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces the pseudo-labeled part with `assignments`, adjusting `m`
    /// by the difference between the old and new assignments.
    pub fn apply(&mut self, assignments: &BTreeMap<u64, usize>) -> Result<()> {
        let c = self.base_counts.len();
        if let Some(e) = self.base.iter().find(|e| assignments.contains_key(&e.id)) {
            return Err(Error::IdCollision(e.id));
        }
        if let Some((_, &l)) = assignments.iter().find(|(_, &l)| l >= c) {
            return Err(Error::InvalidInput(format!("pseudo-label {l} >= {c}")));
        }
        for (id, &old) in &self.pseudo {
            if assignments.get(id) != Some(&old) {
                self.pseudo_counts[old] -= 1;
            }
        }
        for (id, &new) in assignments {
            if self.pseudo.get(id) != Some(&new) {
                self.pseudo_counts[new] += 1;
            }
        }
        self.pseudo = assignments.clone();
        Ok(())
    }

    /// `phi` recounted from the examples themselves.
    pub fn recount(&self) -> Vec<usize> {
        let mut phi = vec![0; self.base_counts.len()];
        for e in &self.base {
            phi[e.label] += 1;
        }
        for &l in self.pseudo.values() {
            phi[l] += 1;
        }
        phi
    }
}

/// Functional form of [`LabeledPool::apply`].
pub fn update_pool(mut pool: LabeledPool, assignments: &BTreeMap<u64, usize>) -> Result<LabeledPool> {
    pool.apply(assignments)?;
    Ok(pool)
}

/// Class distribution `pi_c = phi_c / sum(phi)` of a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub pi: Vec<f64>,
}

impl ClassDistribution {
    pub fn from_counts(phi: &[usize]) -> Result<Self> {
        let total: usize = phi.iter().sum();
        if total == 0 {
            return Err(Error::InvalidInput("empty pool".into()));
        }
        if let Some(c) = phi.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        Ok(ClassDistribution {
            pi: phi.iter().map(|&n| n as f64 / total as f64).collect(),
        })
    }

    pub fn prior(&self) -> Result<ClassPrior> {
        ClassPrior::new(self.pi.clone())
    }
}

pub fn class_distribution(pool: &LabeledPool) -> Result<ClassDistribution> {
    ClassDistribution::from_counts(&pool.phi())
}
