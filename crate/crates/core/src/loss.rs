//! Logit-adjusted cross-entropy, the auxiliary consistency loss, and the
//! routing rules that combine them into one objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Branch;

/// A strictly positive class prior that sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidPrior("empty prior".into()));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidPrior(format!(
                "entries must be finite and > 0, found {p}"
            )));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidPrior(format!("entries sum to {sum}, not 1")));
        }
        Ok(ClassPrior { probs })
    }

    pub fn uniform(num_classes: usize) -> Self {
        ClassPrior {
            probs: vec![1.0 / num_classes as f64; num_classes],
        }
    }

    /// Normalizes a vector of positive class counts.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::EmptyClass(c));
        }
        let total: usize = counts.iter().sum();
        ClassPrior::new(counts.iter().map(|&n| n as f64 / total as f64).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn log_probs(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p.ln()).collect()
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Cross-entropy of `logits` against class `y`, and its gradient w.r.t. the logits.
pub fn cross_entropy_with_grad(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_norm = max + sum.ln();
    let loss = log_norm - logits[y];
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - log_norm).exp()).collect();
    grad[y] -= 1.0;
    (loss, grad)
}

pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    cross_entropy_with_grad(logits, y).0
}

/// Logit-adjusted loss: cross-entropy on `logits + ln(prior)`.
pub fn la_loss(logits: &[f64], y: usize, prior: &ClassPrior) -> f64 {
    la_loss_with_grad(logits, y, prior).0
}

/// Logit-adjusted loss and its gradient w.r.t. the raw logits.
///
/// The shift by `ln(prior)` is constant in the logits, so the gradient is
/// `softmax(logits + ln prior) - onehot(y)`.
pub fn la_loss_with_grad(logits: &[f64], y: usize, prior: &ClassPrior) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), prior.len());
    let adjusted: Vec<f64> = logits
        .iter()
        .zip(prior.probs())
        .map(|(l, p)| l + p.ln())
        .collect();
    cross_entropy_with_grad(&adjusted, y)
}

/// Consistency loss: plain cross-entropy of strong-view logits against the
/// weak-view pseudo-label.
pub fn aux_loss(strong_logits: &[f64], pseudo_label: usize) -> f64 {
    cross_entropy(strong_logits, pseudo_label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Logit-adjusted loss on the primary head.
    LaPrimary,
    /// Logit-adjusted loss on the auxiliary head.
    LaAuxiliary,
    /// Weak-to-strong consistency on the auxiliary head.
    AuxConsistency,
    /// Unadjusted cross-entropy on the primary head (supervised and
    /// consistency baselines).
    CePrimary,
    /// Weak-to-strong consistency on the primary head (consistency baseline).
    ConsistencyPrimary,
}

/// One loss term: what it computes, under which prior, and which branch it
/// trains (`omega` set iff auxiliary).
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub prior: Option<ClassPrior>,
    pub omega: bool,
}

impl LossSpec {
    pub fn la_primary(prior: ClassPrior) -> Self {
        LossSpec {
            kind: LossKind::LaPrimary,
            prior: Some(prior),
            omega: false,
        }
    }

    pub fn la_auxiliary(prior: ClassPrior) -> Self {
        LossSpec {
            kind: LossKind::LaAuxiliary,
            prior: Some(prior),
            omega: true,
        }
    }

    pub fn aux_consistency() -> Self {
        LossSpec {
            kind: LossKind::AuxConsistency,
            prior: None,
            omega: true,
        }
    }

    pub fn ce_primary() -> Self {
        LossSpec {
            kind: LossKind::CePrimary,
            prior: None,
            omega: false,
        }
    }

    pub fn consistency_primary() -> Self {
        LossSpec {
            kind: LossKind::ConsistencyPrimary,
            prior: None,
            omega: false,
        }
    }

    /// Head that receives this term's gradient.
    pub fn branch(&self) -> Branch {
        match self.kind {
            LossKind::LaPrimary | LossKind::CePrimary | LossKind::ConsistencyPrimary => {
                Branch::Primary
            }
            LossKind::LaAuxiliary | LossKind::AuxConsistency => Branch::Auxiliary,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wants_aux = self.branch() == Branch::Auxiliary;
        if self.omega != wants_aux {
            return Err(Error::InvalidRouting(format!(
                "{:?} requires omega = {}",
                self.kind, wants_aux as u8
            )));
        }
        let needs_prior = matches!(self.kind, LossKind::LaPrimary | LossKind::LaAuxiliary);
        if needs_prior != self.prior.is_some() {
            return Err(Error::InvalidRouting(format!(
                "{:?} {} a class prior",
                self.kind,
                if needs_prior { "requires" } else { "does not take" }
            )));
        }
        Ok(())
    }

    /// Per-example loss and logit gradient for this term.
    pub fn eval(&self, logits: &[f64], target: usize) -> (f64, Vec<f64>) {
        match &self.prior {
            Some(prior) => la_loss_with_grad(logits, target, prior),
            None => cross_entropy_with_grad(logits, target),
        }
    }
}

/// Total objective and the branch each part routes to.
#[derive(Debug, Clone, PartialEq)]
pub struct OverallLoss {
    pub total: f64,
    pub routing: Vec<Branch>,
}

/// Sums already-averaged part losses: logit-adjusted and cross-entropy terms
/// always count, consistency terms count through `omega`.
pub fn overall_loss(parts: &[(LossSpec, f64)]) -> Result<OverallLoss> {
    let mut total = 0.0;
    let mut routing = Vec::with_capacity(parts.len());
    for (spec, value) in parts {
        spec.validate()?;
        let weight = match spec.kind {
            LossKind::AuxConsistency => {
                if spec.omega {
                    1.0
                } else {
                    0.0
                }
            }
            _ => 1.0,
        };
        total += weight * value;
        routing.push(spec.branch());
    }
    Ok(OverallLoss { total, routing })
}
