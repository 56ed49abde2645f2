//! Evaluation quantities: classification metrics, pseudo-label audits
//! against hidden ground truth, KL divergence, Welch's t-test and the
//! per-epoch risk ledger.
//!
//! [`HiddenLabels`] is the only carrier of unlabeled ground truth and its
//! contents are readable from this module alone.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth classes of the unlabeled set, keyed by id.
///
/// No accessor exposes the labels outside this module:
///
/// ```compile_fail
/// fn peek(h: &cpg::metrics::HiddenLabels) -> usize {
///     h.labels[&0]
/// }
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLabels {
    labels: HashMap<u64, usize>,
    num_classes: usize,
}

impl HiddenLabels {
    pub(crate) fn new(labels: HashMap<u64, usize>, num_classes: usize) -> Self {
        HiddenLabels {
            labels,
            num_classes,
        }
    }

    /// Number of unlabeled samples `M`.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in self.labels.values() {
            counts[l] += 1;
        }
        counts
    }
}

fn check_pair(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::InvalidInput("empty prediction list".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: preds.len(),
        });
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pair(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Recall of every class; classes absent from `labels` report `NaN`.
pub fn per_class_accuracy(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    check_pair(preds, labels)?;
    let mut hits = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        totals[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    Ok(hits
        .iter()
        .zip(&totals)
        .map(|(&h, &t)| if t == 0 { f64::NAN } else { h as f64 / t as f64 })
        .collect())
}

/// Mean per-class error over the classes present in `labels`.
pub fn balanced_error(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    let recalls: Vec<f64> = per_class_accuracy(preds, labels, num_classes)?
        .into_iter()
        .filter(|r| !r.is_nan())
        .collect();
    Ok(1.0 - recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Unweighted mean of per-class F1; a class with no true and no predicted
/// samples scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<f64> {
    check_pair(preds, labels)?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let f1_sum: f64 = (0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(f1_sum / num_classes as f64)
}

/// Per-class true/false positives among accepted pseudo-labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelAudit {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub ground_truth: Vec<usize>,
    pub accepted: usize,
    pub error_rate: f64,
    pub utilization_rate: f64,
}

/// Scores `assignments` (id → pseudo-label) against the hidden labels.
pub fn pseudo_audit(assignments: &BTreeMap<u64, usize>, hidden: &HiddenLabels) -> PseudoLabelAudit {
    let c = hidden.num_classes;
    let mut tp = vec![0; c];
    let mut fp = vec![0; c];
    for (id, &label) in assignments {
        match hidden.labels.get(id) {
            Some(&truth) if truth == label => tp[label] += 1,
            _ => fp[label] += 1,
        }
    }
    let accepted = assignments.len();
    let errors: usize = fp.iter().sum();
    PseudoLabelAudit {
        tp,
        fp,
        ground_truth: hidden.counts(),
        accepted,
        error_rate: errors as f64 / accepted.max(1) as f64,
        utilization_rate: if hidden.is_empty() {
            0.0
        } else {
            accepted as f64 / hidden.len() as f64
        },
    }
}

/// Class distribution of the unlabeled ground truth.
pub fn ground_truth_distribution(hidden: &HiddenLabels) -> Vec<f64> {
    let counts = hidden.counts();
    let total = counts.iter().sum::<usize>().max(1) as f64;
    counts.iter().map(|&n| n as f64 / total).collect()
}

/// Class distribution of accepted pseudo-labels, `None` when nothing is accepted.
pub fn assignment_distribution(assignments: &BTreeMap<u64, usize>, num_classes: usize) -> Option<Vec<f64>> {
    if assignments.is_empty() {
        return None;
    }
    let mut counts = vec![0usize; num_classes];
    for &l in assignments.values() {
        counts[l] += 1;
    }
    let total = assignments.len() as f64;
    Some(counts.iter().map(|&n| n as f64 / total).collect())
}

pub const KL_SMOOTHING: f64 = 1e-8;

/// `KL(p || q)` after adding [`KL_SMOOTHING`] to every cell and renormalizing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: q.len(),
            actual: p.len(),
        });
    }
    for dist in [p, q] {
        let sum: f64 = dist.iter().sum();
        if dist.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!("not a distribution: {dist:?}")));
        }
    }
    let smooth = |d: &[f64]| -> Vec<f64> {
        let z = 1.0 + KL_SMOOTHING * d.len() as f64;
        d.iter().map(|v| (v + KL_SMOOTHING) / z).collect()
    };
    let (ps, qs) = (smooth(p), smooth(q));
    Ok(ps
        .iter()
        .zip(&qs)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch t-test.
///
/// When both samples have zero variance the test degenerates to an exact
/// comparison: equal means give `t = 0, p = 1`, different means give an
/// infinite `t` and `p = 0`.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidInput(
            "welch t-test needs at least two values per sample".into(),
        ));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        let df = (a.len() + b.len() - 2) as f64;
        return Ok(if ma == mb {
            WelchResult {
                t: 0.0,
                df,
                p_value: 1.0,
            }
        } else {
            WelchResult {
                t: if ma > mb { f64::INFINITY } else { f64::NEG_INFINITY },
                df,
                p_value: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / (sa * sa / (a.len() - 1) as f64 + sb * sb / (b.len() - 1) as f64);
    Ok(WelchResult {
        t,
        df,
        p_value: student_t_two_sided(t, df),
    })
}

/// Lanczos approximation (g = 7, 9 terms).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn student_t_pdf(x: f64, df: f64) -> f64 {
    let log_norm = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * std::f64::consts::PI).ln();
    (log_norm - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp()
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn step(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom, from the
/// density integrated over `[0, |t|]`.
fn student_t_two_sided(t: f64, df: f64) -> f64 {
    let x = t.abs();
    if x.is_infinite() {
        return 0.0;
    }
    let pdf = |v: f64| student_t_pdf(v, df);
    // integrate over [0, x] in unit-width pieces to keep Simpson accurate
    let pieces = x.ceil().max(1.0) as usize;
    let width = x / pieces as f64;
    let central: f64 = (0..pieces)
        .map(|i| {
            let lo = i as f64 * width;
            adaptive_simpson(&pdf, lo, lo + width, 1e-13, 40)
        })
        .sum();
    (1.0 - 2.0 * central).clamp(0.0, 1.0)
}

/// Verdict of a significance comparison at level `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Win,
    Tie,
    Loss,
}

impl Verdict {
    pub fn from_test(result: &WelchResult, alpha: f64) -> Self {
        if result.p_value < alpha && result.t > 0.0 {
            Verdict::Win
        } else if result.p_value < alpha && result.t < 0.0 {
            Verdict::Loss
        } else {
            Verdict::Tie
        }
    }
}

/// One epoch of measurable risk-bound terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub epoch: usize,
    /// Error rate among accepted pseudo-labels.
    pub eps: f64,
    /// `N + accepted`.
    pub o: usize,
    /// Balanced test error.
    pub risk: f64,
    pub cumulative_eps: f64,
    /// `risk[t-1] - risk[t]`; absent on the first row.
    pub risk_reduction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskLedger {
    pub rows: Vec<LedgerRow>,
}

/// What one epoch contributes to the ledger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRisk {
    pub epoch: usize,
    pub base_size: usize,
    pub accepted: usize,
    pub error_rate: f64,
    pub balanced_error: f64,
}

/// Appends and returns the row for `data`.
pub fn ledger_update(ledger: &mut RiskLedger, data: EpochRisk) -> LedgerRow {
    let prev = ledger.rows.last();
    let row = LedgerRow {
        epoch: data.epoch,
        eps: data.error_rate,
        o: data.base_size + data.accepted,
        risk: data.balanced_error,
        cumulative_eps: prev.map_or(0.0, |r| r.cumulative_eps) + data.error_rate,
        risk_reduction: prev.map(|r| r.risk - data.balanced_error),
    };
    ledger.rows.push(row.clone());
    row
}
