//! Class-aware adaptive augmentation in representation space.
//!
//! Each class keeps an EMA centroid of its encoder representations. Its
//! compactness `alpha` is the mean cosine similarity between the batch's
//! class representations and that centroid, and its augmentation radius is
//! `1 / max(alpha, 0.1)`. Minority-class samples get synthetic neighbours
//! `h + r * (h / |h|) ⊙ delta` with `delta ~ N(0, I)`.

use std::io::Write;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const ALPHA_FLOOR: f64 = 0.1;
pub const DEFAULT_SYNTH_COUNT: usize = 10;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Augmentation radius for compactness `alpha`.
pub fn radius_for(alpha: f64) -> f64 {
    1.0 / alpha.max(ALPHA_FLOOR)
}

/// Running per-class centroid, compactness and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub centroids: Vec<Option<Vec<f64>>>,
    pub alpha: Vec<f64>,
    pub radius: Vec<f64>,
    pub seen: Vec<usize>,
}

impl ClassStats {
    /// Fresh stats: no centroid, `alpha = 1`, `r = 1`.
    pub fn new(num_classes: usize) -> Self {
        ClassStats {
            centroids: vec![None; num_classes],
            alpha: vec![1.0; num_classes],
            radius: vec![1.0; num_classes],
            seen: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Writes `class,alpha,radius,count` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("class,alpha,radius,count\n");
        for c in 0..self.num_classes() {
            out.push_str(&format!(
                "{c},{},{},{}\n",
                self.alpha[c], self.radius[c], self.seen[c]
            ));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Folds one batch of `(representation, label)` pairs into the stats.
///
/// Zero-norm representations are skipped with a warning; a class whose
/// updated centroid has zero norm keeps its previous compactness.
pub fn update_class_stats(stats: &mut ClassStats, batch: &[(&[f64], usize)], ema_decay: f64) {
    for class in 0..stats.num_classes() {
        let reps: Vec<&[f64]> = batch
            .iter()
            .filter(|(h, label)| {
                if *label != class {
                    return false;
                }
                if norm(h) == 0.0 {
                    log::warn!("skipping zero-norm representation of class {class}");
                    return false;
                }
                true
            })
            .map(|(h, _)| *h)
            .collect();
        if reps.is_empty() {
            continue;
        }
        let dim = reps[0].len();
        let mut mean = vec![0.0; dim];
        for h in &reps {
            for (m, v) in mean.iter_mut().zip(h.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= reps.len() as f64);
        let centroid = match stats.centroids[class].take() {
            Some(prev) => prev
                .iter()
                .zip(&mean)
                .map(|(p, m)| ema_decay * p + (1.0 - ema_decay) * m)
                .collect(),
            None => mean,
        };
        let cosines: Vec<f64> = reps.iter().filter_map(|h| cosine(h, &centroid)).collect();
        if cosines.is_empty() {
            log::warn!("class {class} centroid has zero norm; compactness unchanged");
        } else {
            let alpha = cosines.iter().sum::<f64>() / cosines.len() as f64;
            stats.alpha[class] = alpha;
            stats.radius[class] = radius_for(alpha);
        }
        stats.centroids[class] = Some(centroid);
        stats.seen[class] += reps.len();
    }
}

/// Classes whose count is strictly below the lower median of `phi`.
pub fn minority_classes(phi: &[usize]) -> Vec<usize> {
    if phi.is_empty() {
        return Vec::new();
    }
    let mut sorted = phi.to_vec();
    sorted.sort_unstable();
    let median = sorted[(sorted.len() - 1) / 2];
    phi.iter()
        .enumerate()
        .filter(|(_, &n)| n < median)
        .map(|(c, _)| c)
        .collect()
}

/// A fixed radius and noise draw. Applied to a representation `h` it gives
/// `h + radius * (h / |h|) ⊙ delta`; gradients flow through `h` only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNoise {
    pub radius: f64,
    pub delta: Vec<f64>,
}

impl SynthNoise {
    pub fn draw(radius: f64, dim: usize, rng: &mut Rng) -> Self {
        SynthNoise {
            radius,
            delta: (0..dim).map(|_| StandardNormal.sample(rng)).collect(),
        }
    }

    /// The synthesized representation. A zero `h` is returned unchanged.
    pub fn apply(&self, h: &[f64]) -> Vec<f64> {
        let n = norm(h);
        if n == 0.0 {
            return h.to_vec();
        }
        h.iter()
            .zip(&self.delta)
            .map(|(v, d)| v + (v / n) * self.radius * d)
            .collect()
    }

    /// Pulls `dL/dh'` back to `dL/dh`:
    /// `g + (r / |h|) (I - u u^T)(delta ⊙ g)` with `u = h / |h|`.
    pub fn backward(&self, h: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let n = norm(h);
        if n == 0.0 {
            return grad_out.to_vec();
        }
        let v: Vec<f64> = grad_out.iter().zip(&self.delta).map(|(g, d)| g * d).collect();
        let u_dot_v: f64 = h.iter().zip(&v).map(|(hv, vv)| hv / n * vv).sum();
        grad_out
            .iter()
            .zip(&v)
            .zip(h)
            .map(|((g, vv), hv)| g + self.radius / n * (vv - hv / n * u_dot_v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesizedRep {
    pub rep: Vec<f64>,
    pub label: usize,
    pub origin_id: u64,
}

/// `count` synthetic neighbours of `h` at radius `r`.
pub fn synthesize(
    h: &[f64],
    r: f64,
    label: usize,
    origin_id: u64,
    rng: &mut Rng,
    count: usize,
) -> Result<Vec<SynthesizedRep>> {
    if norm(h) == 0.0 {
        return Err(Error::InvalidInput(
            "cannot synthesize around a zero-norm representation".into(),
        ));
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be > 0, got {r}")));
    }
    Ok((0..count)
        .map(|_| SynthesizedRep {
            rep: SynthNoise::draw(r, h.len(), rng).apply(h),
            label,
            origin_id,
        })
        .collect())
}

/// Noise draws per batch item: `count` draws for items whose label is a
/// minority class of `phi` and whose representation is nonzero, none otherwise.
pub fn plan_augmentation(
    reps: &[(&[f64], usize)],
    stats: &ClassStats,
    phi: &[usize],
    count: usize,
    rng: &mut Rng,
) -> Vec<Vec<SynthNoise>> {
    let minority = minority_classes(phi);
    reps.iter()
        .map(|(h, label)| {
            if !minority.contains(label) || norm(h) == 0.0 {
                return Vec::new();
            }
            let r = stats.radius[*label];
            (0..count)
                .map(|_| SynthNoise::draw(r, h.len(), rng))
                .collect()
        })
        .collect()
}

/// The batch followed by the synthesized minority representations.
pub fn augment_batch(
    batch: &[(&[f64], usize)],
    stats: &ClassStats,
    phi: &[usize],
    count: usize,
    rng: &mut Rng,
) -> Vec<(Vec<f64>, usize)> {
    let plan = plan_augmentation(batch, stats, phi, count, rng);
    let mut out: Vec<(Vec<f64>, usize)> = batch.iter().map(|(h, l)| (h.to_vec(), *l)).collect();
    for ((h, label), noises) in batch.iter().zip(&plan) {
        out.extend(noises.iter().map(|n| (n.apply(h), *label)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identical_reps_are_fully_compact() {
        let mut stats = ClassStats::new(2);
        let h = [0.3, 0.4, 1.0];
        update_class_stats(&mut stats, &[(&h, 1), (&h, 1), (&h, 1)], 0.9);
        assert!((stats.alpha[1] - 1.0).abs() < 1e-12);
        assert!((stats.radius[1] - 1.0).abs() < 1e-12);
        assert_eq!(stats.seen, vec![0, 3]);
    }

    #[test]
    fn orthogonal_pair_compactness() {
        let mut stats = ClassStats::new(1);
        update_class_stats(&mut stats, &[(&[1.0, 0.0], 0), (&[0.0, 1.0], 0)], 0.9);
        assert_eq!(stats.centroids[0], Some(vec![0.5, 0.5]));
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((stats.alpha[0] - s).abs() < 1e-12);
        assert!((stats.radius[0] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ema_update_of_centroid() {
        let mut stats = ClassStats::new(1);
        update_class_stats(&mut stats, &[(&[1.0, 0.0], 0)], 0.9);
        update_class_stats(&mut stats, &[(&[0.0, 1.0], 0)], 0.9);
        let c = stats.centroids[0].clone().unwrap();
        assert!((c[0] - 0.9).abs() < 1e-12 && (c[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn radius_floor() {
        assert_eq!(radius_for(-0.5), 10.0);
        assert_eq!(radius_for(0.05), 10.0);
        assert!((radius_for(0.5) - 2.0).abs() < 1e-15);
        assert!(radius_for(0.8) < radius_for(0.4));
    }

    #[test]
    fn zero_norm_reps_skipped() {
        let mut stats = ClassStats::new(1);
        update_class_stats(&mut stats, &[(&[0.0, 0.0], 0)], 0.9);
        assert_eq!(stats.seen, vec![0]);
        assert_eq!(stats.centroids[0], None);
    }

    #[test]
    fn minority_rule() {
        assert_eq!(minority_classes(&[100, 50, 10]), vec![2]);
        assert_eq!(minority_classes(&[7, 7, 7, 7]), Vec::<usize>::new());
        assert_eq!(minority_classes(&[9, 7, 5, 3]), vec![3]);
    }

    fn brute_minority(phi: &[usize]) -> Vec<usize> {
        // lower median: the smallest value v with at least ceil(n/2) entries <= v
        let need = phi.len().div_ceil(2);
        let median = *phi
            .iter()
            .filter(|&&v| phi.iter().filter(|&&w| w <= v).count() >= need)
            .min()
            .unwrap();
        (0..phi.len()).filter(|&c| phi[c] < median).collect()
    }

    proptest::proptest! {
        #[test]
        fn minority_matches_brute_force(phi in proptest::collection::vec(1usize..50, 1..9)) {
            proptest::prop_assert_eq!(minority_classes(&phi), brute_minority(&phi));
        }
    }

    #[test]
    fn synth_with_zero_noise_is_identity() {
        let noise = SynthNoise {
            radius: 3.0,
            delta: vec![0.0, 0.0],
        };
        assert_eq!(noise.apply(&[3.0, 4.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn synth_hand_case() {
        let noise = SynthNoise {
            radius: 2.0,
            delta: vec![1.0, 1.0],
        };
        let out = noise.apply(&[3.0, 4.0]);
        assert!((out[0] - 4.2).abs() < 1e-12 && (out[1] - 5.6).abs() < 1e-12);
    }

    #[test]
    fn synthesize_count_and_errors() {
        let mut rng = rng::stream(0, 1);
        let reps = synthesize(&[1.0, 2.0], 1.5, 3, 77, &mut rng, DEFAULT_SYNTH_COUNT).unwrap();
        assert_eq!(reps.len(), 10);
        assert!(reps.iter().all(|r| r.label == 3 && r.origin_id == 77));
        assert!(synthesize(&[0.0, 0.0], 1.0, 0, 0, &mut rng, 10).is_err());
        assert!(synthesize(&[1.0, 0.0], 0.0, 0, 0, &mut rng, 10).is_err());
    }

    #[test]
    fn synth_spread_matches_radius() {
        let h = [3.0, -4.0, 0.0, 12.0];
        let r = 0.7;
        let n = 13.0;
        let mut rng = rng::stream(5, 1);
        let draws = 10_000;
        let reps = synthesize(&h, r, 0, 0, &mut rng, draws).unwrap();
        for k in 0..h.len() {
            let diffs: Vec<f64> = reps.iter().map(|s| s.rep[k] - h[k]).collect();
            let mean = diffs.iter().sum::<f64>() / draws as f64;
            let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
            let expected = r * h[k].abs() / n;
            if expected == 0.0 {
                assert!(var.sqrt() < 1e-12);
            } else {
                assert!(((var.sqrt() - expected) / expected).abs() < 0.05, "coord {k}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let noise = SynthNoise {
            radius: 1.3,
            delta: vec![0.4, -1.1, 0.7],
        };
        let h = [0.5, 1.5, -0.8];
        let w = [0.3, -0.9, 1.7];
        let f = |h: &[f64]| -> f64 { noise.apply(h).iter().zip(&w).map(|(a, b)| a * b).sum() };
        let grad = noise.backward(&h, &w);
        for k in 0..3 {
            let mut hp = h;
            let mut hm = h;
            hp[k] += 1e-6;
            hm[k] -= 1e-6;
            let fd = (f(&hp) - f(&hm)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-8, "{k}: {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn augment_batch_sizes() {
        let stats = ClassStats::new(3);
        let phi = [100, 50, 10];
        let mut rng = rng::stream(0, 2);
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        assert_eq!(
            augment_batch(&[(&a, 0), (&b, 1)], &stats, &phi, 10, &mut rng).len(),
            2
        );
        assert_eq!(augment_batch(&[(&a, 2)], &stats, &phi, 10, &mut rng).len(), 11);
        let batch = [(&a[..], 2), (&b[..], 0), (&b[..], 2), (&a[..], 1)];
        let out = augment_batch(&batch, &stats, &phi, 10, &mut rng);
        let minority = batch.iter().filter(|(_, l)| *l == 2).count();
        assert_eq!(out.len(), batch.len() + 10 * minority);
        assert!(out[batch.len()..].iter().all(|(_, l)| *l == 2));
    }

    #[test]
    fn stats_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stats.csv");
        ClassStats::new(2).write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "class,alpha,radius,count\n0,1,1,0\n1,1,1,0\n");
    }
}
