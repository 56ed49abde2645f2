//! Shared helpers for integration tests: an independent forward/loss oracle
//! for the two-headed MLP and random problem generators.

#![allow(dead_code)]

use cpg::caa::SynthNoise;
use cpg::loss::{ClassPrior, LossKind, LossSpec};
use cpg::model::{self, Activation, Branch, LossPart, ModelConfig, ModelState, Params, TrainItem};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(o, bo)| bo + w[o * x.len()..(o + 1) * x.len()].iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

/// Encoder output, written directly from the layer definition.
pub fn oracle_encode(p: &Params, act: Activation, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in &p.encoder {
        a = affine(&layer.weight, &layer.bias, &a)
            .into_iter()
            .map(|z| match act {
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
            })
            .collect();
    }
    a
}

pub fn oracle_synth(h: &[f64], noise: &SynthNoise) -> Vec<f64> {
    let n = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        return h.to_vec();
    }
    h.iter().zip(&noise.delta).map(|(v, d)| v + noise.radius * d * v / n).collect()
}

/// `-log softmax(z)[y]` through log-sum-exp in the textbook form.
pub fn oracle_ce(z: &[f64], y: usize) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    lse - z[y]
}

pub fn oracle_term(spec: &LossSpec, z: &[f64], y: usize) -> f64 {
    match spec.kind {
        LossKind::LaPrimary | LossKind::LaAuxiliary => {
            let pi = spec.prior.as_ref().unwrap().probs();
            let adj: Vec<f64> = z.iter().zip(pi).map(|(a, p)| a + p.ln()).collect();
            oracle_ce(&adj, y)
        }
        _ => oracle_ce(z, y),
    }
}

/// Sum over parts of the per-part mean loss. Each item's value is the mean
/// over its original and synthesized terms.
pub fn oracle_loss(p: &Params, act: Activation, parts: &[LossPart]) -> f64 {
    let mut total = 0.0;
    for part in parts {
        let head = match part.spec.branch() {
            Branch::Primary => &p.primary,
            Branch::Auxiliary => &p.auxiliary,
        };
        let mut sum = 0.0;
        for item in &part.items {
            let h = oracle_encode(p, act, item.features);
            let mut terms = vec![oracle_term(&part.spec, &affine(&head.weight, &head.bias, &h), item.target)];
            for noise in &item.synth {
                let hs = oracle_synth(&h, noise);
                terms.push(oracle_term(&part.spec, &affine(&head.weight, &head.bias, &hs), item.target));
            }
            sum += terms.iter().sum::<f64>() / terms.len() as f64;
        }
        if !part.items.is_empty() {
            total += sum / part.items.len() as f64;
        }
    }
    total
}

pub fn random_prior(c: usize, r: &mut ChaCha8Rng) -> ClassPrior {
    let counts: Vec<usize> = (0..c).map(|_| r.random_range(1..50)).collect();
    ClassPrior::from_counts(&counts).unwrap()
}

/// A random small model and a random batch touching every loss kind listed
/// in `kinds`, with synthesized terms on the logit-adjusted primary part.
pub struct Problem {
    pub state: ModelState,
    pub inputs: Vec<Vec<f64>>,
    pub plan: Vec<(LossSpec, Vec<(usize, usize, Vec<SynthNoise>)>)>,
}

impl Problem {
    pub fn random(seed: u64, kinds: &[LossKind]) -> Problem {
        let mut r = rng(seed);
        let input_dim = r.random_range(1..6);
        let layers = r.random_range(1..3);
        let hidden: Vec<usize> = (0..layers).map(|_| r.random_range(2..7)).collect();
        let c = r.random_range(2..6);
        let activation = if r.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let config = ModelConfig {
            input_dim,
            hidden_dims: hidden.clone(),
            num_classes: c,
            activation,
            init_seed: seed,
        };
        let mut state = model::init(&config).unwrap();
        // nonzero biases so that every parameter gets exercised
        for (t, is_bias) in state.params.tensors_mut() {
            if is_bias {
                for v in t.iter_mut() {
                    *v = r.random_range(-0.5..0.5);
                }
            }
        }
        let n_inputs = 6;
        let inputs: Vec<Vec<f64>> = (0..n_inputs)
            .map(|_| (0..input_dim).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let rep = *hidden.last().unwrap();
        let plan = kinds
            .iter()
            .map(|kind| {
                let spec = match kind {
                    LossKind::LaPrimary => LossSpec::la_primary(random_prior(c, &mut r)),
                    LossKind::LaAuxiliary => LossSpec::la_auxiliary(random_prior(c, &mut r)),
                    LossKind::AuxConsistency => LossSpec::aux_consistency(),
                    LossKind::CePrimary => LossSpec::ce_primary(),
                    LossKind::ConsistencyPrimary => LossSpec::consistency_primary(),
                };
                let items = (0..r.random_range(1..4))
                    .map(|_| {
                        let synth = if *kind == LossKind::LaPrimary {
                            (0..r.random_range(0..3))
                                .map(|_| SynthNoise {
                                    radius: r.random_range(0.1..2.0),
                                    delta: (0..rep).map(|_| r.random_range(-1.5..1.5)).collect(),
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        (r.random_range(0..n_inputs), r.random_range(0..c), synth)
                    })
                    .collect();
                (spec, items)
            })
            .collect();
        Problem { state, inputs, plan }
    }

    pub fn parts(&self) -> Vec<LossPart<'_>> {
        self.plan
            .iter()
            .map(|(spec, items)| LossPart {
                spec: spec.clone(),
                items: items
                    .iter()
                    .map(|(i, y, synth)| TrainItem {
                        features: &self.inputs[*i],
                        target: *y,
                        synth: synth.clone(),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Largest relative gap between the analytic gradient and a central
    /// finite difference of the oracle loss, over every parameter.
    pub fn max_relative_error(&self) -> f64 {
        let parts = self.parts();
        let (_, g) = model::grads(&self.state, &parts).unwrap();
        let analytic = g.flatten();
        let base = self.state.params.flatten();
        let act = self.state.config.activation;
        let mut probe = self.state.params.clone();
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, a) in analytic.iter().enumerate() {
            let mut shifted = base.clone();
            shifted[k] = base[k] + eps;
            probe.load_flat(&shifted).unwrap();
            let up = oracle_loss(&probe, act, &parts);
            shifted[k] = base[k] - eps;
            probe.load_flat(&shifted).unwrap();
            let down = oracle_loss(&probe, act, &parts);
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }
}

pub const ALL_KINDS: [LossKind; 5] = [
    LossKind::LaPrimary,
    LossKind::LaAuxiliary,
    LossKind::AuxConsistency,
    LossKind::CePrimary,
    LossKind::ConsistencyPrimary,
];

/// The routings the trainer builds, plus each kind on its own.
pub fn routing_for(index: usize) -> Vec<LossKind> {
    use LossKind::*;
    let routings: [&[LossKind]; 9] = [
        &[LaPrimary, LaAuxiliary, AuxConsistency],
        &[LaPrimary],
        &[CePrimary],
        &[CePrimary, ConsistencyPrimary],
        &[LaAuxiliary],
        &[AuxConsistency],
        &[ConsistencyPrimary],
        &[LaPrimary, AuxConsistency],
        &ALL_KINDS,
    ];
    routings[index % routings.len()].to_vec()
}
