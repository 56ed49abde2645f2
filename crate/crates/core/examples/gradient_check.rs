//! Central finite differences against the analytic gradient of a full
//! CPG-style objective: logit-adjusted primary loss with synthesized
//! minority terms, plus both auxiliary terms.

use cpg::caa::SynthNoise;
use cpg::loss::{ClassPrior, LossSpec};
use cpg::model::{self, Activation, LossPart, ModelConfig, TrainItem};

fn main() -> cpg::Result<()> {
    let config = ModelConfig {
        activation: Activation::Tanh,
        hidden_dims: vec![6, 5],
        init_seed: 4,
        ..ModelConfig::new(3, 4)
    };
    let state = model::init(&config)?;
    let prior = ClassPrior::from_counts(&[40, 20, 10, 5])?;
    let xs = [[0.3, -1.2, 0.8], [1.5, 0.2, -0.4], [-0.7, 0.9, 0.1]];

    let mut minority = TrainItem::new(&xs[2], 3);
    minority.synth = vec![SynthNoise {
        radius: 1.4,
        delta: vec![0.5, -1.0, 0.3, 0.8, -0.2],
    }];
    let parts = vec![
        LossPart {
            spec: LossSpec::la_primary(prior.clone()),
            items: vec![TrainItem::new(&xs[0], 0), minority],
        },
        LossPart {
            spec: LossSpec::la_auxiliary(prior),
            items: vec![TrainItem::new(&xs[1], 1)],
        },
        LossPart {
            spec: LossSpec::aux_consistency(),
            items: vec![TrainItem::new(&xs[0], 2)],
        },
    ];

    let (values, grads) = model::grads(&state, &parts)?;
    let analytic = grads.flatten();
    let base = state.params.flatten();
    let eps = 1e-6;
    let mut probe = state.clone();
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] += eps;
        probe.params.load_flat(&p)?;
        let up = model::loss_values(&probe, &parts)?.overall.total;
        p[k] -= 2.0 * eps;
        probe.params.load_flat(&p)?;
        let down = model::loss_values(&probe, &parts)?.overall.total;
        let numeric = (up - down) / (2.0 * eps);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    println!(
        "loss {:.6} over {} parameters, max relative error {worst:.2e}",
        values.overall.total,
        base.len()
    );
    assert!(worst < 1e-4);
    Ok(())
}
