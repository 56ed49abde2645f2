//! One pass of the pseudo-labeling cycle by hand: warm up a model on the
//! labeled split, filter unlabeled samples by weak/strong agreement, vote,
//! promote resolved samples into the pool and refresh the class prior.

use cpg::cycle::{self, class_distribution, LabeledPool, PseudoRegistry, VoteRule};
use cpg::data::{generate_splits, DatasetSpec, UnlabeledShape};
use cpg::rng::{self, streams};
use cpg::trainer::{Method, TrainConfig, Trainer, TrainingData};

fn main() -> cpg::Result<()> {
    let splits = generate_splits(&DatasetSpec::desk_scale(UnlabeledShape::Inverse, 0))?;
    let unlabeled = splits.unlabeled_inputs();
    let config = TrainConfig::for_splits(&splits, 0).with_epochs(30, 30);
    let data = TrainingData {
        labeled: &splits.labeled,
        unlabeled: &unlabeled,
    };
    let mut warmup = Trainer::new(Method::SupervisedLa, config.clone(), data)?;
    while !warmup.is_finished() {
        warmup.run_epoch(None)?;
    }
    let state = warmup.state().clone();

    let c = splits.num_classes();
    let mut registry = PseudoRegistry::new(unlabeled.iter().map(|u| u.id), c);
    let mut pool = LabeledPool::new(splits.labeled.clone(), c)?;
    let rule = VoteRule::default();
    let mut views = rng::stream(0, streams::VIEWS);
    println!("before: phi {:?}  pi {:.3?}", pool.phi(), class_distribution(&pool)?.pi);

    for epoch in 1..=4 {
        let mut passed = 0;
        for u in &unlabeled {
            let vp = cycle::predict_views(&state, &u.features, &config.augmentation, &mut views)?;
            if cycle::reliability_mask(&vp, config.tau) {
                registry.record_vote(u.id, vp.label_weak, epoch)?;
                passed += 1;
            }
        }
        let assignments = registry.resolve(&rule);
        pool.apply(&assignments)?;
        println!(
            "round {epoch}: {passed} passed the filter, {} resolved, phi {:?}",
            assignments.len(),
            pool.phi()
        );
    }
    println!("after:  pi {:.3?}", class_distribution(&pool)?.pi);
    Ok(())
}
