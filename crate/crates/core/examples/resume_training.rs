//! Stop a run halfway, save a checkpoint, resume it from disk and check the
//! result against an uninterrupted run.

use cpg::data::{generate_splits, DatasetSpec, UnlabeledShape};
use cpg::trainer::{Method, TrainConfig, Trainer, TrainerCheckpoint, TrainingData};

fn main() -> cpg::Result<()> {
    let splits = generate_splits(&DatasetSpec::desk_scale(UnlabeledShape::Inverse, 2))?;
    let unlabeled = splits.unlabeled_inputs();
    let data = TrainingData {
        labeled: &splits.labeled,
        unlabeled: &unlabeled,
    };
    let config = TrainConfig::for_splits(&splits, 2).with_epochs(5, 12);

    let mut straight = Trainer::new(Method::Cpg, config.clone(), data)?;
    while !straight.is_finished() {
        straight.run_epoch(None)?;
    }
    let straight = straight.finish();

    let path = std::env::temp_dir().join("cpg-resume-example.json");
    let mut first = Trainer::new(Method::Cpg, config, data)?;
    for _ in 0..7 {
        first.run_epoch(None)?;
    }
    first.checkpoint().save(&path)?;
    println!("checkpoint after epoch {} at {}", first.epoch(), path.display());

    let mut resumed = Trainer::resume(TrainerCheckpoint::load(&path)?, data)?;
    while !resumed.is_finished() {
        resumed.run_epoch(None)?;
    }
    let resumed = resumed.finish();
    assert_eq!(resumed.loss_trace, straight.loss_trace);
    assert_eq!(resumed.state, straight.state);
    println!(
        "resumed run matches: {} steps, {} pseudo-labels",
        resumed.loss_trace.len(),
        resumed.assignments.len()
    );
    Ok(())
}
