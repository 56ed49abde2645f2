//! Generate the desk-scale splits for each unlabeled shape, write one of
//! them to CSV and read it back.
//!
//! ```bash
//! cargo run --example generate_data
//! ```

use cpg::data::{generate_splits, DatasetSpec, SplitBundle, UnlabeledShape};

fn histogram(labels: impl Iterator<Item = usize>, c: usize) -> Vec<usize> {
    let mut h = vec![0; c];
    for l in labels {
        h[l] += 1;
    }
    h
}

fn main() -> cpg::Result<()> {
    for shape in [
        UnlabeledShape::Consistent,
        UnlabeledShape::Inverse,
        UnlabeledShape::Uniform,
        UnlabeledShape::Arbitrary,
    ] {
        let spec = DatasetSpec::desk_scale(shape, 1);
        let splits = generate_splits(&spec)?;
        println!(
            "{:<10} labeled {:?}  unlabeled {:?}  test {}",
            shape.name(),
            histogram(splits.labeled.iter().map(|e| e.label), spec.num_classes),
            spec.unlabeled_counts()?,
            splits.test.len()
        );
    }

    let splits = generate_splits(&DatasetSpec::desk_scale(UnlabeledShape::Arbitrary, 1))?;
    let dir = std::env::temp_dir().join("cpg-generate-data-example");
    splits.save(&dir)?;
    let back = SplitBundle::load(&dir)?;
    assert_eq!(back, splits);
    println!("wrote and reloaded {}", dir.display());
    Ok(())
}
