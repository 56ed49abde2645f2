//! Compactness, radius and synthesis for minority classes.

use cpg::caa::{minority_classes, synthesize, update_class_stats, ClassStats};
use cpg::rng::{self, streams};

fn main() -> cpg::Result<()> {
    let mut stats = ClassStats::new(3);
    let batch: Vec<(Vec<f64>, usize)> = vec![
        (vec![1.0, 0.1], 0),
        (vec![0.9, -0.1], 0),
        (vec![1.0, 0.0], 1),
        (vec![0.0, 1.0], 1),
        (vec![-1.0, 0.2], 2),
        (vec![0.3, -1.0], 2),
    ];
    let refs: Vec<(&[f64], usize)> = batch.iter().map(|(h, l)| (h.as_slice(), *l)).collect();
    update_class_stats(&mut stats, &refs, 0.9);
    for c in 0..3 {
        println!("class {c}: alpha {:.4}  radius {:.4}", stats.alpha[c], stats.radius[c]);
    }

    let phi = [120, 40, 9];
    let minority = minority_classes(&phi);
    println!("phi {phi:?} -> minority classes {minority:?}");

    let mut rng = rng::stream(0, streams::SYNTH);
    for &c in &minority {
        let (h, _) = batch.iter().find(|(_, l)| *l == c).unwrap();
        for s in synthesize(h, stats.radius[c], c, 0, &mut rng, 3)? {
            println!("  {h:?} -> {:.3?}", s.rep);
        }
    }
    Ok(())
}
