//! How the class prior shifts the loss: the logit-adjusted loss equals
//! cross-entropy on `logits + ln(pi)`, so head classes must win by a larger
//! margin before the loss goes down.

use cpg::loss::{cross_entropy, la_loss, softmax, ClassPrior};

fn main() -> cpg::Result<()> {
    let counts = [100, 56, 31, 17, 10];
    let prior = ClassPrior::from_counts(&counts)?;
    println!("prior from counts {counts:?}: {:.3?}", prior.probs());

    let logits = [1.0, 0.8, 0.6, 0.4, 0.2];
    println!("softmax of logits        {:.3?}", softmax(&logits));
    for y in 0..counts.len() {
        println!(
            "label {y}: CE {:.4}  LA {:.4}",
            cross_entropy(&logits, y),
            la_loss(&logits, y, &prior)
        );
    }

    let uniform = ClassPrior::uniform(counts.len());
    let gap = (la_loss(&logits, 3, &uniform) - cross_entropy(&logits, 3)).abs();
    println!("uniform prior: |LA - CE| = {gap:.1e}");
    Ok(())
}
