//! Turns one vector of similarity scores into source weights under each
//! weighting scheme.
//!
//! Run with `cargo run --example weighting_schemes`.

use taskdistill::weighting::WeightingSpec;
use taskdistill::Result;

fn main() -> Result<()> {
    let scores = [0.62, 0.55, 0.31, 0.12, 0.58];
    println!("scores: {scores:?}");
    for name in ["weighted:p=1", "weighted:p=12", "softmax:T=0.05", "nearest", "equal", "inverse", "random-weights:seed=3"] {
        let spec: WeightingSpec = name.parse()?;
        let w = spec.weights(&scores, None, 0)?;
        let shown: Vec<String> = w.alphas().iter().map(|a| format!("{a:.3}")).collect();
        println!("{:>22}: [{}]", spec.label(), shown.join(", "));
    }
    // the top two sources only; min-max scaling over those two leaves the
    // runner-up at zero
    let w = "weighted:p=12".parse::<WeightingSpec>()?.weights(&scores, Some(2), 0)?;
    println!("{:>22}: {:.3?}", "weighted:p=12, top 2", w.alphas());
    Ok(())
}
