//! Runs one target task of the synthetic benchmark: trains the sources,
//! scores them, distills from each one alone and from a few weighted mixes.
//!
//! Run with `cargo run --release --example synthetic_benchmark [seed]`.
//! Takes about fifteen seconds.

use taskdistill::eval;
use taskdistill::experiment::{self, ExperimentConfig};
use taskdistill::similarity::{Metric, RepresentationKind};
use taskdistill::weighting::WeightingSpec;
use taskdistill::Result;

fn main() -> Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = ExperimentConfig::benchmark();
    let schemes = ["weighted:p=12", "equal", "nearest", "inverse"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<Vec<WeightingSpec>>>()?;
    let universe = experiment::make_universe(&cfg.universe, seed)?;
    let outcome = experiment::run_task(&universe, &cfg, &schemes, experiment::task_seed(seed, 0))?;

    let parc = outcome.scores_for(Metric::Parc, RepresentationKind::Feature).expect("scored");
    println!("{:>6} {:>8} {:>8} {:>9}", "source", "overlap", "parc", "accuracy");
    for (i, id) in outcome.source_ids.iter().enumerate() {
        println!("{id:>6} {:>8.3} {:>8.3} {:>9.4}", outcome.overlaps[i], parc[i], outcome.single_source[i]);
    }
    let corr = eval::correlate(parc, &outcome.single_source)?;
    println!("spearman(parc, accuracy) = {:.3}", corr.spearman.value);
    for (label, acc) in &outcome.schemes {
        println!("{label:>26}: {acc:.4}");
    }
    Ok(())
}
