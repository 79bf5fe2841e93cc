//! Trains a target model from a labeled set plus two source models'
//! pseudo-labels, once per weighting, and compares test accuracy.
//!
//! Run with `cargo run --release --example weighted_distillation`.

use taskdistill::distill::{self, DistillConfig, TargetArch};
use taskdistill::model::TrainHyper;
use taskdistill::taskgen::{self, SourceTraining, SplitSizes, TaskSpec};
use taskdistill::weighting::{Scheme, SourceWeights};
use taskdistill::Result;

fn main() -> Result<()> {
    let universe = taskgen::build_universe(3, 8, 8, 0.5)?;
    let target = TaskSpec::new(vec![vec![0], vec![1], vec![2], vec![3]])?;
    // one source sees the target's clusters, the other does not
    let sources = vec![
        TaskSpec::new(vec![vec![0], vec![1], vec![2], vec![3]])?,
        TaskSpec::new(vec![vec![4], vec![5], vec![6], vec![7]])?,
    ];
    let (trained, _) = taskgen::train_source_models(&universe, &sources, &SourceTraining::default(), 1)?;
    let sizes = SplitSizes { n_total: 160, labeled_fraction: 0.1, probe_size: None, n_test: 1000 };
    let split = taskgen::sample_split(&universe, &target, &sizes, 2)?;

    for alphas in [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]] {
        let cfg = DistillConfig {
            lambda: 0.5,
            weights: SourceWeights::new(alphas.to_vec(), Scheme::Equal)?,
            hyper: TrainHyper { learning_rate: 0.05, batch_size: 16, epochs: 40, ..TrainHyper::default() },
            arch: TargetArch::default(),
            batch_ratio: (1, 1),
        };
        let (_, history) = distill::distill_from_sources(&split, &trained, &cfg)?;
        println!("alphas {alphas:?}: test accuracy {:.4}", history.final_test_acc().unwrap_or(0.0));
    }
    Ok(())
}
