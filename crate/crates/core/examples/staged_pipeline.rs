//! Runs the staged pipeline one stage at a time into a directory, the same
//! way the command-line tool does.
//!
//! Run with `cargo run --release --example staged_pipeline [out-dir]`.

use std::path::PathBuf;

use taskdistill::config::PipelineConfig;
use taskdistill::pipeline;
use taskdistill::weighting::WeightingSpec;
use taskdistill::Result;

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("staged-run"));
    let cfg = PipelineConfig { seed: 11, output_dir: out.clone(), ..PipelineConfig::default() };
    pipeline::cmd_gen(&cfg)?;
    pipeline::cmd_train_sources(&cfg)?;
    pipeline::cmd_score(&cfg)?;
    for scheme in ["weighted:p=12", "equal", "nearest"] {
        let spec: WeightingSpec = scheme.parse()?;
        pipeline::cmd_weigh(&cfg, &spec)?;
        for result in pipeline::cmd_distill(&cfg, &spec)? {
            println!("{scheme:>14}: alphas {:.3?}, test accuracy {:.4}", result.alphas, result.test_accuracy);
        }
    }
    pipeline::cmd_distill_single(&cfg)?;
    pipeline::cmd_eval(&cfg)?;
    println!("outputs written under {}", out.display());
    Ok(())
}
