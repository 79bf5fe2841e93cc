//! Scores a few synthetic source representations against probe labels with
//! every metric.
//!
//! Run with `cargo run --example similarity_scoring`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskdistill::similarity::{self, Metric, ProbeSet, SourceRepresentation};
use taskdistill::{Matrix, Result};

fn main() -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
    let probe = ProbeSet::new(Matrix::zeros(labels.len(), 1), labels.clone(), 3)?;

    // features that encode the label with growing amounts of noise
    for noise in [0.1, 1.0, 10.0] {
        let mut values = Vec::new();
        for &y in &labels {
            for c in 0..4 {
                let signal = if c == y { 1.0 } else { 0.0 };
                values.push(signal + noise * rng.random_range(-1.0..1.0));
            }
        }
        let rep = SourceRepresentation::features(Matrix::new(labels.len(), 4, values)?);
        let id = format!("noise={noise}");
        let line: Vec<String> = Metric::ALL
            .iter()
            .map(|&m| similarity::score(&id, m, &rep, &probe).map(|s| format!("{m}={:.3}", s.value)))
            .collect::<Result<_>>()?;
        println!("{id:>10}: {}", line.join("  "));
    }
    Ok(())
}
