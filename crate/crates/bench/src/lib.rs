//! Shared fixtures for the benches.

use ids_core::synth::{gaussian_classes, ics_command_injection, GaussianSpec};
use ids_core::Dataset;

/// Four Gaussian classes in 38 dimensions, `n` records in the sampled-KDD proportions.
pub fn kdd_like(n: usize, seed: u64) -> Dataset {
    let weights = [0.2, 0.58, 0.2, 0.02];
    let mut counts: Vec<usize> = weights.iter().map(|w| (w * n as f64).round() as usize).collect();
    counts[3] = counts[3].max(1);
    gaussian_classes(&GaussianSpec::kdd_like(), &counts, seed).expect("valid spec")
}

/// Command-injection surrogate scaled down to roughly `n` records.
pub fn ics_like(n: usize, seed: u64) -> Dataset {
    let scale = n as f64 / 28_344.0;
    let counts = [28_086, 2, 9, 198, 49].map(|c: usize| ((c as f64 * scale).round() as usize).max(1));
    ics_command_injection(&counts, seed).expect("valid counts")
}
