//! Shared fixtures for the kernel benchmarks.

use specboot::sampling::sample_dataset;
use specboot::spectra::{make_covariance_setting, Setting};
use specboot::{Dataset, EllipticalLaw};

/// Diagonal S1 sample with chi-squared radii.
pub fn s1_sample(n: usize, p: usize, seed: u64) -> Dataset {
    let spec = make_covariance_setting(Setting::S1, p, None).expect("S1 setting");
    sample_dataset(&spec, &EllipticalLaw::ChiSquared, n, seed).expect("sample")
}
