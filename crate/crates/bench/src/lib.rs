//! Fixtures shared by the benchmarks.

use nlshrink::harness::draw_sample;
use nlshrink::model::{SampleSpectrum, Setting, SpikedModel};
use nlshrink::rng::basis_rng;

/// Spiked model of `setting` with its basis drawn from seed 0.
pub fn model(setting: Setting, p: usize, n: usize) -> SpikedModel {
    setting
        .build(p, n, &mut basis_rng(0))
        .expect("reference settings are valid")
}

/// First replication of `model`.
pub fn sample(model: &SpikedModel) -> SampleSpectrum {
    draw_sample(model, 0, 0).expect("eigendecomposition of a sample covariance")
}
