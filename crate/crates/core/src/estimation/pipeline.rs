use serde::Serialize;

use super::shrinker::{ShrinkerEstimator, DEFAULT_EPS};
use super::spectrum::{
    estimate_population_spectrum, estimate_rank, EstimatedSpectrum, SampleStieltjes,
    SpectrumMethod,
};
use crate::error::Result;
use crate::model::{PopulationSpectrum, SampleSpectrum};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitOptions {
    /// Number of spikes; estimated when `None`.
    pub rank: Option<usize>,
    pub method: SpectrumMethod,
    /// Imaginary offset for the sample Stieltjes transform; `n^{-1/2}` when `None`.
    pub eta: Option<f64>,
    pub eps: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rank: None,
            method: SpectrumMethod::Moment,
            eta: None,
            eps: DEFAULT_EPS,
        }
    }
}

/// A sample together with everything the shrinker estimators need from it.
#[derive(Debug, Clone)]
pub struct FittedSample {
    pub sample: SampleSpectrum,
    pub spectrum: EstimatedSpectrum,
    pub stieltjes: SampleStieltjes,
    eps: f64,
}

impl FittedSample {
    /// `truth` is the non-spiked population spectrum, used only by the oracle method.
    pub fn fit(
        sample: SampleSpectrum,
        options: &FitOptions,
        truth: Option<&PopulationSpectrum>,
    ) -> Result<Self> {
        let rank = options.rank.unwrap_or_else(|| estimate_rank(&sample));
        let stieltjes = match options.eta {
            Some(eta) => SampleStieltjes::with_eta(&sample, rank, eta)?,
            None => SampleStieltjes::new(&sample, rank)?,
        };
        let spectrum = estimate_population_spectrum(&sample, rank, options.method, truth)?;
        Ok(Self {
            sample,
            spectrum,
            stieltjes,
            eps: options.eps,
        })
    }

    pub fn rank(&self) -> usize {
        self.stieltjes.rank()
    }

    pub fn estimator(&self) -> Result<ShrinkerEstimator<'_>> {
        ShrinkerEstimator::new(&self.sample, &self.spectrum, &self.stieltjes, self.eps)
    }
}
