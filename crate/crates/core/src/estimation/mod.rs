//! Estimators computed from one sample covariance matrix.

mod pipeline;
mod report;
mod shrinker;
mod spectrum;

pub use pipeline::{FitOptions, FittedSample};
pub use report::{CurveTarget, ReportRow, ShrinkerReport};
pub use shrinker::{
    assemble_shrunken, empirical_shrinker, Route, ShrinkerEstimator, ShrunkenMatrix, Target,
    DEFAULT_EPS,
};
pub use spectrum::{
    estimate_population_spectrum, estimate_rank, estimate_rank_with, forward_moment_map,
    invert_moment_map, nnls, truncation_indices, EstimatedSpectrum, MomentDiagnostics,
    SampleStieltjes, SpectrumMethod, SpikeEstimate, DEFAULT_MAX_RANK, GRID_ATOMS, MOMENT_COUNT,
};
