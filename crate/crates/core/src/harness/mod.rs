//! Seeded Monte Carlo experiments and their CSV / JSON output.

mod config;
mod curves;
mod mp_dump;
mod risk;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

pub use config::{
    parse_spectrum_text, read_data_csv, read_spectrum_file, Direction, ExperimentConfig, ExperimentKind,
    ModelSpec, Weights,
};
pub use curves::{
    run_eigvec_variance_experiment, run_que_experiment, run_shrinker_experiment, CurvePoint,
    EigvecExperiment, EigvecRecord, QueExperiment, QueRecord, ShrinkerExperiment,
    ShrinkerRecord, VariancePoint, QUE_EPS,
};
pub use mp_dump::{run_mp_dump, write_mp_dump, MpDumpSummary};
pub use risk::{
    run_risk_experiment, run_spike_experiment, RiskExperiment, RiskRecord, SpikeExperiment,
    SpikeRecord,
};

use crate::error::{Error, Result};
use crate::model::{SampleSpectrum, SpikedModel};
use crate::rng::replication_rng;

/// A replication whose estimator failed; excluded from the aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub rep: usize,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config: ExperimentConfig,
    pub library_version: &'static str,
    pub wall_time_secs: f64,
    pub replications: usize,
    pub failures: Vec<Failure>,
}

impl Provenance {
    fn new(config: &ExperimentConfig, started: Instant, failures: Vec<Failure>) -> Self {
        if !failures.is_empty() {
            warn!(
                "{}: {} of {} replications failed",
                config.experiment,
                failures.len(),
                config.reps
            );
        }
        Self {
            config: config.clone(),
            library_version: env!("CARGO_PKG_VERSION"),
            wall_time_secs: started.elapsed().as_secs_f64(),
            replications: config.reps,
            failures,
        }
    }
}

/// Runs `body` for every replication index in parallel. Results come back in
/// index order, so they do not depend on scheduling.
fn replicate<T, F>(reps: usize, body: F) -> (Vec<T>, Vec<Failure>)
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..reps).into_par_iter().map(&body).collect();
    let mut ok = Vec::with_capacity(reps);
    let mut failures = Vec::new();
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(Failure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    (ok, failures)
}

fn require_successes<T>(records: &[T], failures: &[Failure]) -> Result<()> {
    match failures.first() {
        Some(first) if records.is_empty() => Err(Error::Numerical(format!(
            "all {} replications failed; first error (rep {}): {}",
            failures.len(),
            first.rep,
            first.error
        ))),
        _ => Ok(()),
    }
}

/// Sample of replication `rep`.
pub fn draw_sample(model: &SpikedModel, seed: u64, rep: usize) -> Result<SampleSpectrum> {
    let y = model.sample_data(&mut replication_rng(seed, rep as u64));
    SampleSpectrum::from_data(&y)
}

/// Result of any experiment, for the CLI.
#[derive(Debug, Clone)]
pub enum ExperimentOutcome {
    Shrinkers(ShrinkerExperiment),
    EigvecVariance(EigvecExperiment),
    Que(QueExperiment),
    Risk(RiskExperiment),
    Spikes(SpikeExperiment),
    MpDump(MpDumpSummary),
}

impl ExperimentOutcome {
    pub fn failures(&self) -> usize {
        match self {
            ExperimentOutcome::Shrinkers(e) => e.provenance.failures.len(),
            ExperimentOutcome::EigvecVariance(e) => e.provenance.failures.len(),
            ExperimentOutcome::Que(e) => e.provenance.failures.len(),
            ExperimentOutcome::Risk(e) => e.provenance.failures.len(),
            ExperimentOutcome::Spikes(e) => e.provenance.failures.len(),
            ExperimentOutcome::MpDump(_) => 0,
        }
    }

    /// JSON summary without the per-replication records.
    pub fn summary_json(&self) -> Result<String> {
        let s = match self {
            ExperimentOutcome::Shrinkers(e) => serde_json::to_string_pretty(e),
            ExperimentOutcome::EigvecVariance(e) => serde_json::to_string_pretty(e),
            ExperimentOutcome::Que(e) => serde_json::to_string_pretty(e),
            ExperimentOutcome::Risk(e) => serde_json::to_string_pretty(e),
            ExperimentOutcome::Spikes(e) => serde_json::to_string_pretty(e),
            ExperimentOutcome::MpDump(e) => serde_json::to_string_pretty(e),
        };
        Ok(s?)
    }

    /// Writes `summary.json` plus the curve and record CSVs into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        if let ExperimentOutcome::MpDump(d) = self {
            files.extend(d.files.iter().map(PathBuf::from));
        }
        let summary = dir.join("summary.json");
        fs::write(&summary, self.summary_json()? + "\n")?;
        files.push(summary);
        match self {
            ExperimentOutcome::Shrinkers(e) => files.extend(e.write_csv(dir)?),
            ExperimentOutcome::EigvecVariance(e) => files.extend(e.write_csv(dir)?),
            ExperimentOutcome::Que(e) => files.extend(e.write_csv(dir)?),
            ExperimentOutcome::Risk(e) => files.extend(e.write_csv(dir)?),
            ExperimentOutcome::Spikes(e) => files.extend(e.write_csv(dir)?),
            ExperimentOutcome::MpDump(_) => {}
        }
        Ok(files)
    }
}

/// Validates `cfg` and runs the experiment it names. `mp-dump` needs `out`.
pub fn run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    info!(
        "running {} on {} (p = {}, n = {}, reps = {}, seed = {})",
        cfg.experiment,
        cfg.model.label(),
        cfg.p,
        cfg.n,
        cfg.reps,
        cfg.seed
    );
    Ok(match cfg.experiment {
        ExperimentKind::Shrinkers => ExperimentOutcome::Shrinkers(run_shrinker_experiment(cfg)?),
        ExperimentKind::EigvecVariance => {
            ExperimentOutcome::EigvecVariance(run_eigvec_variance_experiment(cfg)?)
        }
        ExperimentKind::Que => ExperimentOutcome::Que(run_que_experiment(cfg)?),
        ExperimentKind::Risk => ExperimentOutcome::Risk(run_risk_experiment(cfg)?),
        ExperimentKind::Spikes => ExperimentOutcome::Spikes(run_spike_experiment(cfg)?),
        ExperimentKind::MpDump => {
            let dir = out.ok_or_else(|| Error::Config("mp-dump needs an output directory".into()))?;
            ExperimentOutcome::MpDump(run_mp_dump(cfg, dir)?)
        }
    })
}

fn write_records<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, count) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}
