//! Risk predictions and outlier / sticking statistics.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{draw_sample, mean, replicate, require_successes, write_records, Provenance};
use crate::error::{Error, Result};
use crate::estimation::{estimate_rank, FittedSample, SampleStieltjes};
use crate::harness::ExperimentConfig;
use crate::theory::{exact_risk_decomposition, loss_value, LossKind, OverlapSquares, SpikedTheory};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiskRecord {
    pub rep: usize,
    /// Loss of the estimated shrinkers.
    pub empirical: f64,
    /// Loss of the oracle shrinkers `u_i^T ell(Sigma) u_i`, from the matrices.
    pub oracle_direct: f64,
    /// The same oracle loss through the moment identity.
    pub oracle_identity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskExperiment {
    pub provenance: Provenance,
    pub loss: LossKind,
    /// Values below are multiplied by this (`p`).
    pub display_scale: f64,
    pub predicted: f64,
    /// The limiting risk needed a negative radicand set to zero.
    pub predicted_clamped: bool,
    pub mean_empirical: f64,
    pub mean_oracle: f64,
    /// `|mean_empirical - predicted| / |predicted|`.
    pub relative_gap: f64,
    /// Largest `|oracle_direct - oracle_identity|` (unscaled).
    pub max_identity_gap: f64,
    #[serde(skip)]
    pub records: Vec<RiskRecord>,
}

pub fn run_risk_experiment(cfg: &ExperimentConfig) -> Result<RiskExperiment> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let theory = SpikedTheory::new(&model)?;
    let loss = cfg.loss;
    let predicted = theory.asymptotic_risk(loss)?;
    let sigma = model.spiked_values();
    let (records, failures) = replicate(cfg.reps, |rep| {
        let sample = draw_sample(&model, cfg.seed, rep)?;
        let overlaps = OverlapSquares::new(model.basis(), sample.eigenvectors());
        let oracle = exact_risk_decomposition(loss, sigma, &overlaps, sample.rank_bound())?;
        let fitted = FittedSample::fit(sample, &cfg.fit, Some(model.base()))?;
        let phi = fitted.estimator()?.shrinkers(loss, cfg.route)?;
        let empirical = loss_value(loss, sigma, &phi, &overlaps)?;
        Ok(RiskRecord {
            rep,
            empirical,
            oracle_direct: oracle.direct,
            oracle_identity: oracle.identity,
        })
    });
    require_successes(&records, &failures)?;
    let scale = model.p() as f64;
    let mean_empirical = mean(records.iter().map(|r| r.empirical));
    let max_identity_gap = records
        .iter()
        .map(|r| (r.oracle_direct - r.oracle_identity).abs())
        .fold(0.0, f64::max);
    Ok(RiskExperiment {
        provenance: Provenance::new(cfg, started, failures),
        loss,
        display_scale: scale,
        predicted: predicted.value * scale,
        predicted_clamped: predicted.clamped,
        mean_empirical: mean_empirical * scale,
        mean_oracle: mean(records.iter().map(|r| r.oracle_direct)) * scale,
        relative_gap: (mean_empirical - predicted.value).abs() / predicted.value.abs(),
        max_identity_gap,
        records,
    })
}

impl RiskExperiment {
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        Ok(vec![write_records(&dir.join("records.csv"), self.records.iter())?])
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpikeRecord {
    pub rep: usize,
    pub top_eigenvalue: f64,
    /// `max_i |l_{i+r}(spiked) - l_i(non-spiked)|` on the same noise draw.
    pub sticking_gap: f64,
    pub rank_hat: usize,
    /// Plug-in estimate of the top spike, when at least one spike was found.
    pub spike_hat: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpikeExperiment {
    pub provenance: Provenance,
    pub spike: f64,
    pub outlier_location: f64,
    pub true_rank: usize,
    /// Fraction with `|l_1 - location| <= 5 n^{-1/2}`.
    pub outlier_hits: f64,
    /// Fraction with sticking gap `<= 20 / n`.
    pub sticking_hits: f64,
    pub rank_recovery: f64,
    /// Fraction with `|spike_hat - spike| <= 0.5`.
    pub spike_hits: f64,
    pub median_outlier_error: f64,
    pub median_sticking_gap: f64,
    #[serde(skip)]
    pub records: Vec<SpikeRecord>,
}

impl SpikeExperiment {
    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        Ok(vec![write_records(&dir.join("records.csv"), self.records.iter())?])
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

pub fn run_spike_experiment(cfg: &ExperimentConfig) -> Result<SpikeExperiment> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let base = cfg.build_base_model()?;
    let theory = SpikedTheory::new(&model)?;
    let top = *theory
        .outliers()
        .first()
        .ok_or_else(|| Error::Config("model has no supercritical spike".into()))?;
    let r = theory.outliers().len();
    let true_rank = model.rank();
    let k = model.p().min(model.n());
    let (records, failures) = replicate(cfg.reps, |rep| {
        let sample = draw_sample(&model, cfg.seed, rep)?;
        let paired = draw_sample(&base, cfg.seed, rep)?;
        let (ls, lb) = (sample.eigenvalues(), paired.eigenvalues());
        let sticking_gap = (0..k - r)
            .map(|i| (ls[i + r] - lb[i]).abs())
            .fold(0.0, f64::max);
        let rank_hat = cfg.fit.rank.unwrap_or_else(|| estimate_rank(&sample));
        let spike_hat = if rank_hat > 0 {
            let st = match cfg.fit.eta {
                Some(eta) => SampleStieltjes::with_eta(&sample, rank_hat, eta)?,
                None => SampleStieltjes::new(&sample, rank_hat)?,
            };
            Some(st.spikes()[0].spike)
        } else {
            None
        };
        Ok(SpikeRecord {
            rep,
            top_eigenvalue: ls[0],
            sticking_gap,
            rank_hat,
            spike_hat,
        })
    });
    require_successes(&records, &failures)?;
    let nf = model.n() as f64;
    let count = records.len() as f64;
    let frac = |pred: &dyn Fn(&SpikeRecord) -> bool| records.iter().filter(|r| pred(r)).count() as f64 / count;
    Ok(SpikeExperiment {
        provenance: Provenance::new(cfg, started, failures),
        spike: top.spike,
        outlier_location: top.location,
        true_rank,
        outlier_hits: frac(&|r| (r.top_eigenvalue - top.location).abs() <= 5.0 / nf.sqrt()),
        sticking_hits: frac(&|r| r.sticking_gap <= 20.0 / nf),
        rank_recovery: frac(&|r| r.rank_hat == true_rank),
        spike_hits: frac(&|r| r.spike_hat.is_some_and(|s| (s - top.spike).abs() <= 0.5)),
        median_outlier_error: median(
            records.iter().map(|r| (r.top_eigenvalue - top.location).abs()).collect(),
        ),
        median_sticking_gap: median(records.iter().map(|r| r.sticking_gap).collect()),
        records,
    })
}
