//! Shrinker curves, eigenvector variances and QUE deviations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use serde::Serialize;

use super::{draw_sample, mean, replicate, require_successes, write_records, Provenance};
use crate::error::{Error, Result};
use crate::estimation::{empirical_shrinker, CurveTarget, FittedSample, ShrinkerReport};
use crate::harness::ExperimentConfig;
use crate::model::{SampleSpectrum, SpikedModel};
use crate::theory::{Moments, SpikedTheory};

/// Threshold for the QUE exceedance frequency.
pub const QUE_EPS: f64 = 0.1;

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkerRecord {
    pub rep: usize,
    pub rank: usize,
    pub estimated: Vec<f64>,
    pub empirical: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CurvePoint {
    pub index: usize,
    pub empirical: f64,
    pub estimated: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkerExperiment {
    pub provenance: Provenance,
    pub target: CurveTarget,
    /// Replication-averaged curves.
    pub curve: Vec<CurvePoint>,
    /// Mean over indices of `|estimated - empirical|`.
    pub estimated_error: f64,
    /// Mean over indices of `|theoretical - empirical|`.
    pub theoretical_error: f64,
    #[serde(skip)]
    pub records: Vec<ShrinkerRecord>,
}

fn empirical_values(sample: &SampleSpectrum, model: &SpikedModel, target: CurveTarget) -> Result<Vec<f64>> {
    match target {
        CurveTarget::Ell(ell) => Ok(empirical_shrinker(sample, model, ell)),
        CurveTarget::Loss(loss) => {
            let moments: Moments = loss
                .ells()
                .iter()
                .map(|&e| (e, empirical_shrinker(sample, model, e)))
                .collect();
            loss.shrinkers(&moments)
        }
    }
}

fn theoretical_values(theory: &SpikedTheory, target: CurveTarget) -> Result<Vec<f64>> {
    match target {
        CurveTarget::Ell(ell) => theory.theta(ell),
        CurveTarget::Loss(loss) => loss.shrinkers(&theory.limiting_moments(loss)?),
    }
}

pub fn run_shrinker_experiment(cfg: &ExperimentConfig) -> Result<ShrinkerExperiment> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let theory = SpikedTheory::new(&model)?;
    let theoretical = theoretical_values(&theory, cfg.target)?;
    let (records, failures) = replicate(cfg.reps, |rep| {
        let sample = draw_sample(&model, cfg.seed, rep)?;
        let empirical = empirical_values(&sample, &model, cfg.target)?;
        let fitted = FittedSample::fit(sample, &cfg.fit, Some(model.base()))?;
        let est = fitted.estimator()?;
        let estimated = match cfg.target {
            CurveTarget::Ell(ell) => est.moment_vector(ell, cfg.route)?,
            CurveTarget::Loss(loss) => est.shrinkers(loss, cfg.route)?,
        };
        if let Some(i) = estimated.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("estimated shrinker {} is {}", i + 1, estimated[i])));
        }
        Ok(ShrinkerRecord {
            rep,
            rank: fitted.rank(),
            estimated,
            empirical,
        })
    });
    require_successes(&records, &failures)?;
    let p = model.p();
    let curve: Vec<CurvePoint> = (0..p)
        .map(|i| CurvePoint {
            index: i + 1,
            empirical: mean(records.iter().map(|r| r.empirical[i])),
            estimated: mean(records.iter().map(|r| r.estimated[i])),
            theoretical: theoretical[i],
        })
        .collect();
    let estimated_error = mean(curve.iter().map(|c| (c.estimated - c.empirical).abs()));
    let theoretical_error = mean(curve.iter().map(|c| (c.theoretical - c.empirical).abs()));
    Ok(ShrinkerExperiment {
        provenance: Provenance::new(cfg, started, failures),
        target: cfg.target,
        curve,
        estimated_error,
        theoretical_error,
        records,
    })
}

impl ShrinkerExperiment {
    pub fn report(&self) -> Result<ShrinkerReport> {
        let pick = |f: fn(&CurvePoint) -> f64| self.curve.iter().map(f).collect::<Vec<_>>();
        ShrinkerReport::new(
            self.target,
            &pick(|c| c.estimated),
            Some(&pick(|c| c.empirical)),
            Some(&pick(|c| c.theoretical)),
        )
    }

    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let curve = dir.join("shrinkers.csv");
        self.report()?.write_csv(std::fs::File::create(&curve)?)?;
        #[derive(Serialize)]
        struct Row {
            rep: usize,
            rank: usize,
            index: usize,
            empirical: f64,
            estimated: f64,
        }
        let rows = self.records.iter().flat_map(|r| {
            (0..r.estimated.len()).map(move |i| Row {
                rep: r.rep,
                rank: r.rank,
                index: i + 1,
                empirical: r.empirical[i],
                estimated: r.estimated[i],
            })
        });
        let records = write_records(&dir.join("records.csv"), rows)?;
        Ok(vec![curve, records])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigvecRecord {
    pub rep: usize,
    /// `sqrt(p) <v, u_i>` for `i = 1..=min(p, n)`.
    pub projections: Vec<f64>,
    /// Estimated `phi(v, v, l_i)` on the bulk, when the direction allows it.
    pub estimated: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VariancePoint {
    pub index: usize,
    /// Mean of `p <v, u_i>^2` over replications.
    pub empirical: f64,
    pub theoretical: f64,
    pub estimated: Option<f64>,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigvecExperiment {
    pub provenance: Provenance,
    /// Bulk indices only.
    pub curve: Vec<VariancePoint>,
    /// Mid-bulk index used for the kurtosis.
    pub kurtosis_index: usize,
    /// `E x^4 / (E x^2)^2` of `sqrt(p) <v, u_i>` at `kurtosis_index`.
    pub kurtosis: f64,
    pub within_10pct: f64,
    pub within_15pct: f64,
    #[serde(skip)]
    pub records: Vec<EigvecRecord>,
}

impl EigvecExperiment {
    /// Fraction of bulk indices whose relative error is at most `tol`.
    pub fn fraction_within(&self, tol: f64) -> f64 {
        let hits = self.curve.iter().filter(|c| c.relative_error <= tol).count();
        hits as f64 / self.curve.len() as f64
    }

    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let curve = write_records(&dir.join("variance.csv"), self.curve.iter())?;
        #[derive(Serialize)]
        struct Row {
            rep: usize,
            index: usize,
            projection: f64,
        }
        let rows = self.records.iter().flat_map(|r| {
            r.projections.iter().enumerate().map(move |(i, &v)| Row {
                rep: r.rep,
                index: i + 1,
                projection: v,
            })
        });
        let records = write_records(&dir.join("records.csv"), rows)?;
        Ok(vec![curve, records])
    }
}

pub fn run_eigvec_variance_experiment(cfg: &ExperimentConfig) -> Result<EigvecExperiment> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let theory = SpikedTheory::new(&model)?;
    let v = cfg.direction.vector(&model)?;
    let p = model.p();
    let k = p.min(model.n());
    let r = theory.outliers().len();
    if r >= k {
        return Err(Error::Config("no bulk eigenvectors".into()));
    }
    let theoretical = (r + 1..=k)
        .map(|i| theory.phi(&v, &v, theory.sample_location(i)))
        .collect::<Result<Vec<_>>>()?;
    // The plug-in curve needs v to be a non-spiked population eigenvector.
    let with_estimate = matches!(cfg.direction, super::Direction::Leading) && model.rank() == 0;
    let scale = (p as f64).sqrt();
    let (records, failures) = replicate(cfg.reps, |rep| {
        let sample = draw_sample(&model, cfg.seed, rep)?;
        let proj: DVector<f64> = sample.eigenvectors().tr_mul(&v);
        let projections: Vec<f64> = proj.iter().take(k).map(|x| x * scale).collect();
        let estimated = if with_estimate {
            let fitted = FittedSample::fit(sample, &cfg.fit, Some(model.base()))?;
            let est = fitted.estimator()?;
            let l = fitted.sample.eigenvalues();
            Some(
                (r..k)
                    .map(|i| est.phi_hat(0, l[i]))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(EigvecRecord {
            rep,
            projections,
            estimated,
        })
    });
    require_successes(&records, &failures)?;
    let curve: Vec<VariancePoint> = (r..k)
        .zip(&theoretical)
        .map(|(i, &th)| {
            let empirical = mean(records.iter().map(|rec| rec.projections[i].powi(2)));
            let estimated = with_estimate
                .then(|| mean(records.iter().filter_map(|rec| rec.estimated.as_ref().map(|e| e[i - r]))));
            VariancePoint {
                index: i + 1,
                empirical,
                theoretical: th,
                estimated,
                relative_error: (empirical - th).abs() / th.abs(),
            }
        })
        .collect();
    let mid = r + (k - r).div_ceil(2);
    let m2 = mean(records.iter().map(|rec| rec.projections[mid - 1].powi(2)));
    let m4 = mean(records.iter().map(|rec| rec.projections[mid - 1].powi(4)));
    let mut out = EigvecExperiment {
        provenance: Provenance::new(cfg, started, failures),
        curve,
        kurtosis_index: mid,
        kurtosis: m4 / (m2 * m2),
        within_10pct: 0.0,
        within_15pct: 0.0,
        records,
    };
    out.within_10pct = out.fraction_within(0.10);
    out.within_15pct = out.fraction_within(0.15);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct QueRecord {
    pub rep: usize,
    /// `sum_j w_j <u_i, v_j>^2 - profile_i` over the bulk indices.
    pub deviations: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueExperiment {
    pub provenance: Provenance,
    /// First bulk index (1-based); `deviations[0]` belongs to it.
    pub first_index: usize,
    /// `p^{-1} sum_j w_j phi(v_j, v_j, gamma_{i-r})` per bulk index.
    pub profile: Vec<f64>,
    /// Fraction of (replication, bulk index) pairs with `|deviation| > QUE_EPS`.
    pub exceedance: f64,
    /// Largest per-index exceedance frequency.
    pub max_index_exceedance: f64,
    /// Standard deviation of the deviations, pooled over indices.
    pub deviation_sd: f64,
    #[serde(skip)]
    pub records: Vec<QueRecord>,
}

impl QueExperiment {
    pub fn exceedance_at(&self, eps: f64) -> f64 {
        let total: usize = self.records.iter().map(|r| r.deviations.len()).sum();
        let hits = self
            .records
            .iter()
            .flat_map(|r| r.deviations.iter())
            .filter(|d| d.abs() > eps)
            .count();
        hits as f64 / total as f64
    }

    pub fn write_csv(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        #[derive(Serialize)]
        struct Row {
            rep: usize,
            index: usize,
            deviation: f64,
        }
        let first = self.first_index;
        let rows = self.records.iter().flat_map(|r| {
            r.deviations.iter().enumerate().map(move |(i, &d)| Row {
                rep: r.rep,
                index: first + i,
                deviation: d,
            })
        });
        Ok(vec![write_records(&dir.join("records.csv"), rows)?])
    }
}

pub fn run_que_experiment(cfg: &ExperimentConfig) -> Result<QueExperiment> {
    let started = Instant::now();
    let model = cfg.build_model()?;
    let theory = SpikedTheory::new(&model)?;
    let p = model.p();
    let k = p.min(model.n());
    let r = theory.outliers().len();
    let w = cfg.weights.values(p)?;
    let profile = (r + 1..=k)
        .map(|i| {
            let phi = theory.phi_profile(theory.sample_location(i))?;
            Ok(w.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>() / p as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    let basis = model.basis_or_identity();
    let (records, failures) = replicate(cfg.reps, |rep| {
        let sample = draw_sample(&model, cfg.seed, rep)?;
        // Column i holds <v_j, u_i> for all j.
        let overlaps = basis.tr_mul(sample.eigenvectors());
        let deviations = (r..k)
            .map(|i| {
                let col = overlaps.column(i);
                let s: f64 = w.iter().zip(col.iter()).map(|(wj, o)| wj * o * o).sum();
                s - profile[i - r]
            })
            .collect();
        Ok(QueRecord { rep, deviations })
    });
    require_successes(&records, &failures)?;
    let per_index = (0..k - r).map(|i| {
        let hits = records.iter().filter(|rec| rec.deviations[i].abs() > QUE_EPS).count();
        hits as f64 / records.len() as f64
    });
    let max_index_exceedance = per_index.fold(0.0, f64::max);
    let all = records.iter().flat_map(|rec| rec.deviations.iter().copied());
    let deviation_sd = mean(all.map(|d| d * d)).sqrt();
    let mut out = QueExperiment {
        provenance: Provenance::new(cfg, started, failures),
        first_index: r + 1,
        profile,
        exceedance: 0.0,
        max_index_exceedance,
        deviation_sd,
        records,
    };
    out.exceedance = out.exceedance_at(QUE_EPS);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentKind, ModelSpec, Weights};
    use crate::theory::Ell;
    use approx::assert_abs_diff_eq;

    fn small(kind: ExperimentKind, model: ModelSpec) -> ExperimentConfig {
        ExperimentConfig {
            p: 100,
            n: 200,
            reps: 4,
            seed: 11,
            ..ExperimentConfig::new(kind, model)
        }
    }

    #[test]
    fn identity_shrinker_curves_are_flat() {
        let cfg = small(ExperimentKind::Shrinkers, ModelSpec::Identity);
        let out = run_shrinker_experiment(&cfg).unwrap();
        for c in &out.curve {
            assert_abs_diff_eq!(c.empirical, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c.theoretical, 1.0, epsilon = 1e-9);
        }
        assert!(out.estimated_error < 0.1, "{}", out.estimated_error);
    }

    #[test]
    fn records_are_reproducible() {
        let mut cfg = small(ExperimentKind::Shrinkers, ModelSpec::Setting(crate::model::Setting::TwoLevel));
        cfg.target = CurveTarget::Ell(Ell::Inverse);
        let a = run_shrinker_experiment(&cfg).unwrap();
        let b = run_shrinker_experiment(&cfg).unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.estimated, y.estimated);
            assert_eq!(x.empirical, y.empirical);
        }
    }

    #[test]
    fn zero_weights_give_zero_deviation() {
        let mut cfg = small(ExperimentKind::Que, ModelSpec::Setting(crate::model::Setting::Uniform));
        cfg.weights = Weights::Zeros;
        let out = run_que_experiment(&cfg).unwrap();
        assert!(out.records.iter().flat_map(|r| &r.deviations).all(|d| *d == 0.0));
        assert_eq!(out.exceedance, 0.0);
    }

    #[test]
    fn identity_variances_near_one() {
        let mut cfg = small(ExperimentKind::EigvecVariance, ModelSpec::Identity);
        cfg.reps = 200;
        let out = run_eigvec_variance_experiment(&cfg).unwrap();
        for c in &out.curve {
            assert_abs_diff_eq!(c.theoretical, 1.0, epsilon = 1e-9);
        }
        let avg = mean(out.curve.iter().map(|c| c.empirical));
        assert_abs_diff_eq!(avg, 1.0, epsilon = 0.05);
    }
}
