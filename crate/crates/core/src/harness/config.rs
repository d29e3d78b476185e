use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimation::{CurveTarget, FitOptions, Route, SpectrumMethod, DEFAULT_EPS};
use crate::model::{PopulationSpectrum, Setting, SpikedModel};
use crate::rng::basis_rng;
use crate::theory::{Ell, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Shrinkers,
    EigvecVariance,
    Que,
    Risk,
    Spikes,
    MpDump,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Shrinkers,
        ExperimentKind::EigvecVariance,
        ExperimentKind::Que,
        ExperimentKind::Risk,
        ExperimentKind::Spikes,
        ExperimentKind::MpDump,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::Shrinkers => "shrinkers",
            ExperimentKind::EigvecVariance => "eigvec-variance",
            ExperimentKind::Que => "que",
            ExperimentKind::Risk => "risk",
            ExperimentKind::Spikes => "spikes",
            ExperimentKind::MpDump => "mp-dump",
        }
    }

    pub fn default_reps(self) -> usize {
        match self {
            ExperimentKind::EigvecVariance => 1000,
            ExperimentKind::Que => 500,
            ExperimentKind::Spikes => 200,
            ExperimentKind::MpDump => 1,
            ExperimentKind::Shrinkers | ExperimentKind::Risk => 50,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

/// Population model of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSpec {
    Setting(Setting),
    Identity,
    /// Half the eigenvalues at 3, half at 1, no spike.
    TwoAtom,
    /// Eigenvalues `1 + k/p`, no spike.
    Linear,
    /// Spectrum file: one positive value per line, `spike VALUE` for spikes,
    /// `#` comments. The dimension is the number of non-spike lines.
    Custom(PathBuf),
}

impl ModelSpec {
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Setting(s) => s.label().to_string(),
            ModelSpec::Identity => "identity".into(),
            ModelSpec::TwoAtom => "two-atom".into(),
            ModelSpec::Linear => "linear".into(),
            ModelSpec::Custom(path) => format!("custom:{}", path.display()),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" => Ok(ModelSpec::Identity),
            "two-atom" => Ok(ModelSpec::TwoAtom),
            "linear" => Ok(ModelSpec::Linear),
            other => other.parse().map(ModelSpec::Setting).map_err(|_| {
                Error::Config(format!(
                    "unknown setting '{s}' (i|ii|iii|iv|identity|two-atom|linear)"
                ))
            }),
        }
    }
}

/// Base spectrum and spikes from the text of a spectrum file.
pub fn parse_spectrum_text(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut base = Vec::new();
    let mut spikes = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (dest, value) = match line.strip_prefix("spike") {
            Some(rest) => (&mut spikes, rest.trim()),
            None => (&mut base, line),
        };
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("line {}: cannot parse '{raw}'", no + 1)))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Config(format!("line {}: value must be positive", no + 1)));
        }
        dest.push(v);
    }
    if base.is_empty() {
        return Err(Error::Config("spectrum file lists no eigenvalues".into()));
    }
    Ok((base, spikes))
}

pub fn read_spectrum_file(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    parse_spectrum_text(&std::fs::read_to_string(path)?)
}

/// Observations as columns of a headerless CSV (`p` rows, `n` columns),
/// scaled by `n^{-1/2}` so that `Y Y^T` is the sample covariance.
pub fn read_data_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (no, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Config(format!("{}: row {}: cannot parse '{f}'", path.display(), no + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r| r.len() != row.len()) {
            return Err(Error::Config(format!("{}: ragged row {}", path.display(), no + 1)));
        }
        rows.push(row);
    }
    let (p, n) = (rows.len(), rows.first().map_or(0, Vec::len));
    if p < 2 || n < 2 {
        return Err(Error::Config(format!("{}: need at least 2 x 2 data", path.display())));
    }
    if let Some(v) = rows.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{}: non-finite entry {v}", path.display())));
    }
    let scale = 1.0 / (n as f64).sqrt();
    Ok(DMatrix::from_fn(p, n, |i, j| rows[i][j] * scale))
}

/// Direction `v` for the eigenvector-variance experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// The population eigenvector of the largest eigenvalue.
    Leading,
    /// A unit vector in the standard basis.
    Custom(Vec<f64>),
}

impl Direction {
    pub fn vector(&self, model: &SpikedModel) -> Result<DVector<f64>> {
        match self {
            Direction::Leading => Ok(model.eigenvector(0)),
            Direction::Custom(v) => {
                if v.len() != model.p() {
                    return Err(Error::Config(format!(
                        "direction has length {}, expected {}",
                        v.len(),
                        model.p()
                    )));
                }
                let v = DVector::from_column_slice(v);
                let norm = v.norm();
                if !(norm > 0.0) {
                    return Err(Error::Config("direction must be nonzero".into()));
                }
                Ok(v / norm)
            }
        }
    }
}

/// Weights `w_j` on the population eigenvectors for the QUE experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weights {
    Ones,
    Zeros,
    /// `(-1)^j` for 1-based `j`.
    Alternating,
    Custom(Vec<f64>),
}

impl Weights {
    pub fn values(&self, p: usize) -> Result<Vec<f64>> {
        let w = match self {
            Weights::Ones => vec![1.0; p],
            Weights::Zeros => vec![0.0; p],
            Weights::Alternating => (1..=p)
                .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
                .collect(),
            Weights::Custom(w) => w.clone(),
        };
        if w.len() != p {
            return Err(Error::Config(format!("{} weights for dimension {p}", w.len())));
        }
        if w.iter().any(|x| !(x.abs() <= 1.0)) {
            return Err(Error::Config("weights must satisfy |w_j| <= 1".into()));
        }
        Ok(w)
    }
}

impl FromStr for Weights {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ones" => Ok(Weights::Ones),
            "zeros" => Ok(Weights::Zeros),
            "alternating" => Ok(Weights::Alternating),
            _ => Err(Error::Config(format!("unknown weights '{s}' (ones|zeros|alternating)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelSpec,
    pub p: usize,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub target: CurveTarget,
    pub loss: LossKind,
    pub fit: FitOptions,
    pub route: Route,
    pub direction: Direction,
    pub weights: Weights,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind, model: ModelSpec) -> Self {
        Self {
            experiment,
            model,
            p: 300,
            n: 600,
            reps: experiment.default_reps(),
            seed: 0,
            target: CurveTarget::Ell(Ell::Identity),
            loss: LossKind::Frobenius,
            fit: FitOptions {
                eps: DEFAULT_EPS,
                method: SpectrumMethod::Moment,
                ..FitOptions::default()
            },
            route: Route::default(),
            direction: Direction::Leading,
            weights: Weights::Alternating,
        }
    }

    /// Hard errors for unusable values; warnings for the `|p/n - 1| >= 0.05`
    /// guard.
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.p < 2 || self.n < 2 {
            return Err(Error::Config(format!("need p, n >= 2 (p = {}, n = {})", self.p, self.n)));
        }
        if !(self.fit.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.fit.eta.is_some_and(|e| !(e > 0.0)) {
            return Err(Error::Config("eta must be positive".into()));
        }
        let ratio = self.p as f64 / self.n as f64;
        if (ratio - 1.0).abs() < 0.05 {
            warn!("p/n = {ratio:.3} is within 0.05 of 1; limits near the hard edge are unreliable");
        }
        Ok(())
    }

    /// The spiked model; settings draw their random eigenbasis from the seed.
    pub fn build_model(&self) -> Result<SpikedModel> {
        self.model_with(true)
    }

    /// The same model with the spikes removed, in the same eigenbasis.
    pub fn build_base_model(&self) -> Result<SpikedModel> {
        self.model_with(false)
    }

    fn model_with(&self, spiked: bool) -> Result<SpikedModel> {
        let (p, n) = (self.p, self.n);
        match &self.model {
            ModelSpec::Setting(s) => {
                let mut rng = basis_rng(self.seed);
                if spiked {
                    s.build(p, n, &mut rng)
                } else {
                    s.base_model(p, n, &mut rng)
                }
            }
            ModelSpec::Identity => Ok(SpikedModel::unspiked(PopulationSpectrum::identity(p, n)?)),
            ModelSpec::TwoAtom => Ok(SpikedModel::unspiked(PopulationSpectrum::two_atom(
                p, n, 3.0, 1.0,
            )?)),
            ModelSpec::Linear => Ok(SpikedModel::unspiked(PopulationSpectrum::linear(p, n)?)),
            ModelSpec::Custom(path) => {
                let (base, spikes) = read_spectrum_file(path)?;
                let base = PopulationSpectrum::new(base, n)?;
                let spikes = if spiked { spikes } else { Vec::new() };
                SpikedModel::new(base, &spikes, None)
            }
        }
    }

    /// Dimension after resolving custom spectrum files.
    pub fn resolved_p(&self) -> Result<usize> {
        match &self.model {
            ModelSpec::Custom(path) => Ok(read_spectrum_file(path)?.0.len()),
            _ => Ok(self.p),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectrum_file_parsing() {
        let (base, spikes) =
            parse_spectrum_text("# comment\n2.0\n1.5 # trailing\n\nspike 7\n1\n").unwrap();
        assert_eq!(base, vec![2.0, 1.5, 1.0]);
        assert_eq!(spikes, vec![7.0]);
        assert!(parse_spectrum_text("1\n-2\n").is_err());
        assert!(parse_spectrum_text("abc\n").is_err());
        assert!(parse_spectrum_text("spike 3\n").is_err());
    }

    #[test]
    fn data_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        std::fs::write(&path, "1, 2, 3, 4\n0,0,0,8\n").unwrap();
        let y = read_data_csv(&path).unwrap();
        assert_eq!(y.shape(), (2, 4));
        assert_eq!(y[(1, 3)], 4.0);
        std::fs::write(&path, "1,2\n3\n").unwrap();
        assert!(read_data_csv(&path).unwrap_err().is_config());
    }

    #[test]
    fn model_names() {
        assert_eq!("iv".parse::<ModelSpec>().unwrap(), ModelSpec::Setting(Setting::WideGap));
        assert_eq!("identity".parse::<ModelSpec>().unwrap(), ModelSpec::Identity);
        assert!("v".parse::<ModelSpec>().unwrap_err().is_config());
    }

    #[test]
    fn weights() {
        assert_eq!(Weights::Alternating.values(4).unwrap(), vec![-1.0, 1.0, -1.0, 1.0]);
        assert!(Weights::Custom(vec![2.0]).values(1).is_err());
    }

    #[test]
    fn validation() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Shrinkers, ModelSpec::Identity);
        assert!(cfg.validate().is_ok());
        cfg.reps = 0;
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn base_model_shares_basis() {
        let cfg = ExperimentConfig {
            p: 20,
            n: 40,
            ..ExperimentConfig::new(ExperimentKind::Spikes, ModelSpec::Setting(Setting::TwoLevel))
        };
        let spiked = cfg.build_model().unwrap();
        let base = cfg.build_base_model().unwrap();
        assert_eq!(spiked.basis(), base.basis());
        assert_eq!(spiked.rank(), 1);
        assert_eq!(base.rank(), 0);
    }
}
