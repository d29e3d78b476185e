//! Population spectra, spiked covariance models and sample spectra.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, sym_eigen};

/// Non-spiked population eigenvalues in descending order, with the sample size
/// that fixes the dimension ratio `p / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpectrum {
    values: Vec<f64>,
    n: usize,
}

impl PopulationSpectrum {
    pub fn new(mut values: Vec<f64>, n: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("empty population spectrum".into()));
        }
        if n == 0 {
            return Err(Error::InvalidModel("sample size must be positive".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v <= 0.0) {
            return Err(Error::InvalidModel(format!(
                "population eigenvalues must be positive and finite, got {bad}"
            )));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { values, n })
    }

    pub fn identity(p: usize, n: usize) -> Result<Self> {
        Self::new(vec![1.0; p], n)
    }

    /// First `p / 2` eigenvalues equal `high`, the rest `low`.
    pub fn two_atom(p: usize, n: usize, high: f64, low: f64) -> Result<Self> {
        let half = p / 2;
        Self::new(
            (0..p).map(|i| if i < half { high } else { low }).collect(),
            n,
        )
    }

    /// `1 + i / p` for `i = 1..=p`.
    pub fn linear(p: usize, n: usize) -> Result<Self> {
        Self::new((1..=p).map(|i| 1.0 + i as f64 / p as f64).collect(), n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ratio(&self) -> f64 {
        self.p() as f64 / self.n as f64
    }

    /// Number of non-trivial sample eigenvalues, `min(p, n)`.
    pub fn rank_bound(&self) -> usize {
        self.p().min(self.n)
    }

    /// Human-readable violations of the regularity conditions the asymptotics rely
    /// on: bounded spectrum and a dimension ratio away from the hard edge.
    pub fn assumption_warnings(&self, tau: f64) -> Vec<String> {
        let mut out = Vec::new();
        let c = self.ratio();
        if (c - 1.0).abs() < tau {
            out.push(format!("|p/n - 1| = {:.4} is below {tau}", (c - 1.0).abs()));
        }
        let lo = *self.values.last().unwrap();
        let hi = self.values[0];
        if lo < tau || hi > 1.0 / tau {
            out.push(format!("spectrum [{lo}, {hi}] leaves [{tau}, {}]", 1.0 / tau));
        }
        out
    }
}

/// Population covariance `V diag(spiked) V^T` where the top `rank` entries of the
/// base spectrum are replaced by spike values.
#[derive(Debug, Clone)]
pub struct SpikedModel {
    base: PopulationSpectrum,
    spiked: Vec<f64>,
    rank: usize,
    basis: Option<DMatrix<f64>>,
}

impl SpikedModel {
    /// `spikes` must be strictly decreasing, and each spike must dominate the base
    /// eigenvalue it replaces. `basis = None` means the canonical basis.
    pub fn new(
        base: PopulationSpectrum,
        spikes: &[f64],
        basis: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let p = base.p();
        if spikes.len() > p {
            return Err(Error::InvalidModel(format!(
                "{} spikes for dimension {p}",
                spikes.len()
            )));
        }
        for (i, &s) in spikes.iter().enumerate() {
            if !s.is_finite() || s < base.values()[i] {
                return Err(Error::InvalidModel(format!(
                    "spike {s} at position {} is below the base eigenvalue {}",
                    i + 1,
                    base.values()[i]
                )));
            }
            if i > 0 && s >= spikes[i - 1] {
                return Err(Error::InvalidModel(
                    "spike values must be strictly decreasing".into(),
                ));
            }
        }
        if let Some(v) = &basis {
            if v.nrows() != p || v.ncols() != p {
                return Err(Error::InvalidModel(format!(
                    "basis is {}x{}, expected {p}x{p}",
                    v.nrows(),
                    v.ncols()
                )));
            }
            let defect = (v.transpose() * v - DMatrix::<f64>::identity(p, p)).norm();
            if defect > 1e-8 * p as f64 {
                return Err(Error::InvalidModel(format!(
                    "basis is not orthogonal (defect {defect:.2e})"
                )));
            }
        }
        let mut spiked = base.values().to_vec();
        spiked[..spikes.len()].copy_from_slice(spikes);
        Ok(Self {
            base,
            spiked,
            rank: spikes.len(),
            basis,
        })
    }

    pub fn unspiked(base: PopulationSpectrum) -> Self {
        let spiked = base.values().to_vec();
        Self {
            base,
            spiked,
            rank: 0,
            basis: None,
        }
    }

    pub fn base(&self) -> &PopulationSpectrum {
        &self.base
    }

    /// Eigenvalues of the full covariance, spikes first.
    pub fn spiked_values(&self) -> &[f64] {
        &self.spiked
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn p(&self) -> usize {
        self.base.p()
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    pub fn ratio(&self) -> f64 {
        self.base.ratio()
    }

    /// Relative spike strengths `spike / base - 1`.
    pub fn strengths(&self) -> Vec<f64> {
        (0..self.rank)
            .map(|i| self.spiked[i] / self.base.values()[i] - 1.0)
            .collect()
    }

    pub fn basis(&self) -> Option<&DMatrix<f64>> {
        self.basis.as_ref()
    }

    pub fn basis_or_identity(&self) -> DMatrix<f64> {
        self.basis
            .clone()
            .unwrap_or_else(|| DMatrix::identity(self.p(), self.p()))
    }

    /// Column `j` of the eigenbasis.
    pub fn eigenvector(&self, j: usize) -> DVector<f64> {
        match &self.basis {
            Some(v) => v.column(j).into_owned(),
            None => {
                let mut e = DVector::zeros(self.p());
                e[j] = 1.0;
                e
            }
        }
    }

    pub fn with_basis(mut self, basis: DMatrix<f64>) -> Result<Self> {
        let spikes = self.spiked[..self.rank].to_vec();
        self = Self::new(self.base, &spikes, Some(basis))?;
        Ok(self)
    }

    /// `V diag(f(spiked)) V^T`.
    pub fn matrix_function(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        match &self.basis {
            Some(v) => linalg::spectral_function(v, &self.spiked, f),
            None => DMatrix::from_diagonal(&DVector::from_iterator(
                self.p(),
                self.spiked.iter().map(|&s| f(s)),
            )),
        }
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        self.matrix_function(|s| s)
    }

    /// Draws `Y = Sigma^{1/2} X` with `X` having i.i.d. `N(0, 1/n)` entries.
    ///
    /// Uses `V diag(sqrt(spiked)) X`, which has the same law because `X` is
    /// rotation invariant, and costs one product less.
    pub fn sample_data<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let (p, n) = (self.p(), self.n());
        let scale = 1.0 / (n as f64).sqrt();
        let roots: Vec<f64> = self.spiked.iter().map(|s| s.sqrt()).collect();
        let mut x = DMatrix::<f64>::zeros(p, n);
        // Column-major fill keeps the random stream layout independent of p.
        for j in 0..n {
            for i in 0..p {
                x[(i, j)] = rng.sample::<f64, _>(StandardNormal) * scale * roots[i];
            }
        }
        match &self.basis {
            Some(v) => v * x,
            None => x,
        }
    }
}

/// Eigen-decomposition of `Y Y^T` with eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SampleSpectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    n: usize,
}

impl SampleSpectrum {
    pub fn from_data(data: &DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        if n == 0 || data.nrows() == 0 {
            return Err(Error::InvalidModel("empty data matrix".into()));
        }
        let cov = data * data.transpose();
        let eig = sym_eigen(&cov)?;
        let mut values = eig.values;
        // Null directions come back as tiny negatives.
        values.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(Self {
            values,
            vectors: eig.vectors,
            n,
        })
    }

    pub fn from_parts(values: DVector<f64>, vectors: DMatrix<f64>, n: usize) -> Result<Self> {
        if vectors.nrows() != values.len() || vectors.ncols() != values.len() {
            return Err(Error::InvalidModel("eigenpair dimensions disagree".into()));
        }
        if values.as_slice().windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidModel("eigenvalues must be descending".into()));
        }
        Ok(Self { values, vectors, n })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ratio(&self) -> f64 {
        self.p() as f64 / self.n as f64
    }

    pub fn rank_bound(&self) -> usize {
        self.p().min(self.n)
    }

    /// The `n` eigenvalues of the companion `Y^T Y`: the sample eigenvalues
    /// truncated or zero-padded to length `n`.
    pub fn companion_eigenvalues(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.values.iter().copied().take(self.n).collect();
        out.resize(self.n, 0.0);
        out
    }
}

/// The four reference simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    /// Half the base eigenvalues at 3, half at 1; spike 9.
    TwoLevel,
    /// Base eigenvalues evenly spaced on [1, 2]; spike 9.
    Uniform,
    /// Eigenvalues and eigenvectors of the Toeplitz matrix `0.4^|i-j|`; spike 9.
    Toeplitz,
    /// Half at 8, half at 1; spike 15 above a wide top bulk.
    WideGap,
}

impl Setting {
    pub const ALL: [Setting; 4] = [
        Setting::TwoLevel,
        Setting::Uniform,
        Setting::Toeplitz,
        Setting::WideGap,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Setting::TwoLevel => "i",
            Setting::Uniform => "ii",
            Setting::Toeplitz => "iii",
            Setting::WideGap => "iv",
        }
    }

    pub fn spike(self) -> f64 {
        match self {
            Setting::WideGap => 15.0,
            _ => 9.0,
        }
    }

    /// Base spectrum together with the eigenbasis it comes with, if any.
    fn base(self, p: usize, n: usize) -> Result<(PopulationSpectrum, Option<DMatrix<f64>>)> {
        match self {
            Setting::TwoLevel => Ok((PopulationSpectrum::two_atom(p, n, 3.0, 1.0)?, None)),
            Setting::WideGap => Ok((PopulationSpectrum::two_atom(p, n, 8.0, 1.0)?, None)),
            Setting::Uniform => {
                let step = if p > 1 { 1.0 / (p - 1) as f64 } else { 0.0 };
                let values = (0..p).map(|k| 2.0 - k as f64 * step).collect();
                Ok((PopulationSpectrum::new(values, n)?, None))
            }
            Setting::Toeplitz => {
                let eig = sym_eigen(&linalg::toeplitz_power(p, 0.4))?;
                let spectrum = PopulationSpectrum::new(eig.values.as_slice().to_vec(), n)?;
                Ok((spectrum, Some(eig.vectors)))
            }
        }
    }

    /// The model without its spike, in the same eigenbasis.
    pub fn base_model<R: Rng + ?Sized>(self, p: usize, n: usize, basis_rng: &mut R) -> Result<SpikedModel> {
        self.build_with(p, n, basis_rng, false)
    }

    pub fn build<R: Rng + ?Sized>(self, p: usize, n: usize, basis_rng: &mut R) -> Result<SpikedModel> {
        self.build_with(p, n, basis_rng, true)
    }

    fn build_with<R: Rng + ?Sized>(
        self,
        p: usize,
        n: usize,
        basis_rng: &mut R,
        spiked: bool,
    ) -> Result<SpikedModel> {
        if p < 2 {
            return Err(Error::InvalidModel("settings need p >= 2".into()));
        }
        let (base, own_basis) = self.base(p, n)?;
        let basis = match own_basis {
            Some(v) => v,
            None => linalg::random_orthogonal(p, basis_rng),
        };
        let spikes: &[f64] = if spiked { &[self.spike()][..] } else { &[] };
        SpikedModel::new(base, spikes, Some(basis))
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Ok(Setting::TwoLevel),
            "ii" | "2" => Ok(Setting::Uniform),
            "iii" | "3" => Ok(Setting::Toeplitz),
            "iv" | "4" => Ok(Setting::WideGap),
            other => Err(Error::Config(format!("unknown setting '{other}'"))),
        }
    }
}
