//! Data-driven shrinkers and the shrunken covariance / precision matrices.

use nalgebra::DMatrix;
use serde::Serialize;

use super::spectrum::{EstimatedSpectrum, SampleStieltjes};
use crate::error::{Error, Result};
use crate::linalg::spectral_function;
use crate::model::{SampleSpectrum, SpikedModel};
use crate::theory::{quadratic_forms, Ell, LossKind, Moments, OverlapSquares};

pub const DEFAULT_EPS: f64 = 0.05;

/// How the `ell(x) = x` moments are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Route {
    /// The general estimators for every `ell`.
    General,
    /// For `ell(x) = x`, the estimators that avoid the population spectrum
    /// estimate; the general ones otherwise.
    #[default]
    Simplified,
}

impl std::str::FromStr for Route {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(Route::General),
            "simplified" => Ok(Route::Simplified),
            _ => Err(Error::Config(format!("unknown route '{s}' (general|simplified)"))),
        }
    }
}

/// Estimators of `u_i^T ell(Sigma) u_i` from one sample.
#[derive(Debug, Clone)]
pub struct ShrinkerEstimator<'a> {
    sample: &'a SampleSpectrum,
    spectrum: &'a EstimatedSpectrum,
    stieltjes: &'a SampleStieltjes,
    eps: f64,
    k_plus: usize,
    k_minus: usize,
}

impl<'a> ShrinkerEstimator<'a> {
    pub fn new(
        sample: &'a SampleSpectrum,
        spectrum: &'a EstimatedSpectrum,
        stieltjes: &'a SampleStieltjes,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("eps must be positive, got {eps}")));
        }
        if spectrum.values().len() != sample.p() {
            return Err(Error::Config("spectrum estimate has the wrong length".into()));
        }
        let floor = stieltjes.spikes().last().map(|s| s.spike);
        let (k_plus, k_minus) = spectrum.truncation_indices(eps, floor);
        Ok(Self {
            sample,
            spectrum,
            stieltjes,
            eps,
            k_plus,
            k_minus,
        })
    }

    pub fn rank(&self) -> usize {
        self.stieltjes.rank()
    }

    /// `(K+, K-)`, 1-based.
    pub fn truncation(&self) -> (usize, usize) {
        (self.k_plus, self.k_minus)
    }

    fn ratio(&self) -> f64 {
        self.sample.ratio()
    }

    /// Estimated `phi(v_j, v_j, x)` for population index `j` (0-based).
    pub fn phi_hat(&self, j: usize, x: f64) -> Result<f64> {
        let s = self.spectrum.values()[j];
        let c = self.ratio();
        if x > 0.0 {
            let m = self.stieltjes.m_hat(x);
            Ok(c * s / (x * (1.0 + m * s).norm_sqr()))
        } else if x == 0.0 && c > 1.0 {
            Ok(1.0 / ((1.0 - 1.0 / c) * (1.0 + self.stieltjes.m_hat_zero() * s)))
        } else {
            Err(Error::Domain(format!("phi_hat needs x > 0, or x = 0 with p > n (x = {x})")))
        }
    }

    /// Estimate of the outlier moment for spike `i` (0-based).
    pub fn psi_hat(&self, ell: Ell, i: usize) -> Result<f64> {
        let sp = self
            .stieltjes
            .spikes()
            .get(i)
            .ok_or_else(|| Error::Domain(format!("no spike {}", i + 1)))?;
        let p = self.sample.p();
        let lo = (self.rank() + 1).max(self.k_minus);
        let hi = p.min(self.k_plus);
        if lo > hi {
            return Err(Error::Numerical(format!(
                "empty truncated range: j from {lo} to {hi} (K+ = {}, K- = {})",
                self.k_plus, self.k_minus
            )));
        }
        let sum: f64 = self.spectrum.values()[lo - 1..hi]
            .iter()
            .map(|&s| ell.apply(s) * s / (1.0 + sp.m * s).powi(2))
            .sum();
        let m0_dot = sp.m_prime / (self.sample.n() as f64 * sp.location) * sum;
        Ok(sp.alignment * (ell.apply(sp.spike) / sp.spike + sp.location * m0_dot))
    }

    fn bulk_range(&self) -> std::ops::Range<usize> {
        self.rank()..self.sample.p().min(self.k_plus).max(self.rank())
    }

    /// Estimate at the bulk sample index `i` (1-based, `r < i <= min(p, n)`).
    pub fn vartheta_hat(&self, ell: Ell, i: usize) -> Result<f64> {
        let k = self.sample.rank_bound();
        if i <= self.rank() || i > k {
            return Err(Error::Domain(format!(
                "bulk index {i} outside ({}, {k}]",
                self.rank()
            )));
        }
        let x = self.sample.eigenvalues()[i - 1];
        if !(x > 0.0) {
            return Err(Error::Numerical(format!("sample eigenvalue {i} is {x}")));
        }
        let m = self.stieltjes.m_hat(x);
        let c = self.ratio();
        let values = self.spectrum.values();
        let sum: f64 = self
            .bulk_range()
            .filter_map(|j| {
                let s = values[j];
                let d = (1.0 + m * s).norm();
                (d >= self.eps).then(|| ell.apply(s) * c * s / (x * d * d))
            })
            .sum();
        Ok(sum / self.sample.p() as f64)
    }

    /// Estimate shared by the null directions (`p > n`).
    pub fn vartheta_hat_zero(&self, ell: Ell) -> Result<f64> {
        let c = self.ratio();
        if c <= 1.0 {
            return Err(Error::Domain("null-block estimate needs p > n".into()));
        }
        let m0 = self.stieltjes.m_hat_zero();
        let values = self.spectrum.values();
        let sum: f64 = self
            .bulk_range()
            .map(|j| ell.apply(values[j]) / (1.0 + m0 * values[j]))
            .sum();
        Ok(sum / ((1.0 - 1.0 / c) * self.sample.p() as f64))
    }

    /// `ell(x) = x` estimate that skips the population spectrum, at sample
    /// index `i` (1-based): spike, bulk, or null direction.
    pub fn xi_zeta_hat(&self, i: usize) -> Result<f64> {
        let (p, k) = (self.sample.p(), self.sample.rank_bound());
        if i == 0 || i > p {
            return Err(Error::Domain(format!("index {i} outside 1..={p}")));
        }
        if i <= self.rank() {
            let sp = self.stieltjes.spikes()[i - 1];
            let zeta = sp.m_prime / (sp.m * sp.m);
            return Ok(sp.alignment * zeta);
        }
        if i <= k {
            let x = self.sample.eigenvalues()[i - 1];
            return Ok(1.0 / (x * self.stieltjes.m_hat(x).norm_sqr()));
        }
        let c = self.ratio();
        if c <= 1.0 {
            return Err(Error::Domain("null-block estimate needs p > n".into()));
        }
        Ok(1.0 / ((c - 1.0) * self.stieltjes.m_hat_zero()))
    }

    /// Estimated `u_i^T ell(Sigma) u_i` for every `i = 1..=p`.
    pub fn moment_vector(&self, ell: Ell, route: Route) -> Result<Vec<f64>> {
        let (p, k, r) = (self.sample.p(), self.sample.rank_bound(), self.rank());
        if route == Route::Simplified && ell == Ell::Identity {
            return (1..=p).map(|i| self.xi_zeta_hat(i)).collect();
        }
        let mut out = Vec::with_capacity(p);
        for i in 0..r {
            out.push(self.psi_hat(ell, i)?);
        }
        for i in r + 1..=k {
            out.push(self.vartheta_hat(ell, i)?);
        }
        if p > k {
            let zero = self.vartheta_hat_zero(ell)?;
            out.resize(p, zero);
        }
        Ok(out)
    }

    pub fn moments(&self, loss: LossKind, route: Route) -> Result<Moments> {
        loss.ells()
            .iter()
            .map(|&e| self.moment_vector(e, route).map(|v| (e, v)))
            .collect()
    }

    /// Estimated optimal shrinkers for `loss`.
    pub fn shrinkers(&self, loss: LossKind, route: Route) -> Result<Vec<f64>> {
        loss.shrinkers(&self.moments(loss, route)?)
    }
}

/// `u_i^T ell(Sigma) u_i` with the true covariance; the null directions share
/// `tr[U_0^T ell(Sigma) U_0] / (p - n)`.
pub fn empirical_shrinker(sample: &SampleSpectrum, model: &SpikedModel, ell: Ell) -> Vec<f64> {
    let overlaps = OverlapSquares::new(model.basis(), sample.eigenvectors());
    quadratic_forms(
        model.spiked_values(),
        &overlaps,
        sample.rank_bound(),
        |x| ell.apply(x),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Target {
    Covariance,
    Precision,
}

/// `sum_i phi_i u_i u_i^T` (covariance) or `sum_i phi_i^{-1} u_i u_i^T` (precision).
#[derive(Debug, Clone)]
pub struct ShrunkenMatrix {
    pub basis: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub target: Target,
}

impl ShrunkenMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        let m = match self.target {
            Target::Covariance => spectral_function(&self.basis, &self.phi, |x| x),
            Target::Precision => spectral_function(&self.basis, &self.phi, |x| 1.0 / x),
        };
        // Exact symmetry regardless of rounding in the product.
        (&m + m.transpose()) * 0.5
    }
}

/// Checks shrinker positivity where `loss` or `target` needs it.
pub fn assemble_shrunken(
    sample: &SampleSpectrum,
    loss: LossKind,
    phi: Vec<f64>,
    target: Target,
) -> Result<ShrunkenMatrix> {
    if phi.len() != sample.p() {
        return Err(Error::Config(format!(
            "{} shrinkers for dimension {}",
            phi.len(),
            sample.p()
        )));
    }
    let needs_positive = target == Target::Precision || loss != LossKind::Frobenius;
    if needs_positive {
        if let Some(i) = phi.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Numerical(format!(
                "shrinker {} is {} but {loss} needs positive values",
                i + 1,
                phi[i]
            )));
        }
    }
    Ok(ShrunkenMatrix {
        basis: sample.eigenvectors().clone(),
        phi,
        target,
    })
}
