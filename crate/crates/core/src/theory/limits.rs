//! Deterministic limits of the optimal shrinkers under a spiked model.

use nalgebra::DVector;
use serde::Serialize;

use super::{Ell, LossKind, Moments, RiskValue};
use crate::error::{Error, Result};
use crate::model::SpikedModel;
use crate::mp_law::{MpLaw, MpLawTable};
use crate::C64;

/// Limit of an outlier eigenvalue and of its eigenvector alignment.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OutlierAsymptotics {
    /// 0-based spike index.
    pub index: usize,
    pub spike: f64,
    /// Outlier location `h(-1/spike)`.
    pub location: f64,
    /// `h'(-1/spike) / h(-1/spike)`.
    pub alignment: f64,
    /// `m'` at the outlier location, `1 / h'(-1/spike)`.
    pub m_prime: f64,
}

impl OutlierAsymptotics {
    /// `m` at the outlier location.
    pub fn m(&self) -> f64 {
        -1.0 / self.spike
    }

    /// Limiting squared cosine between the outlier sample eigenvector and the
    /// spike direction.
    pub fn cos2(&self) -> f64 {
        self.alignment / self.spike
    }
}

/// Limits that only depend on the model: the MP law of the base spectrum, the
/// outliers, and `phi`, `theta`, `psi`, `xi`, `zeta`.
#[derive(Debug, Clone)]
pub struct SpikedTheory {
    model: SpikedModel,
    table: MpLawTable,
    outliers: Vec<OutlierAsymptotics>,
    subcritical: Vec<usize>,
    /// `m(gamma_k)` at the bulk quantiles, `k = 1..=K - outliers`.
    bulk_m: Vec<C64>,
    m_zero: Option<f64>,
}

impl SpikedTheory {
    pub fn new(model: &SpikedModel) -> Result<Self> {
        let table = MpLawTable::build(MpLaw::new(model.base()))?;
        Self::with_table(model, table)
    }

    /// Reuses a table built from `model.base()`.
    pub fn with_table(model: &SpikedModel, table: MpLawTable) -> Result<Self> {
        let law = table.law();
        let top_critical = table.edges().critical[0];
        let threshold = -1.0 / top_critical;
        let mut outliers = Vec::new();
        let mut subcritical = Vec::new();
        for (i, &s) in model.spiked_values()[..model.rank()].iter().enumerate() {
            if s <= threshold {
                subcritical.push(i);
                continue;
            }
            let m = -1.0 / s;
            let location = law.h_real(m)?;
            let dh = law.h_prime_real(m)?;
            outliers.push(OutlierAsymptotics {
                index: i,
                spike: s,
                location,
                alignment: dh / location,
                m_prime: 1.0 / dh,
            });
        }
        let k = model.p().min(model.n());
        let bulk_count = k.saturating_sub(outliers.len());
        let bulk_m = (1..=bulk_count)
            .map(|j| table.m(table.quantile(j)))
            .collect::<Result<Vec<_>>>()?;
        let m_zero = if model.ratio() > 1.0 {
            Some(law.m_at_zero()?)
        } else {
            None
        };
        Ok(Self {
            model: model.clone(),
            table,
            outliers,
            subcritical,
            bulk_m,
            m_zero,
        })
    }

    pub fn model(&self) -> &SpikedModel {
        &self.model
    }

    pub fn table(&self) -> &MpLawTable {
        &self.table
    }

    pub fn outliers(&self) -> &[OutlierAsymptotics] {
        &self.outliers
    }

    /// Spikes too weak to leave the bulk (0-based indices).
    pub fn subcritical(&self) -> &[usize] {
        &self.subcritical
    }

    /// Smallest spike value that produces an outlier, `-1 / b_1`.
    pub fn critical_spike(&self) -> f64 {
        -1.0 / self.table.edges().critical[0]
    }

    fn ratio(&self) -> f64 {
        self.model.ratio()
    }

    /// `m(x)` on the real axis, using the cached values at the quantiles.
    fn m_at(&self, x: f64) -> Result<C64> {
        if x == 0.0 {
            return self
                .m_zero
                .map(|v| C64::new(v, 0.0))
                .ok_or_else(|| Error::Domain("x = 0 needs p > n".into()));
        }
        self.table.m(x)
    }

    /// `phi` for weights `a_j b_j` on the population eigenvalues, given `m(x)`.
    fn phi_core(&self, weights: impl Iterator<Item = (f64, f64)>, x: f64, m: C64) -> Result<f64> {
        let c = self.ratio();
        if x > 0.0 {
            Ok(weights
                .map(|(w, s)| w * c * s / (x * (1.0 + m * s).norm_sqr()))
                .sum())
        } else if x == 0.0 && c > 1.0 {
            let m0 = m.re;
            Ok(weights.map(|(w, s)| w / (1.0 + m0 * s)).sum::<f64>() / (1.0 - 1.0 / c))
        } else {
            Err(Error::Domain(format!("phi needs x > 0, or x = 0 with p > n (x = {x})")))
        }
    }

    /// Limiting `p <w1, u_i> <w2, u_i>` for a sample eigenvector at `x`.
    pub fn phi(&self, w1: &DVector<f64>, w2: &DVector<f64>, x: f64) -> Result<f64> {
        let p = self.model.p();
        if w1.len() != p || w2.len() != p {
            return Err(Error::Config("phi: direction length differs from p".into()));
        }
        let (a, b) = match self.model.basis() {
            Some(v) => (v.tr_mul(w1), v.tr_mul(w2)),
            None => (w1.clone(), w2.clone()),
        };
        let m = self.m_at(x)?;
        let s = self.model.spiked_values();
        self.phi_core((0..p).map(|j| (a[j] * b[j], s[j])), x, m)
    }

    /// `phi(v_j, v_j, x)` for the population eigenvector `v_j` (0-based).
    pub fn phi_diag(&self, j: usize, x: f64) -> Result<f64> {
        let m = self.m_at(x)?;
        self.phi_core(std::iter::once((1.0, self.model.spiked_values()[j])), x, m)
    }

    /// `phi(v_j, v_j, x)` for every `j`, solving for `m(x)` once.
    pub fn phi_profile(&self, x: f64) -> Result<Vec<f64>> {
        let m = self.m_at(x)?;
        self.model
            .spiked_values()
            .iter()
            .map(|&s| self.phi_core(std::iter::once((1.0, s)), x, m))
            .collect()
    }

    /// Deterministic location of sample eigenvalue `i` (1-based): the outlier
    /// location, `gamma_{i - r}` in the bulk, 0 past `min(p, n)`.
    pub fn sample_location(&self, i: usize) -> f64 {
        let r = self.outliers.len();
        if i == 0 {
            return f64::NAN;
        }
        if i <= r {
            return self.outliers[i - 1].location;
        }
        self.table.quantile(i - r)
    }

    fn vartheta_with(&self, ell: Ell, x: f64, m: C64) -> Result<f64> {
        let r = self.outliers.len();
        let s = &self.model.spiked_values()[r..];
        let v = self.phi_core(s.iter().map(|&s| (ell.apply(s), s)), x, m)?;
        Ok(v / self.model.p() as f64)
    }

    /// `(1/p) sum_{j > r} ell(sigma_j) phi(v_j, v_j, x)`.
    pub fn vartheta(&self, ell: Ell, x: f64) -> Result<f64> {
        let m = self.m_at(x)?;
        self.vartheta_with(ell, x, m)
    }

    /// Limit of `u_i^T ell(Sigma) u_i` for the outlier of spike `i` (0-based).
    pub fn psi(&self, ell: Ell, i: usize) -> Result<f64> {
        let o = self
            .outliers
            .iter()
            .find(|o| o.index == i)
            .ok_or_else(|| Error::Domain(format!("spike {} is not supercritical", i + 1)))?;
        let law = self.table.law();
        let m = C64::new(o.m(), 0.0);
        let dot = law.m_dot0(m, o.location, |s| ell.apply(s))?.re;
        Ok(o.alignment * (ell.apply(o.spike) / o.spike + o.location * dot))
    }

    /// Limits `theta_i(ell)` for `i = 1..=p`: outliers, then bulk quantiles, then
    /// the null block.
    pub fn theta(&self, ell: Ell) -> Result<Vec<f64>> {
        let p = self.model.p();
        let mut out = Vec::with_capacity(p);
        for o in &self.outliers {
            out.push(self.psi(ell, o.index)?);
        }
        for (k, &m) in self.bulk_m.iter().enumerate() {
            out.push(self.vartheta_with(ell, self.table.quantile(k + 1), m)?);
        }
        if out.len() < p {
            let zero = self.vartheta(ell, 0.0)?;
            out.resize(p, zero);
        }
        Ok(out)
    }

    /// `1 / (x |m(x)|^2)`, and `1 / ((c - 1) m(0))` at zero.
    pub fn xi(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            let m0 = self.m_at(0.0)?.re;
            return Ok(1.0 / ((self.ratio() - 1.0) * m0));
        }
        let m = self.m_at(x)?;
        Ok(1.0 / (x * m.norm_sqr()))
    }

    /// `m'(a) / |m(a)|^2` at the outlier location of spike `i`.
    pub fn zeta(&self, i: usize) -> Result<f64> {
        let o = self
            .outliers
            .iter()
            .find(|o| o.index == i)
            .ok_or_else(|| Error::Domain(format!("spike {} is not supercritical", i + 1)))?;
        Ok(o.m_prime * o.spike * o.spike)
    }

    pub fn limiting_moments(&self, loss: LossKind) -> Result<Moments> {
        loss.ells()
            .iter()
            .map(|&e| self.theta(e).map(|t| (e, t)))
            .collect()
    }

    /// Limiting risk of the optimal nonlinear shrinker for `loss`.
    pub fn asymptotic_risk(&self, loss: LossKind) -> Result<RiskValue> {
        let moments = self.limiting_moments(loss)?;
        super::risk_from_moments(loss, self.model.spiked_values(), &moments)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PopulationSpectrum;
    use approx::assert_abs_diff_eq;

    fn identity_spiked(p: usize, n: usize, spike: f64) -> SpikedTheory {
        let base = PopulationSpectrum::identity(p, n).unwrap();
        SpikedTheory::new(&SpikedModel::new(base, &[spike], None).unwrap()).unwrap()
    }

    #[test]
    fn outlier_of_identity_model() {
        // Independent closed forms for Sigma_0 = I: outlier s (1 + c/(s - 1)),
        // cosine^2 (1 - c/(s-1)^2) / (1 + c/(s-1)).
        let t = identity_spiked(300, 600, 9.0);
        let o = t.outliers()[0];
        assert_abs_diff_eq!(o.location, 9.5625, epsilon = 1e-12);
        assert_abs_diff_eq!(o.location, 9.0 * (1.0 + 0.5 / 8.0), epsilon = 1e-12);
        let cos2 = (1.0 - 0.5 / 64.0) / (1.0 + 0.5 / 8.0);
        assert_abs_diff_eq!(o.cos2(), cos2, epsilon = 1e-12);
        assert_abs_diff_eq!(o.cos2(), 0.933_823_529_411_764_7, epsilon = 1e-12);
        assert_abs_diff_eq!(t.critical_spike(), 1.0 + 0.5f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn subcritical_spikes_are_flagged() {
        let t = identity_spiked(300, 600, 1.5);
        assert!(t.outliers().is_empty());
        assert_eq!(t.subcritical(), &[0]);
        assert!(t.psi(Ell::Identity, 0).is_err());
    }

    #[test]
    fn psi_identity_ell_equals_alignment_times_zeta() {
        let t = identity_spiked(300, 600, 9.0);
        let psi = t.psi(Ell::Identity, 0).unwrap();
        let bz = t.outliers()[0].alignment * t.zeta(0).unwrap();
        assert_abs_diff_eq!(psi, bz, epsilon = 1e-12);
        // h'(-1/9) = 81 - 0.5 * 81/64.
        assert_abs_diff_eq!(t.zeta(0).unwrap(), 81.0 / 80.367_187_5, epsilon = 1e-12);
    }

    #[test]
    fn identity_bulk_thetas_are_one() {
        // Sigma = I, no spike: every u_i^T Sigma u_i is 1.
        let base = PopulationSpectrum::identity(200, 400).unwrap();
        let t = SpikedTheory::new(&SpikedModel::unspiked(base)).unwrap();
        for v in t.theta(Ell::Identity).unwrap() {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
        for v in t.theta(Ell::Log).unwrap() {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn null_block_constant_ell_is_one() {
        // (1/p)(1 - 1/c)^{-1} sum_j 1/(1 + m(0) sigma_j) = 1 from the m(0) identity.
        let base = PopulationSpectrum::two_atom(400, 200, 3.0, 1.0).unwrap();
        let t = SpikedTheory::new(&SpikedModel::unspiked(base)).unwrap();
        let one = t.phi_core(t.model.spiked_values().iter().map(|&s| (1.0, s)), 0.0, C64::new(t.m_zero.unwrap(), 0.0)).unwrap() / 400.0;
        assert_abs_diff_eq!(one, 1.0, epsilon = 1e-10);
        let th = t.theta(Ell::Identity).unwrap();
        assert_eq!(th.len(), 400);
        assert_abs_diff_eq!(th[399], t.xi(0.0).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn spiked_vartheta_differs_from_xi_by_the_dropped_term() {
        let t = identity_spiked(300, 600, 9.0);
        let x = t.table().quantile(100);
        let m = t.table().m(x).unwrap();
        // The base eigenvalue replaced by the spike is 1.
        let dropped = 1.0 / (600.0 * x * (1.0 + m).norm_sqr());
        let diff = t.xi(x).unwrap() - t.vartheta(Ell::Identity, x).unwrap();
        assert_abs_diff_eq!(diff, dropped, epsilon = 1e-12);
    }

    #[test]
    fn phi_general_directions() {
        let base = PopulationSpectrum::two_atom(100, 200, 3.0, 1.0).unwrap();
        let t = SpikedTheory::new(&SpikedModel::unspiked(base)).unwrap();
        let x = t.table().quantile(30);
        let e0 = DVector::from_fn(100, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let e1 = DVector::from_fn(100, |i, _| if i == 1 { 1.0 } else { 0.0 });
        assert_abs_diff_eq!(t.phi(&e0, &e0, x).unwrap(), t.phi_diag(0, x).unwrap(), epsilon = 1e-14);
        assert_abs_diff_eq!(t.phi(&e0, &e1, x).unwrap(), 0.0, epsilon = 1e-14);
    }
}
