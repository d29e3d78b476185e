//! Sample-side spectral quantities: number of spikes, Stieltjes sums, and an
//! estimate of the non-spiked population spectrum.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{PopulationSpectrum, SampleSpectrum};
use crate::C64;

pub const DEFAULT_MAX_RANK: usize = 20;
pub const MOMENT_COUNT: usize = 8;
pub const GRID_ATOMS: usize = 64;

/// Number of outliers by the edge-distribution rule: the eigenvalue spacing
/// scale near the bulk edge is estimated by regressing `l_j, ..., l_{j+4}` on
/// `(j-1)^{2/3}, ..., (j+3)^{2/3}`; spikes are the eigenvalues above the last
/// gap wider than twice that slope.
pub fn estimate_rank(sample: &SampleSpectrum) -> usize {
    estimate_rank_with(sample, DEFAULT_MAX_RANK)
}

pub fn estimate_rank_with(sample: &SampleSpectrum, max_rank: usize) -> usize {
    let l = sample.eigenvalues();
    let k = sample.rank_bound();
    // Need max_rank + 1 gaps and five points for the regression.
    let max_rank = max_rank.min(k.saturating_sub(6));
    if max_rank == 0 {
        return 0;
    }
    let mut j = max_rank + 1;
    let mut rank = 0;
    for _ in 0..100 {
        let xs: Vec<f64> = (0..5).map(|t| ((j - 1 + t) as f64).powf(2.0 / 3.0)).collect();
        let ys = &l[j - 1..j + 4];
        let delta = 2.0 * slope(&xs, ys).abs();
        rank = (1..=max_rank)
            .rev()
            .find(|&i| l[i - 1] - l[i] >= delta)
            .unwrap_or(0);
        if rank + 1 == j {
            break;
        }
        j = rank + 1;
    }
    rank
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Plug-in outlier quantities for one spike.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpikeEstimate {
    /// 0-based spike index.
    pub index: usize,
    /// The outlier eigenvalue itself.
    pub location: f64,
    pub m: f64,
    pub m_prime: f64,
    /// `1 / (location * m_prime)`.
    pub alignment: f64,
    /// `-1 / m`.
    pub spike: f64,
}

/// Sums over the non-outlier companion eigenvalues.
#[derive(Debug, Clone)]
pub struct SampleStieltjes {
    spikes: Vec<SpikeEstimate>,
    /// `l_{r+1}, ..., l_n` of the `n x n` companion matrix.
    bulk: Vec<f64>,
    n: usize,
    p: usize,
    eta: f64,
}

impl SampleStieltjes {
    /// Uses `eta = n^{-1/2}`.
    pub fn new(sample: &SampleSpectrum, rank: usize) -> Result<Self> {
        Self::with_eta(sample, rank, 1.0 / (sample.n() as f64).sqrt())
    }

    pub fn with_eta(sample: &SampleSpectrum, rank: usize, eta: f64) -> Result<Self> {
        let k = sample.rank_bound();
        if rank >= k {
            return Err(Error::Config(format!("rank {rank} must be below min(p, n) = {k}")));
        }
        if !(eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {eta}")));
        }
        let companion = sample.companion_eigenvalues();
        let n = sample.n();
        let nf = n as f64;
        let bulk = companion[rank..].to_vec();
        let mut spikes = Vec::with_capacity(rank);
        for (i, &a) in companion[..rank].iter().enumerate() {
            if let Some(l) = bulk.iter().find(|&&l| (l - a).abs() < 1e-12) {
                return Err(Error::Numerical(format!(
                    "outlier {} at {a} collides with bulk eigenvalue {l}",
                    i + 1
                )));
            }
            let m = bulk.iter().map(|l| 1.0 / (l - a)).sum::<f64>() / nf;
            let m_prime = bulk.iter().map(|l| (l - a).powi(-2)).sum::<f64>() / nf;
            spikes.push(SpikeEstimate {
                index: i,
                location: a,
                m,
                m_prime,
                alignment: 1.0 / (a * m_prime),
                spike: -1.0 / m,
            });
        }
        Ok(Self {
            spikes,
            bulk,
            n,
            p: sample.p(),
            eta,
        })
    }

    pub fn rank(&self) -> usize {
        self.spikes.len()
    }

    pub fn spikes(&self) -> &[SpikeEstimate] {
        &self.spikes
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn ratio(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    /// `(1/n) sum_{j > r} 1 / (l_j - x - i eta)`.
    pub fn m_hat(&self, x: f64) -> C64 {
        let z = C64::new(x, self.eta);
        self.bulk.iter().map(|&l| (l - z).inv()).sum::<C64>() / self.n as f64
    }

    /// `Re (1/n) sum_{j > r} 1 / (l_j - i eta)`.
    pub fn m_hat_zero(&self) -> f64 {
        self.m_hat(0.0).re
    }

    /// Same sum without the imaginary shift, for points off the spectrum.
    pub fn m_real(&self, x: f64) -> Result<f64> {
        if let Some(l) = self.bulk.iter().find(|&&l| (l - x).abs() < 1e-12) {
            return Err(Error::Numerical(format!("{x} collides with eigenvalue {l}")));
        }
        Ok(self.bulk.iter().map(|l| 1.0 / (l - x)).sum::<f64>() / self.n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpectrumMethod {
    Moment,
    /// The true non-spiked spectrum, for simulations.
    Oracle,
}

impl std::str::FromStr for SpectrumMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "moment" => Ok(SpectrumMethod::Moment),
            "oracle" => Ok(SpectrumMethod::Oracle),
            _ => Err(Error::Config(format!("unknown spectrum method '{s}' (moment|oracle)"))),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MomentDiagnostics {
    /// Estimated `(1/p) tr Sigma_0^k`, `k = 1..=8`.
    pub population_moments: Vec<f64>,
    /// Moments of the fitted discrete measure.
    pub fitted_moments: Vec<f64>,
    /// Largest relative moment misfit.
    pub max_relative_residual: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatedSpectrum {
    sigma_hat: Vec<f64>,
    pub method: SpectrumMethod,
    pub diagnostics: MomentDiagnostics,
}

impl EstimatedSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.sigma_hat
    }

    pub fn oracle(truth: &PopulationSpectrum) -> Self {
        Self {
            sigma_hat: truth.values().to_vec(),
            method: SpectrumMethod::Oracle,
            diagnostics: MomentDiagnostics::default(),
        }
    }

    /// `(K+, K-)` with `K+ = max{j : sigma_j >= eps}` (0 if none) and
    /// `K- = min{j : sigma_j <= spike_floor - eps}` (p + 1 if none), 1-based.
    /// Without a spike floor, `K- = 1`.
    pub fn truncation_indices(&self, eps: f64, spike_floor: Option<f64>) -> (usize, usize) {
        truncation_indices(eps, &self.sigma_hat, spike_floor)
    }
}

pub fn truncation_indices(eps: f64, sigma_hat: &[f64], spike_floor: Option<f64>) -> (usize, usize) {
    let k_plus = sigma_hat
        .iter()
        .rposition(|&s| s >= eps)
        .map_or(0, |j| j + 1);
    let k_minus = match spike_floor {
        None => 1,
        Some(floor) => sigma_hat
            .iter()
            .position(|&s| s <= floor - eps)
            .map_or(sigma_hat.len() + 1, |j| j + 1),
    };
    (k_plus, k_minus)
}

pub fn estimate_population_spectrum(
    sample: &SampleSpectrum,
    rank: usize,
    method: SpectrumMethod,
    truth: Option<&PopulationSpectrum>,
) -> Result<EstimatedSpectrum> {
    match method {
        SpectrumMethod::Oracle => {
            let truth = truth.ok_or_else(|| {
                Error::Config("oracle spectrum requested without a true spectrum".into())
            })?;
            if truth.p() != sample.p() {
                return Err(Error::Config("true spectrum has the wrong dimension".into()));
            }
            Ok(EstimatedSpectrum::oracle(truth))
        }
        SpectrumMethod::Moment => moment_fit(sample, rank),
    }
}

/// Sample moments `(1/p') tr S^k` of the non-outlier eigenvalues mapped back to
/// population moments, then a nonnegative discrete measure on a grid matching
/// them.
fn moment_fit(sample: &SampleSpectrum, rank: usize) -> Result<EstimatedSpectrum> {
    let p = sample.p();
    let k = sample.rank_bound();
    if sample.n() < 100 {
        return Err(Error::Config("moment spectrum estimate needs n >= 100".into()));
    }
    if rank >= k {
        return Err(Error::Config(format!("rank {rank} leaves no bulk")));
    }
    let l = sample.eigenvalues();
    let bulk = &l[rank..];
    let pp = bulk.len() as f64;
    let ratio = pp / sample.n() as f64;
    let sample_moments: Vec<f64> = (1..=MOMENT_COUNT)
        .map(|q| bulk.iter().map(|x| x.powi(q as i32)).sum::<f64>() / pp)
        .collect();
    let alpha = invert_moment_map(&sample_moments, ratio);
    let mut diagnostics = MomentDiagnostics {
        population_moments: alpha.clone(),
        ..Default::default()
    };

    let fallback = |diag: MomentDiagnostics, why: &str| {
        warn!("moment spectrum fit infeasible ({why}); using a flat spectrum");
        let level = sample_moments[0].max(f64::MIN_POSITIVE);
        EstimatedSpectrum {
            sigma_hat: vec![level; p],
            method: SpectrumMethod::Moment,
            diagnostics: MomentDiagnostics {
                fallback: true,
                ..diag
            },
        }
    };
    if alpha.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Ok(fallback(diagnostics, "nonpositive population moment"));
    }

    let lo = 0.5 * l[k - 1];
    let hi = 1.2 * l[rank];
    if !(hi > lo) || !(lo > 0.0) {
        return Ok(fallback(diagnostics, "degenerate grid"));
    }
    let scale = alpha[0];
    let grid: Vec<f64> = (0..GRID_ATOMS)
        .map(|i| lo + (hi - lo) * i as f64 / (GRID_ATOMS - 1) as f64)
        .collect();
    // Row 0 is total mass; rows are scaled to relative error, mass row weighted up.
    let rows = MOMENT_COUNT + 1;
    let targets: Vec<f64> = std::iter::once(1.0)
        .chain(alpha.iter().enumerate().map(|(q, a)| a / scale.powi(q as i32 + 1)))
        .collect();
    let weights: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(q, t)| if q == 0 { 100.0 } else { 1.0 / t })
        .collect();
    let a = DMatrix::from_fn(rows, GRID_ATOMS, |q, i| {
        weights[q] * (grid[i] / scale).powi(q as i32)
    });
    let b = DVector::from_fn(rows, |q, _| weights[q] * targets[q]);
    let mass = nnls(&a, &b)?;
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return Ok(fallback(diagnostics, "empty fitted measure"));
    }
    let fitted: Vec<f64> = (1..=MOMENT_COUNT)
        .map(|q| {
            grid.iter()
                .zip(mass.iter())
                .map(|(t, w)| w * t.powi(q as i32))
                .sum::<f64>()
                / total
        })
        .collect();
    diagnostics.max_relative_residual = fitted
        .iter()
        .zip(&alpha)
        .map(|(f, a)| ((f - a) / a).abs())
        .fold(0.0, f64::max);
    diagnostics.fitted_moments = fitted;
    if diagnostics.max_relative_residual > 0.5 {
        return Ok(fallback(diagnostics, "moment misfit above 50%"));
    }

    // Descending quantiles at levels (j - 1/2) / p.
    let mut atoms: Vec<(f64, f64)> = grid
        .iter()
        .zip(mass.iter())
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, w)| (*t, w / total))
        .collect();
    atoms.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut sigma_hat = Vec::with_capacity(p);
    let mut cum = 0.0;
    let mut it = atoms.iter().peekable();
    let mut current = atoms[0].0;
    for j in 0..p {
        let level = (j as f64 + 0.5) / p as f64;
        while cum < level {
            match it.next() {
                Some(&(t, w)) => {
                    cum += w;
                    current = t;
                }
                None => break,
            }
        }
        sigma_hat.push(current);
    }
    Ok(EstimatedSpectrum {
        sigma_hat,
        method: SpectrumMethod::Moment,
        diagnostics,
    })
}

fn truncated_mul(a: &[f64], b: &[f64], degree: usize) -> Vec<f64> {
    let mut out = vec![0.0; degree + 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate().take(degree + 1 - i) {
            out[i + j] += x * y;
        }
    }
    out
}

/// Limiting sample moments from population moments:
/// `beta_k = [s^k] g(s)^{k+1} / (c (k+1))` with `g(s) = 1 + c sum_j alpha_j s^j`.
pub fn forward_moment_map(alpha: &[f64], ratio: f64) -> Vec<f64> {
    let kmax = alpha.len();
    let mut g = vec![1.0];
    g.extend(alpha.iter().map(|a| ratio * a));
    let mut power = g.clone();
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        // power holds g^k truncated at degree kmax.
        power = truncated_mul(&power, &g, kmax);
        out.push(power[k] / (ratio * (k as f64 + 1.0)));
    }
    out
}

/// Inverse of [`forward_moment_map`]. `beta_k` depends on `alpha_k` with unit
/// coefficient, so the inverse is sequential.
pub fn invert_moment_map(beta: &[f64], ratio: f64) -> Vec<f64> {
    let mut alpha = vec![0.0; beta.len()];
    for k in 0..beta.len() {
        alpha[k] = 0.0;
        let partial = forward_moment_map(&alpha[..=k], ratio);
        alpha[k] = beta[k] - partial[k];
    }
    alpha
}

/// Lawson-Hanson nonnegative least squares `min |Ax - b|, x >= 0`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(Error::Config("nnls: dimension mismatch".into()));
    }
    let mut x = DVector::<f64>::zeros(n);
    let mut passive = vec![false; n];
    let tol = 10.0 * f64::EPSILON * a.norm() * (m.max(n) as f64);
    let max_outer = 3 * n;
    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let pick = (0..n)
            .filter(|&j| !passive[j])
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(t) = pick.filter(|&t| w[t] > tol) else {
            return Ok(x);
        };
        passive[t] = true;
        for _ in 0..max_outer {
            let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = a.select_columns(&idx);
            let sol = sub
                .svd(true, true)
                .solve(b, 1e-14)
                .map_err(|e| Error::Linalg(format!("nnls subproblem: {e}")))?;
            if sol.iter().all(|&v| v > 0.0) {
                x.fill(0.0);
                for (k, &j) in idx.iter().enumerate() {
                    x[j] = sol[k];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (k, &j) in idx.iter().enumerate() {
                if sol[k] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - sol[k]));
                }
            }
            for (k, &j) in idx.iter().enumerate() {
                x[j] += alpha * (sol[k] - x[j]);
                if x[j] <= tol {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn moment_map_identity_is_narayana() {
        // Sigma = I: limiting sample moments are Narayana polynomials in c.
        let c: f64 = 0.37;
        let beta = forward_moment_map(&[1.0; 4], c);
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[1], 1.0 + c, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[2], 1.0 + 3.0 * c + c * c, epsilon = 1e-14);
        assert_abs_diff_eq!(beta[3], 1.0 + 6.0 * c + 6.0 * c * c + c.powi(3), epsilon = 1e-14);
    }

    #[test]
    fn moment_map_low_orders() {
        let (c, a) = (0.5, [2.0, 5.0, 14.0]);
        let beta = forward_moment_map(&a, c);
        assert_abs_diff_eq!(beta[1], a[1] + c * a[0] * a[0], epsilon = 1e-13);
        assert_abs_diff_eq!(
            beta[2],
            a[2] + 3.0 * c * a[0] * a[1] + c * c * a[0].powi(3),
            epsilon = 1e-12
        );
    }

    #[test]
    fn moment_map_round_trip() {
        let alpha = [2.0, 5.0, 14.0, 41.0, 122.0, 365.0, 1094.0, 3281.0];
        let beta = forward_moment_map(&alpha, 0.5);
        let back = invert_moment_map(&beta, 0.5);
        for (a, b) in alpha.iter().zip(back) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-9 * a);
        }
    }

    #[test]
    fn nnls_recovers_nonnegative_solution() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_column_slice(&[1.0, -2.0, 3.0]);
        let x = nnls(&a, &b).unwrap();
        for (got, want) in x.iter().zip([1.0, 0.0, 3.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-12);
        }
        // Underdetermined consistent system keeps an exact fit.
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0]);
        let b = DVector::from_column_slice(&[1.0, 2.5]);
        let x = nnls(&a, &b).unwrap();
        assert!(x.iter().all(|v| *v >= 0.0));
        assert_abs_diff_eq!((&a * &x - &b).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn truncation_index_conventions() {
        let s = [3.0, 2.0, 1.0, 0.5];
        assert_eq!(truncation_indices(0.6, &s, None).0, 3);
        assert_eq!(truncation_indices(5.0, &s, None).0, 0);
        // Huge spike floor: every sigma qualifies.
        assert_eq!(truncation_indices(0.05, &s, Some(1e9)).1, 1);
        assert_eq!(truncation_indices(0.05, &s, Some(0.1)).1, 5);
        assert_eq!(truncation_indices(0.05, &s, Some(2.5)).1, 2);
    }

    fn spectrum_from(values: Vec<f64>, n: usize) -> SampleSpectrum {
        let p = values.len();
        SampleSpectrum::from_parts(DVector::from_vec(values), DMatrix::identity(p, p), n).unwrap()
    }

    #[test]
    fn stieltjes_single_atom() {
        let s = spectrum_from(vec![1.0; 4], 4);
        let st = SampleStieltjes::new(&s, 0).unwrap();
        assert_abs_diff_eq!(st.m_real(2.0).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn stieltjes_zero_padding_hand_sum() {
        let s = spectrum_from(vec![4.0, 3.0, 2.0, 1.0], 8);
        let st = SampleStieltjes::new(&s, 0).unwrap();
        let want = (1.0 / (4.0 - 10.0) + 1.0 / (3.0 - 10.0) + 1.0 / (2.0 - 10.0)
            + 1.0 / (1.0 - 10.0)
            + 4.0 / (0.0 - 10.0))
            / 8.0;
        assert_abs_diff_eq!(st.m_real(10.0).unwrap(), want, epsilon = 1e-15);
        assert!(st.m_hat(2.5).im > 0.0);
    }

    #[test]
    fn spike_quantities_hand_sum() {
        let s = spectrum_from(vec![12.0, 3.0, 2.0, 1.0], 8);
        let st = SampleStieltjes::new(&s, 1).unwrap();
        let sp = st.spikes()[0];
        let terms = [3.0, 2.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let m: f64 = terms.iter().map(|l| 1.0 / (l - 12.0)).sum::<f64>() / 8.0;
        let mp: f64 = terms.iter().map(|l| 1.0 / (l - 12.0_f64).powi(2)).sum::<f64>() / 8.0;
        assert_abs_diff_eq!(sp.m, m, epsilon = 1e-15);
        assert_abs_diff_eq!(sp.m_prime, mp, epsilon = 1e-15);
        assert_abs_diff_eq!(sp.spike, -1.0 / m, epsilon = 1e-12);
        assert_abs_diff_eq!(sp.alignment, 1.0 / (12.0 * mp), epsilon = 1e-12);
    }

    #[test]
    fn rank_ignores_null_block() {
        // p > n: trailing zeros never enter the rule.
        let mut v: Vec<f64> = vec![20.0];
        v.extend((0..99).map(|i| 4.0 - 3.0 * (i as f64 / 98.0).powf(0.7)));
        v.extend(std::iter::repeat_n(0.0, 50));
        let s = spectrum_from(v.clone(), 100);
        let r1 = estimate_rank(&s);
        v.truncate(100);
        let s2 = spectrum_from(v, 200);
        assert_eq!(r1, estimate_rank(&s2));
    }

    #[test]
    fn oracle_spectrum_is_exact() {
        let truth = PopulationSpectrum::two_atom(6, 12, 3.0, 1.0).unwrap();
        let s = spectrum_from(vec![5.0, 4.0, 3.0, 2.0, 1.0, 0.5], 12);
        let est = estimate_population_spectrum(&s, 0, SpectrumMethod::Oracle, Some(&truth)).unwrap();
        assert_eq!(est.values(), truth.values());
        assert!(estimate_population_spectrum(&s, 0, SpectrumMethod::Oracle, None).is_err());
    }
}
