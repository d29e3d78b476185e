//! Loss evaluation and risk formulas.
//!
//! With `Sigma = V diag(sigma) V^T` and an estimate `U diag(phi) U^T`, every loss
//! reduces to traces `sum_ij f(sigma_i) g(phi_j) (v_i . u_j)^2`, so only the
//! squared overlap matrix is needed.

use log::warn;
use nalgebra::DMatrix;
use serde::Serialize;

use super::{Ell, LossKind, Moments};
use crate::error::{Error, Result};

/// `(v_i . u_j)^2`, population directions in rows, estimate directions in columns.
#[derive(Debug, Clone)]
pub struct OverlapSquares {
    w2: DMatrix<f64>,
}

impl OverlapSquares {
    /// `population = None` stands for the canonical basis.
    pub fn new(population: Option<&DMatrix<f64>>, estimate: &DMatrix<f64>) -> Self {
        let w = match population {
            Some(v) => v.tr_mul(estimate),
            None => estimate.clone(),
        };
        Self {
            w2: w.map(|x| x * x),
        }
    }

    pub fn dim(&self) -> usize {
        self.w2.nrows()
    }

    /// `sum_i f(sigma_i) (v_i . u_j)^2` for every column `j`.
    pub fn column_forms(&self, sigma: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
        let fs: Vec<f64> = sigma.iter().map(|&s| f(s)).collect();
        self.w2
            .column_iter()
            .map(|col| col.iter().zip(&fs).map(|(w, v)| w * v).sum())
            .collect()
    }

    fn cross(&self, sigma: &[f64], f: impl Fn(f64) -> f64, phi: &[f64], g: impl Fn(f64) -> f64) -> f64 {
        self.column_forms(sigma, f)
            .iter()
            .zip(phi)
            .map(|(t, &x)| t * g(x))
            .sum()
    }
}

/// `u_j^T f(Sigma) u_j` for `j < k`; the remaining `p - k` directions share the
/// trace average over their span.
pub fn quadratic_forms(
    sigma: &[f64],
    overlaps: &OverlapSquares,
    k: usize,
    f: impl Fn(f64) -> f64,
) -> Vec<f64> {
    let mut q = overlaps.column_forms(sigma, f);
    let p = q.len();
    if k < p {
        let avg = q[k..].iter().sum::<f64>() / (p - k) as f64;
        q[k..].iter_mut().for_each(|v| *v = avg);
    }
    q
}

/// Loss value; `clamped` marks a negative radicand set to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskValue {
    pub value: f64,
    pub clamped: bool,
}

fn root(radicand: f64, what: &str) -> RiskValue {
    if radicand < 0.0 {
        warn!("{what}: negative radicand {radicand:.3e} clamped to zero");
        RiskValue {
            value: 0.0,
            clamped: true,
        }
    } else {
        RiskValue {
            value: radicand.sqrt(),
            clamped: false,
        }
    }
}

fn plain(value: f64) -> RiskValue {
    RiskValue {
        value,
        clamped: false,
    }
}

fn require_positive(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        Some(i) => Err(Error::Numerical(format!(
            "{what}: entry {} is {} (needs > 0)",
            i + 1,
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Loss between `Sigma` and `U diag(phi) U^T`, normalized as in the loss table
/// (Frobenius-type losses divided by `sqrt(p)`, trace losses by `p` or by the
/// matching trace).
pub fn loss_value(
    loss: LossKind,
    sigma: &[f64],
    phi: &[f64],
    overlaps: &OverlapSquares,
) -> Result<f64> {
    let p = sigma.len();
    if phi.len() != p || overlaps.dim() != p {
        return Err(Error::Config("loss_value: dimension mismatch".into()));
    }
    require_positive(sigma, "population eigenvalue")?;
    let pf = p as f64;
    let sum = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>();
    let cross = |f: &dyn Fn(f64) -> f64, g: &dyn Fn(f64) -> f64| overlaps.cross(sigma, f, phi, g);
    let needs_positive = !matches!(loss, LossKind::Frobenius);
    if needs_positive {
        require_positive(phi, "shrinker")?;
    }
    let id = |x: f64| x;
    let inv = |x: f64| 1.0 / x;
    let value = match loss {
        LossKind::Frobenius => {
            let v = sum(sigma, &|x| x * x) + sum(phi, &|x| x * x) - 2.0 * cross(&id, &id);
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::InverseFrobenius => {
            let v = sum(sigma, &|x| 1.0 / (x * x)) + sum(phi, &|x| 1.0 / (x * x))
                - 2.0 * cross(&inv, &inv);
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::Disutility => {
            let num = cross(&id, &|x| 1.0 / (x * x)) - 2.0 * sum(phi, &inv) + sum(sigma, &inv);
            num / sum(sigma, &inv)
        }
        LossKind::InverseStein => {
            let logdet = sum(sigma, &f64::ln) - sum(phi, &f64::ln);
            (cross(&id, &inv) - pf - logdet) / pf
        }
        LossKind::Stein => {
            let logdet = sum(phi, &f64::ln) - sum(sigma, &f64::ln);
            (cross(&inv, &id) - pf - logdet) / pf
        }
        LossKind::MinimumVariance => {
            let tr_inv = sum(phi, &inv);
            pf * cross(&id, &|x| 1.0 / (x * x)) / (tr_inv * tr_inv) - pf / sum(sigma, &inv)
        }
        LossKind::WeightedFrobenius => {
            (cross(&inv, &|x| x * x) - 2.0 * sum(phi, &id) + sum(sigma, &id)) / sum(sigma, &id)
        }
        LossKind::InverseQuadratic => {
            let v = cross(&|x| x * x, &|x| 1.0 / (x * x)) - 2.0 * cross(&id, &inv) + pf;
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::Quadratic => {
            let v = cross(&|x| 1.0 / (x * x), &|x| x * x) - 2.0 * cross(&inv, &id) + pf;
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::Frechet => {
            let v = sum(phi, &id) + sum(sigma, &id) - 2.0 * cross(&f64::sqrt, &f64::sqrt);
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::LogEuclidean => {
            let v = sum(phi, &|x| x.ln().powi(2)) + sum(sigma, &|x| x.ln().powi(2))
                - 2.0 * cross(&f64::ln, &f64::ln);
            v.max(0.0).sqrt() / pf.sqrt()
        }
        LossKind::SymmetrizedStein => (cross(&inv, &id) + cross(&id, &inv) - 2.0 * pf) / pf,
    };
    Ok(value)
}

/// Risk expressed through per-index moments `theta(ell)`: the limiting risk when
/// the moments are the limiting shrinker values, and the exact loss of the
/// optimal estimator when they are the sample quadratic forms.
pub fn risk_from_moments(loss: LossKind, sigma: &[f64], moments: &Moments) -> Result<RiskValue> {
    let p = sigma.len();
    let pf = p as f64;
    require_positive(sigma, "population eigenvalue")?;
    let get = |e: Ell| -> Result<&[f64]> {
        let v = moments.get(e)?;
        if v.len() != p {
            return Err(Error::Config(format!(
                "{e} moments have length {}, expected {p}",
                v.len()
            )));
        }
        Ok(v)
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / pf;
    let sum_map = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>();
    let label = loss.label();
    Ok(match loss {
        LossKind::Frobenius => {
            let t = get(Ell::Identity)?;
            root(
                (sum_map(sigma, &|x| x * x) - sum_map(t, &|x| x * x)) / pf,
                label,
            )
        }
        LossKind::InverseStein => {
            let t = get(Ell::Identity)?;
            require_positive(t, label)?;
            plain(t.iter().zip(sigma).map(|(a, s)| (a / s).ln()).sum::<f64>() / pf)
        }
        LossKind::Disutility => {
            let t = get(Ell::Identity)?;
            require_positive(t, label)?;
            plain(1.0 - sum_map(t, &|x| 1.0 / x) / sum_map(sigma, &|x| 1.0 / x))
        }
        LossKind::MinimumVariance => {
            let t = get(Ell::Identity)?;
            require_positive(t, label)?;
            plain(pf * (1.0 / sum_map(t, &|x| 1.0 / x) - 1.0 / sum_map(sigma, &|x| 1.0 / x)))
        }
        LossKind::InverseFrobenius => {
            let t = get(Ell::Inverse)?;
            root(
                (sum_map(sigma, &|x| 1.0 / (x * x)) - sum_map(t, &|x| x * x)) / pf,
                label,
            )
        }
        LossKind::Stein => {
            let t = get(Ell::Inverse)?;
            require_positive(t, label)?;
            plain(t.iter().zip(sigma).map(|(a, s)| (a * s).ln()).sum::<f64>() / pf)
        }
        LossKind::WeightedFrobenius => {
            let t = get(Ell::Inverse)?;
            require_positive(t, label)?;
            plain(1.0 - sum_map(t, &|x| 1.0 / x) / sum_map(sigma, &|x| x))
        }
        LossKind::Frechet => {
            let t = get(Ell::Sqrt)?;
            root(mean(sigma) - sum_map(t, &|x| x * x) / pf, label)
        }
        LossKind::LogEuclidean => {
            let t = get(Ell::Log)?;
            root(
                (sum_map(sigma, &|x| x.ln().powi(2)) - sum_map(t, &|x| x * x)) / pf,
                label,
            )
        }
        LossKind::Quadratic => {
            let (t1, t2) = (get(Ell::InverseSquare)?, get(Ell::Inverse)?);
            require_positive(t1, label)?;
            let s: f64 = t2.iter().zip(t1).map(|(b, a)| b * b / a).sum();
            root(1.0 - s / pf, label)
        }
        LossKind::InverseQuadratic => {
            let (t3, t4) = (get(Ell::Identity)?, get(Ell::Square)?);
            require_positive(t4, label)?;
            let s: f64 = t3.iter().zip(t4).map(|(a, b)| a * a / b).sum();
            root(1.0 - s / pf, label)
        }
        LossKind::SymmetrizedStein => {
            let (t2, t3) = (get(Ell::Inverse)?, get(Ell::Identity)?);
            require_positive(t2, label)?;
            require_positive(t3, label)?;
            let s: f64 = t2.iter().zip(t3).map(|(a, b)| (a * b).sqrt()).sum();
            plain(2.0 * (s / pf - 1.0))
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RiskDecomposition {
    /// Loss of the optimal estimator, evaluated from the matrices.
    pub direct: f64,
    /// The same loss through the moment formula.
    pub identity: f64,
    pub shrinkers: Vec<f64>,
}

/// Optimal shrinkers for `loss` on the basis behind `overlaps` (first `k`
/// directions individually, the rest through their trace average), and the
/// resulting loss computed two ways.
pub fn exact_risk_decomposition(
    loss: LossKind,
    sigma: &[f64],
    overlaps: &OverlapSquares,
    k: usize,
) -> Result<RiskDecomposition> {
    let moments: Moments = Ell::ALL
        .into_iter()
        .filter(|e| loss.ells().contains(e))
        .map(|e| (e, quadratic_forms(sigma, overlaps, k, |x| e.apply(x))))
        .collect();
    let shrinkers = loss.shrinkers(&moments)?;
    let direct = loss_value(loss, sigma, &shrinkers, overlaps)?;
    let identity = risk_from_moments(loss, sigma, &moments)?.value;
    Ok(RiskDecomposition {
        direct,
        identity,
        shrinkers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_orthogonal, spectral_function, sym_function};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Loss straight from the dense matrices, as written in the loss table.
    fn dense_loss(loss: LossKind, s: &DMatrix<f64>, e: &DMatrix<f64>) -> f64 {
        let p = s.nrows() as f64;
        let id = DMatrix::<f64>::identity(s.nrows(), s.nrows());
        let inv = |m: &DMatrix<f64>| m.clone().try_inverse().unwrap();
        let fro = |m: &DMatrix<f64>| m.norm();
        let logdet = |m: &DMatrix<f64>| m.clone().lu().determinant().ln();
        match loss {
            LossKind::Frobenius => fro(&(s - e)) / p.sqrt(),
            LossKind::Disutility => {
                let d = inv(e) - inv(s);
                (&d * &d * s).trace() / inv(s).trace()
            }
            LossKind::InverseStein => {
                let a = inv(e) * s;
                ((&a - &id).trace() - logdet(&a)) / p
            }
            LossKind::MinimumVariance => {
                let ei = inv(e);
                p * (&ei * s * &ei).trace() / ei.trace().powi(2) - p / inv(s).trace()
            }
            LossKind::Stein => {
                let a = e * inv(s);
                ((&a - &id).trace() - logdet(&a)) / p
            }
            LossKind::WeightedFrobenius => {
                let d = e - s;
                (&d * &d * inv(s)).trace() / s.trace()
            }
            LossKind::InverseQuadratic => fro(&(inv(e) * s - &id)) / p.sqrt(),
            LossKind::Quadratic => fro(&(inv(s) * e - &id)) / p.sqrt(),
            LossKind::Frechet => {
                let a = sym_function(e, f64::sqrt).unwrap() - sym_function(s, f64::sqrt).unwrap();
                fro(&a) / p.sqrt()
            }
            LossKind::LogEuclidean => {
                let a = sym_function(e, f64::ln).unwrap() - sym_function(s, f64::ln).unwrap();
                fro(&a) / p.sqrt()
            }
            LossKind::SymmetrizedStein => {
                (e * inv(s) + inv(e) * s - 2.0 * &id).trace() / p
            }
            LossKind::InverseFrobenius => fro(&(inv(s) - inv(e))) / p.sqrt(),
        }
    }

    #[test]
    fn overlap_route_matches_dense_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = 12;
        let v = random_orthogonal(p, &mut rng);
        let u = random_orthogonal(p, &mut rng);
        let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.3..4.0)).collect();
        let phi: Vec<f64> = (0..p).map(|_| rng.random_range(0.3..4.0)).collect();
        let s = spectral_function(&v, &sigma, |x| x);
        let e = spectral_function(&u, &phi, |x| x);
        let w = OverlapSquares::new(Some(&v), &u);
        for loss in LossKind::ALL {
            let fast = loss_value(loss, &sigma, &phi, &w).unwrap();
            let slow = dense_loss(loss, &s, &e);
            assert_relative_eq!(fast, slow, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn decomposition_identities_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for (p, k) in [(10, 10), (10, 6)] {
            let v = random_orthogonal(p, &mut rng);
            let u = random_orthogonal(p, &mut rng);
            let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.2..5.0)).collect();
            let w = OverlapSquares::new(Some(&v), &u);
            let s = spectral_function(&v, &sigma, |x| x);
            for loss in LossKind::ALL {
                let d = exact_risk_decomposition(loss, &sigma, &w, k).unwrap();
                assert_relative_eq!(d.direct, d.identity, max_relative = 1e-8, epsilon = 1e-12);
                let e = spectral_function(&u, &d.shrinkers, |x| x);
                assert_relative_eq!(d.direct, dense_loss(loss, &s, &e), max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn optimal_shrinkers_never_lose_to_the_sample_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = 8;
        let v = random_orthogonal(p, &mut rng);
        let u = random_orthogonal(p, &mut rng);
        let sigma: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..3.0)).collect();
        let naive: Vec<f64> = (0..p).map(|_| rng.random_range(0.5..3.0)).collect();
        let w = OverlapSquares::new(Some(&v), &u);
        let opt = exact_risk_decomposition(LossKind::Frobenius, &sigma, &w, p).unwrap();
        assert!(opt.direct <= loss_value(LossKind::Frobenius, &sigma, &naive, &w).unwrap());
    }

    #[test]
    fn negative_radicand_is_clamped() {
        let m: Moments = [(Ell::Identity, vec![2.0, 2.0])].into_iter().collect();
        let r = risk_from_moments(LossKind::Frobenius, &[1.0, 1.0], &m).unwrap();
        assert!(r.clamped);
        assert_eq!(r.value, 0.0);
    }
}
