//! Loss functions, moment functions and the limiting shrinkers.

mod limits;
mod risk;

pub use limits::{OutlierAsymptotics, SpikedTheory};
pub use risk::{
    exact_risk_decomposition, loss_value, quadratic_forms, risk_from_moments, OverlapSquares,
    RiskDecomposition, RiskValue,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spectral function applied to the population covariance, `u^T ell(Sigma) u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ell {
    Identity,
    Inverse,
    Sqrt,
    Log,
    Square,
    InverseSquare,
}

impl Ell {
    pub const ALL: [Ell; 6] = [
        Ell::Identity,
        Ell::Inverse,
        Ell::Sqrt,
        Ell::Log,
        Ell::Square,
        Ell::InverseSquare,
    ];

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Ell::Identity => x,
            Ell::Inverse => 1.0 / x,
            Ell::Sqrt => x.sqrt(),
            Ell::Log => x.ln(),
            Ell::Square => x * x,
            Ell::InverseSquare => 1.0 / (x * x),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ell::Identity => "x",
            Ell::Inverse => "xinv",
            Ell::Sqrt => "sqrt",
            Ell::Log => "log",
            Ell::Square => "x2",
            Ell::InverseSquare => "xinv2",
        }
    }
}

impl fmt::Display for Ell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Ell {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ell::ALL
            .into_iter()
            .find(|e| e.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown ell '{s}' (x|xinv|sqrt|log|x2|xinv2)")))
    }
}

/// The twelve losses. Each has an optimal shrinker built from one or two
/// quadratic forms `u^T ell(Sigma) u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    Frobenius,
    InverseStein,
    Disutility,
    MinimumVariance,
    Stein,
    WeightedFrobenius,
    InverseQuadratic,
    Quadratic,
    Frechet,
    LogEuclidean,
    SymmetrizedStein,
    InverseFrobenius,
}

impl LossKind {
    pub const ALL: [LossKind; 12] = [
        LossKind::Frobenius,
        LossKind::InverseStein,
        LossKind::Disutility,
        LossKind::MinimumVariance,
        LossKind::Stein,
        LossKind::WeightedFrobenius,
        LossKind::InverseQuadratic,
        LossKind::Quadratic,
        LossKind::Frechet,
        LossKind::LogEuclidean,
        LossKind::SymmetrizedStein,
        LossKind::InverseFrobenius,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LossKind::Frobenius => "frobenius",
            LossKind::InverseStein => "inverse-stein",
            LossKind::Disutility => "disutility",
            LossKind::MinimumVariance => "minimum-variance",
            LossKind::Stein => "stein",
            LossKind::WeightedFrobenius => "weighted-frobenius",
            LossKind::InverseQuadratic => "inverse-quadratic",
            LossKind::Quadratic => "quadratic",
            LossKind::Frechet => "frechet",
            LossKind::LogEuclidean => "log-euclidean",
            LossKind::SymmetrizedStein => "symmetrized-stein",
            LossKind::InverseFrobenius => "inverse-frobenius",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            LossKind::Frobenius => &["fro"],
            LossKind::InverseStein => &["instein"],
            LossKind::Disutility => &["disu"],
            LossKind::MinimumVariance => &["mv"],
            LossKind::Stein => &[],
            LossKind::WeightedFrobenius => &["wfro"],
            LossKind::InverseQuadratic => &["inqu"],
            LossKind::Quadratic => &["qu"],
            LossKind::Frechet => &[],
            LossKind::LogEuclidean => &["le"],
            LossKind::SymmetrizedStein => &["symstein"],
            LossKind::InverseFrobenius => &["infro"],
        }
    }

    /// Moment functions the optimal shrinker is built from.
    pub fn ells(self) -> &'static [Ell] {
        match self {
            LossKind::Frobenius
            | LossKind::InverseStein
            | LossKind::Disutility
            | LossKind::MinimumVariance => &[Ell::Identity],
            LossKind::Stein | LossKind::WeightedFrobenius | LossKind::InverseFrobenius => {
                &[Ell::Inverse]
            }
            LossKind::SymmetrizedStein => &[Ell::Inverse, Ell::Identity],
            LossKind::LogEuclidean => &[Ell::Log],
            LossKind::Frechet => &[Ell::Sqrt],
            LossKind::Quadratic => &[Ell::InverseSquare, Ell::Inverse],
            LossKind::InverseQuadratic => &[Ell::Square, Ell::Identity],
        }
    }

    /// Optimal shrinker from the moments `u^T ell(Sigma) u` of one direction.
    pub fn shrinker_from_moments(self, moments: &BTreeMap<Ell, f64>) -> Result<f64> {
        self.combine(|e| {
            moments
                .get(&e)
                .copied()
                .ok_or_else(|| Error::Config(format!("{} needs the {e} moment", self.label())))
        })
    }

    pub(crate) fn combine(self, m: impl Fn(Ell) -> Result<f64>) -> Result<f64> {
        let positive = |e: Ell| -> Result<f64> {
            let v = m(e)?;
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Numerical(format!(
                    "{} shrinker needs a positive {e} moment, got {v}",
                    self.label()
                )))
            }
        };
        Ok(match self {
            LossKind::Frobenius
            | LossKind::InverseStein
            | LossKind::Disutility
            | LossKind::MinimumVariance => m(Ell::Identity)?,
            LossKind::Stein | LossKind::WeightedFrobenius | LossKind::InverseFrobenius => {
                1.0 / positive(Ell::Inverse)?
            }
            LossKind::SymmetrizedStein => {
                (positive(Ell::Identity)? / positive(Ell::Inverse)?).sqrt()
            }
            LossKind::LogEuclidean => m(Ell::Log)?.exp(),
            LossKind::Frechet => m(Ell::Sqrt)?.powi(2),
            LossKind::Quadratic => positive(Ell::Inverse)? / positive(Ell::InverseSquare)?,
            LossKind::InverseQuadratic => positive(Ell::Square)? / positive(Ell::Identity)?,
        })
    }

    /// Per-index shrinkers from per-index moment vectors.
    pub fn shrinkers(self, moments: &Moments) -> Result<Vec<f64>> {
        let len = moments.len()?;
        (0..len)
            .map(|i| self.combine(|e| moments.get(e).map(|v| v[i])))
            .collect()
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        LossKind::ALL
            .into_iter()
            .find(|l| l.label() == key || l.aliases().contains(&key.as_str()))
            .ok_or_else(|| Error::Config(format!("unknown loss '{s}'")))
    }
}

/// Per-index moment vectors keyed by moment function.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Moments(BTreeMap<Ell, Vec<f64>>);

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, ell: Ell, values: Vec<f64>) {
        self.0.insert(ell, values);
    }

    pub fn get(&self, ell: Ell) -> Result<&[f64]> {
        self.0
            .get(&ell)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("missing moments for {ell}")))
    }

    /// Common vector length; errors if empty or ragged.
    pub fn len(&self) -> Result<usize> {
        let mut lens = self.0.values().map(Vec::len);
        let first = lens
            .next()
            .ok_or_else(|| Error::Config("no moments supplied".into()))?;
        if lens.any(|l| l != first) {
            return Err(Error::Config("moment vectors have different lengths".into()));
        }
        Ok(first)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Ell, &[f64])> {
        self.0.iter().map(|(e, v)| (*e, v.as_slice()))
    }
}

impl FromIterator<(Ell, Vec<f64>)> for Moments {
    fn from_iter<T: IntoIterator<Item = (Ell, Vec<f64>)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn moments(pairs: &[(Ell, f64)]) -> BTreeMap<Ell, f64> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn shrinker_rules() {
        let f = LossKind::Frobenius.shrinker_from_moments(&moments(&[(Ell::Identity, 3.2)]));
        assert_abs_diff_eq!(f.unwrap(), 3.2);
        let s = LossKind::Stein.shrinker_from_moments(&moments(&[(Ell::Inverse, 0.5)]));
        assert_abs_diff_eq!(s.unwrap(), 2.0);
        let sym = LossKind::SymmetrizedStein
            .shrinker_from_moments(&moments(&[(Ell::Identity, 4.0), (Ell::Inverse, 1.0)]));
        assert_abs_diff_eq!(sym.unwrap(), 2.0);
        let le = LossKind::LogEuclidean.shrinker_from_moments(&moments(&[(Ell::Log, 0.0)]));
        assert_abs_diff_eq!(le.unwrap(), 1.0);
        let fr = LossKind::Frechet.shrinker_from_moments(&moments(&[(Ell::Sqrt, 1.5)]));
        assert_abs_diff_eq!(fr.unwrap(), 2.25);
        let qu = LossKind::Quadratic
            .shrinker_from_moments(&moments(&[(Ell::Inverse, 0.5), (Ell::InverseSquare, 0.5)]));
        assert_abs_diff_eq!(qu.unwrap(), 1.0);
        let inqu = LossKind::InverseQuadratic
            .shrinker_from_moments(&moments(&[(Ell::Square, 6.0), (Ell::Identity, 2.0)]));
        assert_abs_diff_eq!(inqu.unwrap(), 3.0);
    }

    #[test]
    fn shrinker_errors() {
        assert!(LossKind::Stein
            .shrinker_from_moments(&moments(&[(Ell::Identity, 1.0)]))
            .is_err());
        assert!(LossKind::Stein
            .shrinker_from_moments(&moments(&[(Ell::Inverse, -1.0)]))
            .is_err());
    }

    #[test]
    fn every_loss_declares_the_moments_it_reads() {
        for loss in LossKind::ALL {
            let m: BTreeMap<Ell, f64> = loss.ells().iter().map(|&e| (e, 1.5)).collect();
            assert!(loss.shrinker_from_moments(&m).is_ok(), "{loss}");
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("fro".parse::<LossKind>().unwrap(), LossKind::Frobenius);
        assert_eq!("Stein".parse::<LossKind>().unwrap(), LossKind::Stein);
        assert_eq!("symstein".parse::<LossKind>().unwrap(), LossKind::SymmetrizedStein);
        assert_eq!("xinv2".parse::<Ell>().unwrap(), Ell::InverseSquare);
        assert!("cubic".parse::<Ell>().is_err());
        for loss in LossKind::ALL {
            assert_eq!(loss.label().parse::<LossKind>().unwrap(), loss);
        }
    }
}
