use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::theory::{Ell, LossKind};

/// What a shrinker curve estimates: one moment `u_i^T ell(Sigma) u_i`, or the
/// optimal shrinker of a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveTarget {
    Ell(Ell),
    Loss(LossKind),
}

impl CurveTarget {
    pub fn loss(self) -> Option<LossKind> {
        match self {
            CurveTarget::Loss(l) => Some(l),
            CurveTarget::Ell(_) => None,
        }
    }

    pub fn ell(self) -> Option<Ell> {
        match self {
            CurveTarget::Ell(e) => Some(e),
            CurveTarget::Loss(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportRow {
    /// 1-based sample index.
    pub index: usize,
    pub empirical: Option<f64>,
    pub estimated: f64,
    pub theoretical: Option<f64>,
}

/// Per-index shrinker values; indices past `min(p, n)` share one value.
#[derive(Debug, Clone, Serialize)]
pub struct ShrinkerReport {
    pub target: CurveTarget,
    pub rows: Vec<ReportRow>,
    pub risk_pred: Option<f64>,
    pub risk_emp: Option<f64>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    index: usize,
    empirical: Option<f64>,
    estimated: f64,
    theoretical: Option<f64>,
    loss: &'a str,
    ell: &'a str,
}

impl ShrinkerReport {
    pub fn new(
        target: CurveTarget,
        estimated: &[f64],
        empirical: Option<&[f64]>,
        theoretical: Option<&[f64]>,
    ) -> Result<Self> {
        let p = estimated.len();
        for (name, v) in [("empirical", empirical), ("theoretical", theoretical)] {
            if v.is_some_and(|v| v.len() != p) {
                return Err(Error::Config(format!("{name} column length differs from p = {p}")));
            }
        }
        if let Some(i) = estimated.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "estimated shrinker {} is {}",
                i + 1,
                estimated[i]
            )));
        }
        let rows = (0..p)
            .map(|i| ReportRow {
                index: i + 1,
                empirical: empirical.map(|v| v[i]),
                estimated: estimated[i],
                theoretical: theoretical.map(|v| v[i]),
            })
            .collect();
        Ok(Self {
            target,
            rows,
            risk_pred: None,
            risk_emp: None,
        })
    }

    /// Columns `index, empirical, estimated, theoretical, loss, ell`; missing
    /// values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let loss = self.target.loss().map_or("", |l| l.label());
        let ell = self.target.ell().map_or("", |e| e.label());
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(CsvRow {
                index: r.index,
                empirical: r.empirical,
                estimated: r.estimated,
                theoretical: r.theoretical,
                loss,
                ell,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let report = ShrinkerReport::new(
            CurveTarget::Ell(Ell::Inverse),
            &[1.5, 0.5],
            Some(&[1.0, 2.0]),
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "index,empirical,estimated,theoretical,loss,ell\n1,1.0,1.5,,,xinv\n2,2.0,0.5,,,xinv\n"
        );
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ShrinkerReport::new(CurveTarget::Ell(Ell::Log), &[f64::NAN], None, None).is_err());
        assert!(ShrinkerReport::new(CurveTarget::Ell(Ell::Log), &[1.0], Some(&[]), None).is_err());
    }
}
