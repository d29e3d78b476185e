//! Density, cumulative mass and quantiles of the deformed MP law.

use std::f64::consts::PI;

use log::debug;
use serde::Serialize;

use super::interp::Pchip;
use super::{MpLaw, SpectralEdges, ETA_FLOOR};
use crate::error::{Error, Result};
use crate::C64;

const BASE_PANELS: usize = 4096;
const MAX_PANELS: usize = 1 << 16;

/// Cumulative mass of one bulk from its upper edge down. The bulk is cut at
/// its density dips into pieces `[b_{k+1}, b_k]`, and piece `k` uses the
/// substitution `E = b_k - (b_k - b_{k+1}) (1 - cos t) / 2` with
/// `s = k pi + t`, so nodes cluster at the edges and at the dips.
#[derive(Debug, Clone, Serialize)]
pub struct BulkQuadrature {
    pub lower: f64,
    pub upper: f64,
    /// Piece boundaries, descending from `upper` to `lower`.
    pub breaks: Vec<f64>,
    /// Sample eigenvalues attributed to the bulk.
    pub count: usize,
    /// Integrated mass (n-normalized), before rescaling to `count / n`.
    pub mass: f64,
    /// Richardson estimate of the Simpson error on `mass`.
    pub error_estimate: f64,
    /// Panels per piece.
    pub panels: usize,
    /// `(E, density)` at the panel ends, descending in `E`.
    pub grid: Vec<(f64, f64)>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl BulkQuadrature {
    fn energy(&self, s: f64) -> f64 {
        piecewise_energy(&self.breaks, s)
    }
}

#[derive(Debug, Clone)]
pub struct MpLawTable {
    law: MpLaw,
    edges: SpectralEdges,
    bulks: Vec<BulkQuadrature>,
    quantiles: Vec<f64>,
}

impl MpLawTable {
    pub fn build(law: MpLaw) -> Result<Self> {
        let edges = law.find_edges()?;
        let tol = 1e-9 / law.n() as f64;
        let mut bulks = Vec::with_capacity(edges.bulks());
        for k in 0..edges.bulks() {
            let (lower, upper) = edges.bulk(k);
            bulks.push(integrate_bulk(&law, lower, upper, edges.bulk_counts[k], tol)?);
        }
        let quantiles = bulk_quantiles(&bulks, law.n());
        debug!(
            "mp table: {} bulks, edges {:?}, counts {:?}",
            edges.bulks(),
            edges.edges,
            edges.bulk_counts
        );
        Ok(Self {
            law,
            edges,
            bulks,
            quantiles,
        })
    }

    pub fn law(&self) -> &MpLaw {
        &self.law
    }

    pub fn edges(&self) -> &SpectralEdges {
        &self.edges
    }

    pub fn bulks(&self) -> &[BulkQuadrature] {
        &self.bulks
    }

    pub fn upper_edge(&self) -> f64 {
        self.edges.upper_edge()
    }

    /// Mass of the atom at zero, `(1 - p/n)_+`.
    pub fn zero_atom_mass(&self) -> f64 {
        (1.0 - self.law.ratio()).max(0.0)
    }

    /// Classical locations `gamma_1 >= ... >= gamma_K`, `K = min(p, n)`.
    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    /// `gamma_k` for 1-based `k`; zero past `min(p, n)`.
    pub fn quantile(&self, k: usize) -> f64 {
        assert!(k >= 1, "quantile index is 1-based");
        self.quantiles.get(k - 1).copied().unwrap_or(0.0)
    }

    /// Limiting density at `e` (n-normalized, atom at zero excluded).
    pub fn density(&self, e: f64) -> Result<f64> {
        match self.edges.bulk_of(e) {
            Some(k) => {
                let (lo, hi) = self.edges.bulk(k);
                if e == lo || e == hi {
                    return Ok(0.0);
                }
                Ok(boundary_m(&self.law, e, None)?.im.max(0.0) / PI)
            }
            None => Ok(0.0),
        }
    }

    /// `m(x)` for real `x >= 0`: the boundary value `m(x + i0)` on the support and
    /// the real branch with `h' > 0` off it.
    pub fn m(&self, x: f64) -> Result<C64> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("m(x) on the real axis needs x >= 0, got {x}")));
        }
        if x == 0.0 {
            return self.law.m_at_zero().map(|v| C64::new(v, 0.0));
        }
        let e = &self.edges;
        if let Some(k) = e.bulk_of(x) {
            let (lo, hi) = e.bulk(k);
            if x == hi {
                return Ok(C64::new(e.critical[2 * k], 0.0));
            }
            if x == lo {
                return Ok(C64::new(e.critical[2 * k + 1], 0.0));
            }
            return boundary_m(&self.law, x, None);
        }
        let a = &e.edges;
        let b = &e.critical;
        let law = &self.law;
        let real = if x > a[0] {
            // h -> +inf as m -> 0-.
            let mut hi = 0.5 * b[0];
            while law.h_real_raw(hi).0 < x {
                hi *= 0.5;
            }
            law.invert_increasing(x, b[0], hi)?
        } else if x < *a.last().unwrap() {
            let last = *b.last().unwrap();
            if law.ratio() < 1.0 {
                let mut step = last.abs().max(1.0);
                let mut lo = last - step;
                while law.h_real_raw(lo).0 > x {
                    step *= 2.0;
                    lo = last - step;
                }
                law.invert_increasing(x, lo, last)?
            } else {
                let mut lo = 0.5 * last;
                while law.h_real_raw(lo).0 > x {
                    lo *= 0.5;
                }
                law.invert_increasing(x, lo, last)?
            }
        } else {
            // Gap between bulk k (above) and bulk k + 1.
            let k = (0..e.bulks() - 1)
                .find(|&k| x < a[2 * k + 1] && x > a[2 * k + 2])
                .ok_or_else(|| Error::Bracketing(format!("no gap contains {x}")))?;
            law.invert_increasing(x, b[2 * k + 2], b[2 * k + 1])?
        };
        Ok(C64::new(real, 0.0))
    }
}

impl MpLaw {
    /// `m(0)` for `p > n`: the positive root of `h(m) = 0`.
    ///
    /// Satisfies `sum_j 1 / (1 + m(0) sigma_j) = p - n`.
    pub fn m_at_zero(&self) -> Result<f64> {
        if self.ratio() <= 1.0 {
            return Err(Error::Domain(
                "m(0) is finite only for p > n (atom at zero otherwise)".into(),
            ));
        }
        // h < 0 exactly on (0, m(0)).
        let scale = self.atoms.iter().map(|a| a.inv).fold(f64::INFINITY, f64::min);
        let mut hi = scale;
        while self.h_real_raw(hi).0 <= 0.0 {
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::Bracketing("m(0) not bracketed".into()));
            }
        }
        let mut lo = hi;
        while self.h_real_raw(lo).0 >= 0.0 {
            lo *= 0.5;
        }
        // h is increasing on the bracket (h' > 0 between 0 and the low-edge
        // critical point, which lies beyond m(0)).
        let mut m = 0.5 * (lo + hi);
        for _ in 0..300 {
            m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            if self.h_real_raw(m).0 < 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        Ok(m)
    }
}

/// Boundary value `m(e + i0)` at an interior point of the support.
pub(crate) fn boundary_m(law: &MpLaw, e: f64, seed: Option<C64>) -> Result<C64> {
    if let Some(s) = seed {
        if let Some(m) = law.polish_on_axis(e, s) {
            return Ok(m);
        }
    }
    let sol = law.solve_m_seeded(C64::new(e, ETA_FLOOR), seed)?;
    Ok(law.polish_on_axis(e, sol.m).unwrap_or_else(|| {
        debug!("axis polish failed at {e}; keeping Im z = {ETA_FLOOR} value");
        sol.m
    }))
}

/// `E(s)` for the piecewise cosine substitution on `breaks`.
fn piecewise_energy(breaks: &[f64], s: f64) -> f64 {
    let k = ((s / PI).max(0.0) as usize).min(breaks.len() - 2);
    let t = s - k as f64 * PI;
    let (hi, lo) = (breaks[k], breaks[k + 1]);
    hi - 0.5 * (hi - lo) * (1.0 - t.cos())
}

fn integrate_bulk(law: &MpLaw, lower: f64, upper: f64, count: usize, tol: f64) -> Result<BulkQuadrature> {
    let mut breaks = vec![upper];
    breaks.extend(law.density_dips(lower, upper));
    breaks.push(lower);
    let pieces = breaks.len() - 1;
    if pieces > 1 {
        debug!("bulk [{lower}, {upper}] cut at density dips {:?}", &breaks[1..pieces]);
    }
    let mut panels = BASE_PANELS;
    loop {
        // 2 * panels + 1 nodes per piece: panel ends and midpoints.
        let nodes = 2 * panels;
        let dt = PI / nodes as f64;
        let total = pieces * nodes;
        let mut g = vec![0.0; total + 1];
        let mut rho = vec![0.0; total + 1];
        let mut seed: Option<C64> = None;
        for j in 1..total {
            let (hi, lo) = (breaks[j / nodes], breaks[j / nodes + 1]);
            let t = (j % nodes) as f64 * dt;
            let e = piecewise_energy(&breaks, j as f64 * dt);
            if e <= lower || e >= upper {
                continue;
            }
            let m = boundary_m(law, e, seed)?;
            seed = Some(m);
            rho[j] = m.im.max(0.0) / PI;
            g[j] = rho[j] * 0.5 * (hi - lo) * t.sin();
        }
        let h = 2.0 * dt;
        let mut cumulative = Vec::with_capacity(pieces * panels + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for i in 0..pieces * panels {
            acc += h / 6.0 * (g[2 * i] + 4.0 * g[2 * i + 1] + g[2 * i + 2]);
            cumulative.push(acc);
        }
        let coarse: f64 = (0..pieces * panels / 2)
            .map(|i| 2.0 * h / 6.0 * (g[4 * i] + 4.0 * g[4 * i + 2] + g[4 * i + 4]))
            .sum();
        let error_estimate = (acc - coarse).abs() / 15.0;
        if error_estimate <= tol || panels >= MAX_PANELS {
            if error_estimate > tol {
                return Err(Error::Quadrature {
                    achieved: error_estimate,
                    requested: tol,
                });
            }
            let grid = (0..=pieces * panels)
                .map(|i| (piecewise_energy(&breaks, i as f64 * h), rho[2 * i]))
                .collect();
            return Ok(BulkQuadrature {
                lower,
                upper,
                breaks,
                count,
                mass: acc,
                error_estimate,
                panels,
                grid,
                cumulative,
            });
        }
        panels *= 2;
    }
}

/// Solves `int_{gamma_k}^inf rho = (k - 1/2) / n` bulk by bulk, inverting the
/// cumulative table with a monotone cubic in the angle variable.
fn bulk_quantiles(bulks: &[BulkQuadrature], n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut out = Vec::new();
    let mut offset = 0usize;
    for b in bulks {
        let target_mass = b.count as f64 / nf;
        let scale = if b.mass > 0.0 { target_mass / b.mass } else { 1.0 };
        let h = PI / b.panels as f64;
        let mut xs = Vec::with_capacity(b.cumulative.len());
        let mut ys = Vec::with_capacity(b.cumulative.len());
        for (i, &c) in b.cumulative.iter().enumerate() {
            let c = c * scale;
            if xs.last().is_some_and(|&last| c <= last) {
                continue;
            }
            xs.push(c);
            ys.push(i as f64 * h);
        }
        if xs.len() < 2 {
            out.extend(std::iter::repeat_n(0.5 * (b.lower + b.upper), b.count));
        } else {
            let inv = Pchip::new(xs, ys);
            for local in 0..b.count {
                let mass = (local as f64 + 0.5) / nf;
                out.push(b.energy(inv.eval(mass)));
            }
        }
        offset += b.count;
    }
    debug_assert_eq!(offset, out.len());
    out
}
