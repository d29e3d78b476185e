//! Deformed Marchenko-Pastur law of `Y^T Y` for a population spectrum.
//!
//! The Stieltjes transform `m(z)` of the limiting spectral measure of the `n x n`
//! companion matrix solves `z = h(m)` with
//! `h(m) = -1/m + (1/n) sum_i 1/(m + 1/sigma_i)` on the branch `Im m > 0`.

mod edges;
mod interp;
mod table;

pub use edges::SpectralEdges;
pub use table::{BulkQuadrature, MpLawTable};

use crate::error::{Error, Result};
use crate::model::PopulationSpectrum;
use crate::C64;

/// Imaginary offset used to seed solves on the real axis.
pub const ETA_FLOOR: f64 = 1e-6;
/// Residual target `|z - h(m)| / max(1, |z|)` for accepted solutions.
pub const RESIDUAL_TOL: f64 = 1e-12;

const FIXED_POINT_SWITCH: f64 = 1e-4;
const FIXED_POINT_MAX_ITER: usize = 500;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy)]
struct Atom {
    sigma: f64,
    /// `-pole`, i.e. `1 / sigma`.
    inv: f64,
    count: usize,
    weight: f64,
}

#[derive(Debug, Clone)]
pub struct MpLaw {
    atoms: Vec<Atom>,
    p: usize,
    n: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StieltjesSolution {
    pub z: C64,
    pub m: C64,
    pub residual: f64,
    pub iterations: usize,
}

impl MpLaw {
    pub fn new(spectrum: &PopulationSpectrum) -> Self {
        Self::from_parts(spectrum.values(), spectrum.n())
    }

    /// Equal eigenvalues are merged into one pole with multiplicity.
    fn from_parts(values: &[f64], n: usize) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let mut atoms: Vec<Atom> = Vec::new();
        for &s in &sorted {
            match atoms.last_mut() {
                Some(a) if (a.sigma - s).abs() <= 1e-12 * a.sigma => a.count += 1,
                _ => atoms.push(Atom {
                    sigma: s,
                    inv: 1.0 / s,
                    count: 1,
                    weight: 0.0,
                }),
            }
        }
        for a in &mut atoms {
            a.weight = a.count as f64 / n as f64;
        }
        Self {
            atoms,
            p: values.len(),
            n,
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ratio(&self) -> f64 {
        self.p as f64 / self.n as f64
    }

    pub fn rank_bound(&self) -> usize {
        self.p.min(self.n)
    }

    /// Distinct population eigenvalues (descending) and their multiplicities.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.atoms.iter().map(|a| (a.sigma, a.count))
    }

    fn pole_guard(&self, m: C64) -> Result<()> {
        if m.norm() == 0.0 {
            return Err(Error::Domain("h evaluated at the pole 0".into()));
        }
        for a in &self.atoms {
            if (m + a.inv).norm() <= 1e-14 * a.inv {
                return Err(Error::Domain(format!(
                    "h evaluated at the pole -1/{}",
                    a.sigma
                )));
            }
        }
        Ok(())
    }

    pub fn h(&self, m: C64) -> Result<C64> {
        self.pole_guard(m)?;
        Ok(self.h_raw(m))
    }

    pub fn h_prime(&self, m: C64) -> Result<C64> {
        self.pole_guard(m)?;
        Ok(self.h_and_prime(m).1)
    }

    pub fn h_real(&self, m: f64) -> Result<f64> {
        self.h(C64::new(m, 0.0)).map(|v| v.re)
    }

    pub fn h_prime_real(&self, m: f64) -> Result<f64> {
        self.h_prime(C64::new(m, 0.0)).map(|v| v.re)
    }

    pub(crate) fn h_raw(&self, m: C64) -> C64 {
        let mut acc = -m.inv();
        for a in &self.atoms {
            acc += a.weight / (m + a.inv);
        }
        acc
    }

    pub(crate) fn h_and_prime(&self, m: C64) -> (C64, C64) {
        let minv = m.inv();
        let mut h = -minv;
        let mut dh = minv * minv;
        for a in &self.atoms {
            let t = (m + a.inv).inv();
            h += a.weight * t;
            dh -= a.weight * t * t;
        }
        (h, dh)
    }

    pub(crate) fn h_real_raw(&self, m: f64) -> (f64, f64) {
        let minv = 1.0 / m;
        let mut h = -minv;
        let mut dh = minv * minv;
        for a in &self.atoms {
            let t = 1.0 / (m + a.inv);
            h += a.weight * t;
            dh -= a.weight * t * t;
        }
        (h, dh)
    }

    /// Derivative `m'(z) = 1 / h'(m(z))` at a solved point.
    pub fn m_prime(&self, m: C64) -> Result<C64> {
        let dh = self.h_prime(m)?;
        if dh.norm() == 0.0 {
            return Err(Error::Domain("m' is infinite at a spectral edge".into()));
        }
        Ok(dh.inv())
    }

    /// `(m'(z) / (n x)) sum_i ell(sigma_i) / sigma_i / (m(z) + 1/sigma_i)^2`.
    pub fn m_dot0(&self, m: C64, x: f64, ell: impl Fn(f64) -> f64) -> Result<C64> {
        if x == 0.0 {
            return Err(Error::Domain("m_dot0 needs x != 0".into()));
        }
        let dm = self.m_prime(m)?;
        let mut acc = C64::new(0.0, 0.0);
        for a in &self.atoms {
            let t = (m + a.inv).inv();
            acc += a.weight * ell(a.sigma) / a.sigma * t * t;
        }
        Ok(dm * acc / x)
    }

    fn scale(z: C64) -> f64 {
        z.norm().max(1.0)
    }

    fn residual(&self, z: C64, m: C64) -> f64 {
        (self.h_raw(m) - z).norm() / Self::scale(z)
    }

    /// Solves `z = h(m)` with `Im m > 0` for `Im z > 0`.
    pub fn solve_m(&self, z: C64) -> Result<StieltjesSolution> {
        self.solve_m_seeded(z, None)
    }

    /// As [`MpLaw::solve_m`], starting Newton from `seed` when one is given.
    pub fn solve_m_seeded(&self, z: C64, seed: Option<C64>) -> Result<StieltjesSolution> {
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::Domain(format!(
                "m(z) requires Im z > 0, got {z}"
            )));
        }
        if let Some(s) = seed.filter(|s| s.im > 0.0) {
            if let Some(sol) = self.newton(z, s, 0) {
                return Ok(sol);
            }
        }
        if let Some(sol) = self.direct(z) {
            return Ok(sol);
        }
        self.continuation(z)
    }

    /// Damped fixed point, then Newton once the residual is small.
    fn direct(&self, z: C64) -> Option<StieltjesSolution> {
        let mut m = -z.inv();
        if m.im <= 0.0 {
            m = C64::new(m.re, 1e-3);
        }
        let mut iterations = 0;
        while iterations < FIXED_POINT_MAX_ITER {
            if self.residual(z, m) < FIXED_POINT_SWITCH {
                return self.newton(z, m, iterations);
            }
            let mut s = C64::new(0.0, 0.0);
            for a in &self.atoms {
                s += a.weight * a.sigma / (1.0 + m * a.sigma);
            }
            let next = -(z - s).inv();
            if !next.re.is_finite() || !next.im.is_finite() {
                return None;
            }
            m = 0.5 * m + 0.5 * next;
            iterations += 1;
        }
        None
    }

    /// Newton on `h(m) - z` with backtracking that keeps `Im m > 0`.
    fn newton(&self, z: C64, start: C64, prior: usize) -> Option<StieltjesSolution> {
        let mut m = start;
        let (mut h, mut dh) = self.h_and_prime(m);
        let mut res = (h - z).norm() / Self::scale(z);
        for it in 0..NEWTON_MAX_ITER {
            // Polish to the absolute tolerance when rounding allows it.
            if res * Self::scale(z) <= 0.25 * RESIDUAL_TOL {
                return Some(StieltjesSolution {
                    z,
                    m,
                    residual: res * Self::scale(z),
                    iterations: prior + it,
                });
            }
            if dh.norm() == 0.0 {
                return None;
            }
            let step = (h - z) / dh;
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = m - step * t;
                if cand.im > 0.0 && cand.re.is_finite() {
                    let (hc, dhc) = self.h_and_prime(cand);
                    let rc = (hc - z).norm() / Self::scale(z);
                    if rc < res || (rc <= RESIDUAL_TOL && rc <= res * 1.0001) {
                        m = cand;
                        h = hc;
                        dh = dhc;
                        res = rc;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        (res <= RESIDUAL_TOL).then(|| StieltjesSolution {
            z,
            m,
            residual: res * Self::scale(z),
            iterations: prior + NEWTON_MAX_ITER,
        })
    }

    /// Walks down from a large imaginary part, where the fixed point is a strong
    /// contraction, to the requested `Im z`.
    fn continuation(&self, z: C64) -> Result<StieltjesSolution> {
        let top = (4.0 * (1.0 + z.re.abs())).max(z.im);
        let mut current = self.direct(C64::new(z.re, top)).ok_or_else(|| Error::Convergence {
            iterations: FIXED_POINT_MAX_ITER,
            residual: f64::NAN,
            last: format!("start of continuation at Im z = {top}"),
        })?;
        let mut eta = top;
        let mut ratio: f64 = 0.5;
        let mut total = current.iterations;
        while eta > z.im {
            let next_eta = (eta * ratio).max(z.im);
            let zn = C64::new(z.re, next_eta);
            // First-order predictor along the path.
            let dh = self.h_and_prime(current.m).1;
            let mut guess = current.m + (zn - current.z) / dh;
            if !(guess.im > 0.0) {
                guess = current.m;
            }
            match self.newton(zn, guess, 0) {
                Some(sol) => {
                    total += sol.iterations;
                    current = sol;
                    eta = next_eta;
                    ratio = (ratio * ratio).max(0.05);
                }
                None => {
                    ratio = ratio.sqrt();
                    if ratio > 0.999 {
                        return Err(Error::Convergence {
                            iterations: total,
                            residual: self.residual(zn, current.m) * Self::scale(zn),
                            last: format!("m = {} at z = {}", current.m, zn),
                        });
                    }
                }
            }
        }
        current.iterations = total;
        Ok(current)
    }

    /// Newton at real `z = e` started from an upper-half-plane value, giving the
    /// boundary value `m(e + i0)` on the support.
    pub(crate) fn polish_on_axis(&self, e: f64, seed: C64) -> Option<C64> {
        let z = C64::new(e, 0.0);
        let sol = self.newton(z, seed, 0)?;
        (sol.m.im > 0.0).then_some(sol.m)
    }

    /// Increasing root of `h(m) = x` on a real bracket where `h' > 0`.
    pub(crate) fn invert_increasing(&self, x: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
        let f = |m: f64| self.h_real_raw(m).0 - x;
        let (mut flo, fhi) = (f(lo), f(hi));
        if !(flo <= 0.0 && fhi >= 0.0) {
            return Err(Error::Bracketing(format!(
                "h - {x} has no sign change on [{lo}, {hi}] ({flo}, {fhi})"
            )));
        }
        let mut m = 0.5 * (lo + hi);
        for _ in 0..200 {
            let (hv, dh) = self.h_real_raw(m);
            let fv = hv - x;
            if fv == 0.0 {
                return Ok(m);
            }
            if fv < 0.0 {
                lo = m;
                flo = fv;
            } else {
                hi = m;
            }
            let newton = m - fv / dh;
            m = if dh > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo) <= 4.0 * f64::EPSILON * m.abs().max(f64::MIN_POSITIVE)
                || (fv.abs() <= 1e-15 * x.abs().max(1.0))
            {
                return Ok(m);
            }
        }
        let _ = flo;
        Ok(m)
    }
}
