//! Support edges of the deformed MP law as images of the critical points of `h`.

use serde::Serialize;

use super::MpLaw;
use crate::error::{Error, Result};

/// Grid points per pole-free interval in the sign scan of `h'`.
const SCAN_POINTS: usize = 2048;

/// Grid points per pole interval in the search for density dips.
const DIP_POINTS: usize = 64;

/// Relative depth `m^2 |h'(m)|` under which a maximum of `h' < 0` between two
/// poles counts as a near-gap of the density.
const DIP_DEPTH: f64 = 0.05;

/// Support `[a_2, a_1] u [a_4, a_3] u ...` with `a_1 > a_2 > ...`.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralEdges {
    /// Edges `a_k`, descending.
    pub edges: Vec<f64>,
    /// Critical points `b_k` with `h(b_k) = a_k` and `h'(b_k) = 0`.
    pub critical: Vec<f64>,
    /// Number of sample eigenvalues per bulk, top bulk first; sums to `min(p, n)`.
    pub bulk_counts: Vec<usize>,
}

impl SpectralEdges {
    pub fn bulks(&self) -> usize {
        self.edges.len() / 2
    }

    /// `(lower, upper)` edges of bulk `k` (0-based, top first).
    pub fn bulk(&self, k: usize) -> (f64, f64) {
        (self.edges[2 * k + 1], self.edges[2 * k])
    }

    pub fn upper_edge(&self) -> f64 {
        self.edges[0]
    }

    pub fn lower_edge(&self) -> f64 {
        *self.edges.last().unwrap()
    }

    /// Bulk containing `x`, edges included.
    pub fn bulk_of(&self, x: f64) -> Option<usize> {
        (0..self.bulks()).find(|&k| {
            let (lo, hi) = self.bulk(k);
            x >= lo && x <= hi
        })
    }

    /// Index offset of bulk `k`: number of eigenvalues in the bulks above it.
    pub fn offset(&self, k: usize) -> usize {
        self.bulk_counts[..k].iter().sum()
    }
}

/// Smooth map of `t` in (0, 1) onto an interval, dense near both ends.
fn cluster(t: f64) -> f64 {
    0.5 * (1.0 - (std::f64::consts::PI * t).cos())
}

impl MpLaw {
    /// Locates the support edges by scanning `h'` on every interval between the
    /// poles `{-1/sigma_i} u {0}` (unbounded ends included).
    pub fn find_edges(&self) -> Result<SpectralEdges> {
        let c = self.ratio();
        if (c - 1.0).abs() < 1e-12 {
            return Err(Error::Domain(
                "edge search needs p != n (hard edge at zero)".into(),
            ));
        }
        // Poles ascending: -1/sigma_min < ... < -1/sigma_max < 0.
        let mut poles: Vec<f64> = self.atoms.iter().map(|a| -a.inv).collect();
        poles.sort_by(f64::total_cmp);
        poles.push(0.0);

        let mut roots = Vec::new();
        let scale = self.atoms.iter().map(|a| a.inv).fold(f64::INFINITY, f64::min);

        // (-inf, first pole): m = first - scale * u / (1 - u).
        {
            let first = poles[0];
            let map = |t: f64| {
                let u = t;
                first - scale * (1.0 - u) / u
            };
            self.scan(map, &mut roots);
        }
        for w in poles.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            self.scan(|t| lo + (hi - lo) * cluster(t), &mut roots);
        }
        // (0, inf).
        self.scan(|t| scale * t / (1.0 - t), &mut roots);

        let mut pairs: Vec<(f64, f64)> = roots
            .into_iter()
            .map(|b| (self.h_real_raw(b).0, b))
            .filter(|(a, _)| *a > 0.0 && a.is_finite())
            .collect();
        pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
        pairs.dedup_by(|x, y| (x.0 - y.0).abs() <= 1e-13 * y.0.abs().max(1.0));
        if pairs.is_empty() || !pairs.len().is_multiple_of(2) {
            return Err(Error::Bracketing(format!(
                "found {} positive edges, expected a nonzero even count",
                pairs.len()
            )));
        }
        let edges: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let critical: Vec<f64> = pairs.iter().map(|p| p.1).collect();

        // Poles strictly between the critical points of a bulk belong to it.
        let bulks = edges.len() / 2;
        let mut bulk_counts = Vec::with_capacity(bulks);
        for k in 0..bulks.saturating_sub(1) {
            let (top, bottom) = (critical[2 * k], critical[2 * k + 1]);
            let count = self
                .atoms
                .iter()
                .filter(|a| -a.inv > bottom && -a.inv < top)
                .map(|a| a.count)
                .sum();
            bulk_counts.push(count);
        }
        let upper: usize = bulk_counts.iter().sum();
        let total = self.rank_bound();
        if upper > total {
            return Err(Error::Bracketing(format!(
                "bulk counts {bulk_counts:?} exceed min(p, n) = {total}"
            )));
        }
        bulk_counts.push(total - upper);
        Ok(SpectralEdges {
            edges,
            critical,
            bulk_counts,
        })
    }

    /// Sign changes of `h'` on `map((0, 1))`, refined by bisection. Intervals
    /// with no sign change get a golden-section probe of the largest sample, to
    /// catch a pair of roots closer together than the grid.
    fn scan(&self, map: impl Fn(f64) -> f64, roots: &mut Vec<f64>) {
        let dh = |m: f64| self.h_real_raw(m).1;
        let ts: Vec<f64> = (1..SCAN_POINTS)
            .map(|k| k as f64 / SCAN_POINTS as f64)
            .collect();
        let vals: Vec<f64> = ts.iter().map(|&t| dh(map(t))).collect();
        let mut found = false;
        for k in 1..ts.len() {
            let (v0, v1) = (vals[k - 1], vals[k]);
            if v0.is_finite() && v1.is_finite() && (v0 > 0.0) != (v1 > 0.0) {
                roots.push(bisect(&dh, map(ts[k - 1]), map(ts[k])));
                found = true;
            }
        }
        if found {
            return;
        }
        let Some((kmax, _)) = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .max_by(|a, b| a.1.total_cmp(b.1))
        else {
            return;
        };
        if kmax == 0 || kmax + 1 >= ts.len() {
            return;
        }
        let tmax = golden_max(|t| dh(map(t)), ts[kmax - 1], ts[kmax + 1]);
        if dh(map(tmax)) > 0.0 {
            roots.push(bisect(&dh, map(ts[kmax - 1]), map(tmax)));
            roots.push(bisect(&dh, map(tmax), map(ts[kmax + 1])));
        }
    }

    /// Points of `(lower, upper)` where the density nearly vanishes without a
    /// gap: images of deep maxima of `h' < 0` between adjacent poles. Descending.
    pub(crate) fn density_dips(&self, lower: f64, upper: f64) -> Vec<f64> {
        let mut poles: Vec<f64> = self.atoms.iter().map(|a| -a.inv).collect();
        poles.sort_by(f64::total_cmp);
        let dh = |m: f64| self.h_real_raw(m).1;
        let mut dips = Vec::new();
        for w in poles.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let map = |t: f64| lo + (hi - lo) * cluster(t);
            let step = 1.0 / DIP_POINTS as f64;
            let Some(kmax) = (1..DIP_POINTS)
                .map(|k| (k, dh(map(k as f64 * step))))
                .filter(|(_, v)| v.is_finite())
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(k, _)| k)
            else {
                continue;
            };
            let m = map(golden_max(|t| dh(map(t)), (kmax - 1) as f64 * step, (kmax + 1) as f64 * step));
            let (x, d) = self.h_real_raw(m);
            if d < 0.0 && m * m * -d < DIP_DEPTH && x > lower && x < upper {
                dips.push(x);
            }
        }
        dips.sort_by(|a, b| b.total_cmp(a));
        dips
    }
}

/// Golden-section maximum of a unimodal `f` on `[a, b]`.
fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let x1 = b - g * (b - a);
        let x2 = a + g * (b - a);
        if f(x1) > f(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    0.5 * (a + b)
}

/// Bisection to the last representable midpoint.
fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo_pos = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        if (f(mid) > 0.0) == flo_pos {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PopulationSpectrum;
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_edges_closed_form() {
        for (p, n) in [(300, 600), (600, 300), (50, 1000)] {
            let law = MpLaw::new(&PopulationSpectrum::identity(p, n).unwrap());
            let c = p as f64 / n as f64;
            let e = law.find_edges().unwrap();
            assert_eq!(e.bulks(), 1);
            assert_abs_diff_eq!(e.edges[0], (1.0 + c.sqrt()).powi(2), epsilon = 1e-10);
            assert_abs_diff_eq!(e.edges[1], (1.0 - c.sqrt()).powi(2), epsilon = 1e-10);
            assert_eq!(e.bulk_counts, vec![p.min(n)]);
            for &b in &e.critical {
                assert!(law.h_prime_real(b).unwrap().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn separated_two_atom_has_two_bulks() {
        // {8, 1} at c = 0.5 splits into two bulks of p/2 each.
        let law = MpLaw::new(&PopulationSpectrum::two_atom(300, 600, 8.0, 1.0).unwrap());
        let e = law.find_edges().unwrap();
        assert_eq!(e.bulks(), 2);
        assert_eq!(e.bulk_counts, vec![150, 150]);
        for w in e.edges.windows(2) {
            assert!(w[0] > w[1]);
        }
    }

    #[test]
    fn edges_match_dense_sign_scan() {
        // Independent route: brute-force scan of h' on a fine uniform grid of
        // each pole interval, take h at the sign changes.
        let law = MpLaw::new(&PopulationSpectrum::two_atom(300, 600, 3.0, 1.0).unwrap());
        let e = law.find_edges().unwrap();
        let mut brute = Vec::new();
        let intervals = [(-1.0 + 1e-9, -1.0 / 3.0 - 1e-9), (-1.0 / 3.0 + 1e-9, -1e-9), (-50.0, -1.0 - 1e-9)];
        for (lo, hi) in intervals {
            let steps = 200_000;
            let mut prev = law.h_prime_real(lo).unwrap();
            for k in 1..=steps {
                let m = lo + (hi - lo) * k as f64 / steps as f64;
                let v = law.h_prime_real(m).unwrap();
                if (v > 0.0) != (prev > 0.0) {
                    brute.push(law.h_real(m).unwrap());
                }
                prev = v;
            }
        }
        brute.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(brute.len(), e.edges.len());
        for (a, b) in brute.iter().zip(&e.edges) {
            assert!((a - b).abs() < 1e-3 * b);
        }
    }
}
