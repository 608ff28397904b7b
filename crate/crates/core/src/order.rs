//! Counting laws for atoms in translated intervals and per-loop occupancy spread.

use serde::Serialize;

use crate::chain::QuasicrystalChain;
use crate::error::{range, Result};
use crate::field::Coord;
use crate::tower::{count_half_open, TowerHierarchy};

/// Disjoint translates `I + u` of a base interval along which the `R`-patterns agree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TranslateFamily {
    pub base: (f64, f64),
    pub radius: f64,
    /// Exact shifts, sorted, including 0.
    pub shifts: Vec<Coord>,
    pub shifts_f64: Vec<f64>,
}

/// Index range of the atoms strictly inside `(lo, hi)`.
fn window_atoms(chain: &QuasicrystalChain, lo: f64, hi: f64) -> (usize, usize) {
    let xs = chain.positions();
    let i0 = xs.partition_point(|&s| s <= lo);
    let i1 = xs.partition_point(|&s| s < hi);
    (i0, i1)
}

/// Shifts `u` (exact atom differences) with `B_R(θ) ∩ QC + u = B_R(θ + u) ∩ QC` for every `θ ∈ I`,
/// `I + u ⊂ scan`, kept greedily so that the translates are pairwise disjoint.
pub fn find_translates(chain: &QuasicrystalChain, base: (f64, f64), radius: f64, scan: (f64, f64)) -> Result<TranslateFamily> {
    let (a, b) = base;
    let (first, last) = chain.coverage();
    if !(a - radius > first && b + radius < last && a <= b) {
        return range(format!("interval [{a}, {b}] with margin {radius} is outside the chain coverage"));
    }
    let atoms = chain.atoms();
    let labels = chain.labels();
    // the union of the balls B_R(θ), θ ∈ I, is (a − R, b + R)
    let (i0, i1) = window_atoms(chain, a - radius, b + radius);
    let anchor = if i1 > i0 { i0 } else { i0 - 1 };
    let len = i1 - i0;
    let mut valid: Vec<(Coord, f64)> = Vec::new();
    for m in 1..atoms.len() {
        let u = atoms[m] - atoms[anchor];
        let uf = chain.to_f64(u);
        if a + uf < scan.0 || b + uf > scan.1 {
            continue;
        }
        if !(a - radius + uf > first && b + radius + uf < last) {
            continue;
        }
        let (j0, j1) = window_atoms(chain, a - radius + uf, b + radius + uf);
        if j1 - j0 != len {
            continue;
        }
        let ok = if len == 0 {
            j0 == m + 1 && labels[m] == labels[anchor]
        } else {
            j0 == m
                && (0..len).all(|k| atoms[m + k] - atoms[m] == atoms[i0 + k] - atoms[i0])
                && labels[m - 1..m + len] == labels[i0 - 1..i0 + len]
        };
        if ok {
            valid.push((u, uf));
        }
    }
    valid.sort_by(|x, y| x.1.total_cmp(&y.1));
    let zero = valid.iter().position(|v| v.0 == Coord::ZERO);
    let mut shifts: Vec<(Coord, f64)> = Vec::new();
    if let Some(z) = zero {
        let width = b - a;
        let mut left = Vec::new();
        let mut cur = 0.0;
        for v in valid[..z].iter().rev() {
            if cur - v.1 >= width && (width > 0.0 || v.1 < cur) {
                left.push(*v);
                cur = v.1;
            }
        }
        left.reverse();
        shifts.extend(left);
        shifts.push(valid[z]);
        let mut cur = 0.0;
        for v in &valid[z + 1..] {
            if v.1 - cur >= width && (width > 0.0 || v.1 > cur) {
                shifts.push(*v);
                cur = v.1;
            }
        }
    } else {
        shifts.push((Coord::ZERO, 0.0));
    }
    Ok(TranslateFamily {
        base,
        radius,
        shifts: shifts.iter().map(|s| s.0).collect(),
        shifts_f64: shifts.iter().map(|s| s.1).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Convention {
    /// `[a, b)`
    HalfOpen,
    /// `[a, b]`
    Closed,
}

/// Atoms of the sorted configuration in the interval.
pub fn count_atoms(config: &[f64], interval: (f64, f64), convention: Convention) -> usize {
    let (a, b) = interval;
    match convention {
        Convention::HalfOpen => count_half_open(config, a, b),
        Convention::Closed => config.partition_point(|&x| x <= b).saturating_sub(config.partition_point(|&x| x < a)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Violation {
    /// Index of a translate with the minimal count.
    pub low: usize,
    /// Index of a translate with more than `N + 2` atoms.
    pub high: usize,
    pub low_count: usize,
    pub high_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CountReport {
    /// Left ends of the counted intervals.
    pub translates: Vec<f64>,
    pub counts: Vec<usize>,
    #[serde(rename = "N")]
    pub n_min: usize,
    pub spread: usize,
    pub violations: Vec<Violation>,
}

impl CountReport {
    pub fn from_counts(translates: Vec<f64>, counts: Vec<usize>) -> Self {
        let n_min = counts.iter().copied().min().unwrap_or(0);
        let n_max = counts.iter().copied().max().unwrap_or(0);
        let low = counts.iter().position(|&c| c == n_min).unwrap_or(0);
        let violations = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > n_min + 2)
            .map(|(k, &c)| Violation { low, high: k, low_count: n_min, high_count: c })
            .collect();
        CountReport { translates, counts, n_min, spread: n_max - n_min, violations }
    }

    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Counts per translate `[a+u, b+u)` lying inside `[θ_first, θ_last]`; others are skipped.
pub fn check_translate_bounds(config: &[f64], family: &TranslateFamily) -> CountReport {
    let (Some(&first), Some(&last)) = (config.first(), config.last()) else {
        return CountReport::default();
    };
    let (a, b) = family.base;
    let (mut ts, mut cs) = (Vec::new(), Vec::new());
    for &u in &family.shifts_f64 {
        if a + u >= first && b + u <= last {
            ts.push(a + u);
            cs.push(count_half_open(config, a + u, b + u));
        }
    }
    CountReport::from_counts(ts, cs)
}

/// Per-loop spread of complete-visit counts at `level`.
pub fn check_loop_spread(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    config: &[f64],
    level: usize,
) -> Result<Vec<CountReport>> {
    let occ = hierarchy.loop_occupancy(chain, level, config)?;
    let n = hierarchy.rule().len();
    Ok((0..n)
        .map(|j| {
            let visits: Vec<_> = occ.visits.iter().filter(|v| v.kind == j).collect();
            CountReport::from_counts(visits.iter().map(|v| v.start).collect(), visits.iter().map(|v| v.count).collect())
        })
        .collect())
}

/// All checks on one configuration: translate families over tile-aligned bases and loop spreads.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Certificate {
    pub translate_reports: Vec<CountReport>,
    /// `loop_reports[l][j]`
    pub loop_reports: Vec<Vec<CountReport>>,
    pub violations: usize,
    pub max_spread: usize,
}

/// Runs both counting checks; bases are unions of 1 to 3 consecutive substrate tiles at several
/// starting tiles near the left end of the configuration.
pub fn certify(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    config: &[f64],
    radius: f64,
    levels: std::ops::RangeInclusive<usize>,
) -> Result<Certificate> {
    let mut cert = Certificate::default();
    let (Some(&first), Some(&last)) = (config.first(), config.last()) else {
        return Ok(cert);
    };
    let xs = chain.positions();
    let start = xs.partition_point(|&s| s < first);
    for width in 1..=3 {
        for k in 0..6 {
            let i = start + k;
            if i + width >= xs.len() || xs[i + width] > last {
                break;
            }
            let base = (xs[i], xs[i + width]);
            if chain.coverage().0 >= base.0 - radius || chain.coverage().1 <= base.1 + radius {
                continue;
            }
            let fam = find_translates(chain, base, radius.max(f64::MIN_POSITIVE), (first, last))?;
            cert.translate_reports.push(check_translate_bounds(config, &fam));
        }
    }
    for level in levels {
        match check_loop_spread(hierarchy, chain, config, level) {
            Ok(r) => cert.loop_reports.push(r),
            Err(_) => cert.loop_reports.push(Vec::new()),
        }
    }
    let all = cert.translate_reports.iter().chain(cert.loop_reports.iter().flatten());
    for r in all {
        cert.violations += r.violations.len();
        cert.max_spread = cert.max_spread.max(r.spread);
    }
    Ok(cert)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rational;
    use crate::substitution::SubstitutionRule;

    #[test]
    fn crystal_translates_are_periodic() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::crystal(Rational::from_integer(1)), (-30.0, 30.0)).unwrap();
        let fam = find_translates(&chain, (0.0, 1.0), 0.5, (0.0, 10.0)).unwrap();
        assert_eq!(fam.shifts_f64, (0..10).map(|i| i as f64).collect::<Vec<_>>());
        let fam = find_translates(&chain, (0.0, 12.0), 0.5, (0.0, 10.0)).unwrap();
        assert_eq!(fam.shifts, vec![Coord::ZERO]);
    }

    #[test]
    fn fibonacci_returns_are_atom_differences() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-80.0, 80.0)).unwrap();
        let phi = 1.618_033_988_749_895;
        let fam = find_translates(&chain, (0.0, phi), 2.0 * phi, (-60.0, 60.0)).unwrap();
        assert!(fam.shifts.len() > 3);
        let o = chain.origin_index();
        for &u in &fam.shifts {
            assert!(chain.index_of(chain.atoms()[o] + u).is_some());
        }
        for w in fam.shifts_f64.windows(2) {
            assert!(w[1] - w[0] >= phi);
        }
        // the pattern really agrees along I
        for &u in &fam.shifts_f64 {
            for t in [0.0, 0.3, 1.1, 1.6] {
                let p = chain.local_window(t, 2.0 * phi).unwrap();
                let q = chain.local_window(t + u, 2.0 * phi).unwrap();
                assert_eq!(p.offsets, q.offsets);
                assert_eq!(p.labels, q.labels);
            }
        }
    }

    #[test]
    fn counting_conventions() {
        let ints: Vec<f64> = (-5..=5).map(|i| i as f64).collect();
        assert_eq!(count_atoms(&ints, (0.0, 3.0), Convention::HalfOpen), 3);
        assert_eq!(count_atoms(&ints, (0.0, 3.0), Convention::Closed), 4);
        assert_eq!(count_atoms(&ints, (2.0, 2.0), Convention::HalfOpen), 0);
    }

    #[test]
    fn substrate_has_zero_spread() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-80.0, 80.0)).unwrap();
        let fam = find_translates(&chain, (0.0, 1.618_033_988_749_895), 0.5, (-60.0, 60.0)).unwrap();
        let rep = check_translate_bounds(chain.positions(), &fam);
        assert_eq!(rep.spread, 0);
        assert!(rep.ok());
    }

    #[test]
    fn reports_flag_large_spread() {
        let rep = CountReport::from_counts(vec![0.0, 1.0, 2.0], vec![2, 3, 5]);
        assert_eq!(rep.n_min, 2);
        assert_eq!(rep.spread, 3);
        assert_eq!(rep.violations, vec![Violation { low: 0, high: 2, low_count: 2, high_count: 5 }]);
    }
}
