//! Rotation numbers: slope estimates, tower-count bounds and a continuity probe.

use std::fmt::Write as _;

use serde::Serialize;

use crate::chain::QuasicrystalChain;
use crate::config::fmt_float;
use crate::error::{domain, range, Result};
use crate::field::Quad;
use crate::tower::{Occupancy, TowerHierarchy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RotationEstimate {
    /// `(θ_last − θ_first) / (n_last − n_first)`
    pub slope: f64,
    /// Least-squares slope of `θ_n` against `n`.
    pub lsq_slope: f64,
}

pub fn estimate_rotation(config: &[f64]) -> Result<RotationEstimate> {
    let n = config.len();
    if n < 2 {
        return domain("rotation estimate needs at least two atoms");
    }
    let slope = (config[n - 1] - config[0]) / (n - 1) as f64;
    let mean_i = (n - 1) as f64 / 2.0;
    let mean_x = config.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, x) in config.iter().enumerate() {
        let di = i as f64 - mean_i;
        sxy += di * (x - mean_x);
        sxx += di * di;
    }
    Ok(RotationEstimate { slope, lsq_slope: sxy / sxx })
}

/// `[1/(Σ ν N + 2ν(C_l)), 1/(Σ ν N)]` from minimal complete-visit counts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TowerBound {
    pub level: usize,
    pub lo: f64,
    pub hi: f64,
    /// `ν(C_l)`
    pub nu_total: f64,
    pub min_counts: Vec<Option<usize>>,
    /// `hi` in field arithmetic, when every loop was visited.
    #[serde(skip)]
    pub hi_exact: Option<Quad>,
    pub warnings: Vec<String>,
}

impl TowerBound {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

pub fn tower_bounds(hierarchy: &TowerHierarchy, chain: &QuasicrystalChain, config: &[f64], level: usize) -> Result<TowerBound> {
    let occ = hierarchy.loop_occupancy(chain, level, config)?;
    bounds_from_occupancy(hierarchy, &occ, level)
}

fn bounds_from_occupancy(hierarchy: &TowerHierarchy, occ: &Occupancy, level: usize) -> Result<TowerBound> {
    let t = hierarchy.level(level)?;
    if occ.visits.is_empty() {
        return range(format!("configuration crosses no complete level-{level} supertile"));
    }
    let mut min_counts = occ.min_counts();
    min_counts.resize(t.loop_count, None);
    let mut warnings = Vec::new();
    let mut s = 0.0;
    let f = hierarchy.rule().field();
    let mut s_exact = Some(f.zero());
    for (j, c) in min_counts.iter().enumerate() {
        match c {
            Some(c) => {
                s += t.measures_f64[j] * *c as f64;
                s_exact = s_exact.map(|acc| acc + t.measures[j] * *c as i64);
            }
            None => {
                warnings.push(format!("level {level}: loop {j} never visited; excluded"));
                s_exact = None;
            }
        }
    }
    if s <= 0.0 {
        return range(format!("no positive visit counts at level {level}"));
    }
    let nu_total = t.total_measure_f64();
    Ok(TowerBound {
        level,
        lo: 1.0 / (s + 2.0 * nu_total),
        hi: 1.0 / s,
        nu_total,
        min_counts,
        hi_exact: s_exact.and_then(|q| q.inv()),
        warnings,
    })
}

/// `level,lo,hi,slope` rows.
pub fn bounds_csv(bounds: &[TowerBound], slope: f64) -> String {
    let mut out = String::from("level,lo,hi,slope\n");
    for b in bounds {
        writeln!(out, "{},{},{},{}", b.level, fmt_float(b.lo), fmt_float(b.hi), fmt_float(slope)).unwrap();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeEntry {
    pub config: usize,
    pub level: usize,
    /// `|1/ρ̂_m − 1/ρ̂|` with `ρ̂` the tower-bound midpoints.
    pub difference: f64,
    /// `8 ν(C_l)`
    pub bound: f64,
    /// Distances of `1/ρ̂_m` and `1/ρ̂` from the slopes, each to be compared with `2 ν(C_l)`.
    pub side_config: f64,
    pub side_limit: f64,
    pub side_bound: f64,
    /// Visit counts of both configurations agree on every shared complete supertile.
    pub agree: bool,
    pub within_bound: bool,
    pub flagged: bool,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub entries: Vec<ProbeEntry>,
    /// Smallest `m` from which every later configuration agrees with the limit at the deepest level.
    pub agreement_index: Option<usize>,
    pub flags: usize,
}

/// Compares each configuration's rotation bounds with the limit configuration's, level by level.
pub fn continuity_probe(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    configs: &[Vec<f64>],
    limit: &[f64],
    levels: std::ops::RangeInclusive<usize>,
) -> Result<ContinuityReport> {
    let limit_slope = estimate_rotation(limit)?.slope;
    let mut entries = Vec::new();
    let deepest = *levels.end();
    let mut agree_deepest = vec![false; configs.len()];
    for level in levels {
        let occ_limit = hierarchy.loop_occupancy(chain, level, limit)?;
        let Ok(b_limit) = bounds_from_occupancy(hierarchy, &occ_limit, level) else {
            continue;
        };
        for (m, cfg) in configs.iter().enumerate() {
            let occ = hierarchy.loop_occupancy(chain, level, cfg)?;
            let Ok(b) = bounds_from_occupancy(hierarchy, &occ, level) else {
                continue;
            };
            let slope = estimate_rotation(cfg)?.slope;
            let difference = (1.0 / b.midpoint() - 1.0 / b_limit.midpoint()).abs();
            let bound = 8.0 * b.nu_total;
            let agree = visits_agree(&occ, &occ_limit);
            let within_bound = difference <= bound;
            let flagged = agree && !within_bound;
            if level == deepest {
                agree_deepest[m] = agree;
            }
            entries.push(ProbeEntry {
                config: m,
                level,
                difference,
                bound,
                side_config: (1.0 / b.midpoint() - 1.0 / slope).abs(),
                side_limit: (1.0 / b_limit.midpoint() - 1.0 / limit_slope).abs(),
                side_bound: 2.0 * b.nu_total,
                agree,
                within_bound,
                flagged,
                note: if agree {
                    String::new()
                } else {
                    "not product-topology close".to_string()
                },
            });
        }
    }
    let agreement_index = (0..=configs.len())
        .find(|&m0| agree_deepest[m0..].iter().all(|&a| a))
        .filter(|&m0| m0 < configs.len());
    let flags = entries.iter().filter(|e| e.flagged).count();
    Ok(ContinuityReport { entries, agreement_index, flags })
}

/// Equal counts on every complete supertile visited by both.
fn visits_agree(a: &Occupancy, b: &Occupancy) -> bool {
    let mut shared = 0;
    for v in &a.visits {
        if let Some(w) = b.visits.iter().find(|w| w.start == v.start) {
            shared += 1;
            if w.count != v.count {
                return false;
            }
        }
    }
    shared > 0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rational;
    use crate::substitution::SubstitutionRule;

    #[test]
    fn slopes() {
        let c: Vec<f64> = (0..50).map(|n| 1.5 * n as f64).collect();
        let r = estimate_rotation(&c).unwrap();
        assert!((r.slope - 1.5).abs() < 1e-14);
        assert!((r.lsq_slope - 1.5).abs() < 1e-12);
        assert_eq!(estimate_rotation(&[2.0; 10]).unwrap().slope, 0.0);
        assert!(estimate_rotation(&[1.0]).is_err());
    }

    #[test]
    fn substrate_bounds_at_level_zero() {
        let fib = SubstitutionRule::fibonacci();
        let chain = QuasicrystalChain::build(&fib, (-100.0, 100.0)).unwrap();
        let h = TowerHierarchy::with_step(&fib, 3, 1).unwrap();
        let b = tower_bounds(&h, &chain, chain.positions(), 0).unwrap();
        assert!((b.hi - 1.381_966_011_250_105).abs() < 1e-12);
        assert!((b.lo - 1.0 / (3.0 * 0.723_606_797_749_979)).abs() < 1e-12);
        let b3 = tower_bounds(&h, &chain, chain.positions(), 3).unwrap();
        assert!((b3.nu_total - 0.723_606_797_749_979 / 1.618_033_988_749_895f64.powi(3)).abs() < 1e-12);
        assert!(b3.width() < b.width());
    }

    #[test]
    fn crystal_bounds() {
        let rule = SubstitutionRule::crystal(Rational::from_integer(1));
        let chain = QuasicrystalChain::build(&rule, (-40.0, 40.0)).unwrap();
        let h = TowerHierarchy::with_step(&rule, 3, 1).unwrap();
        for l in 0..=3 {
            let b = tower_bounds(&h, &chain, chain.positions(), l).unwrap();
            let p = (1u64 << l) as f64;
            assert!((b.lo - p / (p + 2.0)).abs() < 1e-14);
            assert_eq!(b.hi, 1.0);
        }
    }

    #[test]
    fn translated_configs_have_zero_difference() {
        let fib = SubstitutionRule::fibonacci();
        let chain = QuasicrystalChain::build(&fib, (-100.0, 100.0)).unwrap();
        let h = TowerHierarchy::with_step(&fib, 2, 1).unwrap();
        let xs = chain.positions()[1..chain.positions().len() - 1].to_vec();
        let rep = continuity_probe(&h, &chain, &[xs.clone(), xs.clone()], &xs, 0..=2).unwrap();
        assert!(rep.entries.iter().all(|e| e.difference == 0.0 && e.agree));
        assert_eq!(rep.agreement_index, Some(0));
        assert_eq!(rep.flags, 0);
    }
}
