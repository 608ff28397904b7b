//! Configurations with a prescribed rotation number: mark skeleton loops, lift to the line, refine.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::QuasicrystalChain;
use crate::config::Configuration;
use crate::energy::EnergyModel;
use crate::error::{domain, range, FkError, Result};
use crate::field::{Quad, QuadRepr};
use crate::minimizer::{minimize_from, minimize_loop_segment, LoopMarks, MinimizeOptions};
use crate::rotation::{estimate_rotation, tower_bounds};
use crate::tower::{SupertileLayout, TowerHierarchy};

/// Marked points on every loop of one level; offset 0 (the singular point) is `marks[j][0]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkedSkeleton {
    pub level: usize,
    pub counts: Vec<u64>,
    pub heights: Vec<f64>,
    pub marks: Vec<Vec<f64>>,
    pub loop_energies: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Largest loop-energy difference between occurrences of a loop (0 when `V̂` is unambiguous).
    pub lift_energy_spread: f64,
}

impl MarkedSkeleton {
    /// Interior marks `b_1 < … < b_{N_j − 1}` of loop `j`.
    pub fn interior(&self, j: usize) -> &[f64] {
        &self.marks[j][1..]
    }
}

/// Marking: per loop, the minimal segment with `N_j` bonds on a concrete occurrence of the loop.
pub fn mark_level(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    model: &EnergyModel,
    level: usize,
    counts: &[u64],
    options: &MinimizeOptions,
) -> Result<MarkedSkeleton> {
    let t = hierarchy.level(level)?;
    if counts.len() != t.loop_count || counts.iter().any(|&c| c < 1) {
        return domain(format!("need {} counts, all at least 1", t.loop_count));
    }
    let loops: Vec<Result<LoopMarks>> = (0..t.loop_count)
        .into_par_iter()
        .map(|j| minimize_loop_segment(hierarchy, chain, model, level, j, counts[j], options))
        .collect();
    let loops = loops.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(MarkedSkeleton {
        level,
        counts: counts.to_vec(),
        heights: t.heights_f64.clone(),
        marks: loops.iter().map(|m| m.marks.clone()).collect(),
        loop_energies: loops.iter().map(|m| m.energy).collect(),
        residuals: loops.iter().map(|m| m.residual).collect(),
        lift_energy_spread: loops.iter().map(|m| m.lift_energy_spread).fold(0.0, f64::max),
    })
}

/// Complete supertiles of `layout` inside `window`, as a contiguous index range.
fn tiles_in(layout: &SupertileLayout, window: (f64, f64)) -> std::ops::Range<usize> {
    let a = layout.tiles.partition_point(|t| t.start_f64 < window.0);
    let b = layout.tiles.partition_point(|t| t.end_f64 <= window.1);
    a..b.max(a)
}

/// Places each supertile's marks at its left boundary and closes with the last boundary atom.
pub fn lift(
    marked: &MarkedSkeleton,
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    window: (f64, f64),
) -> Result<Configuration> {
    let (first, last) = chain.coverage();
    if window.0 < first || window.1 > last || window.0 > window.1 {
        return range(format!("window [{}, {}] exceeds the chain coverage [{first}, {last}]", window.0, window.1));
    }
    let layout = hierarchy.layout(chain, marked.level)?;
    let idx = tiles_in(&layout, window);
    if idx.is_empty() {
        return range(format!("window contains no complete level-{} supertile", marked.level));
    }
    let mut atoms = Vec::new();
    for t in &layout.tiles[idx.clone()] {
        atoms.extend(marked.marks[t.kind].iter().map(|b| t.start_f64 + b));
    }
    atoms.push(layout.tiles[idx.end - 1].end_f64);
    Ok(Configuration::new(atoms)
        .with_provenance("level", marked.level.to_string())
        .with_provenance("counts", join(&marked.counts)))
}

fn join(v: &[u64]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

pub struct BuilderState<'a> {
    pub hierarchy: &'a TowerHierarchy,
    pub chain: &'a QuasicrystalChain,
    pub model: &'a EnergyModel,
    pub base_level: usize,
    pub counts_history: Vec<Vec<u64>>,
    pub marked: MarkedSkeleton,
    /// `dense_set_value` at each stage, in field arithmetic.
    pub rho_history: Vec<Quad>,
    pub rho0: Quad,
    pub options: MinimizeOptions,
}

impl<'a> BuilderState<'a> {
    pub fn start(
        hierarchy: &'a TowerHierarchy,
        chain: &'a QuasicrystalChain,
        model: &'a EnergyModel,
        level: usize,
        counts: &[u64],
        options: &MinimizeOptions,
    ) -> Result<Self> {
        let rho0 = hierarchy.dense_set_value(level, counts)?;
        let marked = mark_level(hierarchy, chain, model, level, counts, options)?;
        Ok(BuilderState {
            hierarchy,
            chain,
            model,
            base_level: level,
            counts_history: vec![counts.to_vec()],
            marked,
            rho_history: vec![rho0],
            rho0,
            options: options.clone(),
        })
    }

    pub fn level(&self) -> usize {
        self.marked.level
    }

    pub fn counts(&self) -> &[u64] {
        self.counts_history.last().unwrap()
    }

    pub fn lift(&self, window: (f64, f64)) -> Result<Configuration> {
        lift(&self.marked, self.hierarchy, self.chain, window)
    }
}

/// Refinement: one level up, re-minimizing each loop from its lifted lower-level marks.
pub fn refine(mut state: BuilderState) -> Result<BuilderState> {
    let h = state.hierarchy;
    let level = state.level() + 1;
    let t = h.level(level)?;
    let counts = h.lift_counts(state.counts());
    let rho = h.dense_set_value(level, &counts)?;
    if rho != state.rho0 {
        return Err(FkError::Precondition(format!("rotation target changed under refinement: {rho} vs {}", state.rho0)));
    }
    let upper = h.layout(state.chain, level)?;
    let lower = h.layout(state.chain, level - 1)?;
    let marks = &state.marked.marks;
    let model = state.model;
    let options = &state.options;
    let per_loop: Vec<Result<(Vec<f64>, f64, f64)>> = (0..t.loop_count)
        .into_par_iter()
        .map(|j| {
            let tile = upper
                .canonical(j)
                .ok_or_else(|| FkError::Range(format!("no level-{level} supertile of type {j} in the chain")))?;
            let sub = tiles_in(&lower, (tile.start_f64, tile.end_f64));
            let mut init: Vec<f64> = Vec::new();
            for s in &lower.tiles[sub] {
                init.extend(marks[s.kind].iter().map(|b| s.start_f64 + b));
            }
            init.push(tile.end_f64);
            if init.len() as u64 != counts[j] + 1 {
                return Err(FkError::Precondition(format!(
                    "loop {j}: lifted {} atoms, expected {}",
                    init.len() - 1,
                    counts[j]
                )));
            }
            let res = minimize_from(model, &init, options)?;
            Ok((res.positions[..counts[j] as usize].iter().map(|x| x - tile.start_f64).collect(), res.energy, res.residual))
        })
        .collect();
    let per_loop = per_loop.into_iter().collect::<Result<Vec<_>>>()?;
    state.marked = MarkedSkeleton {
        level,
        counts: counts.clone(),
        heights: t.heights_f64.clone(),
        marks: per_loop.iter().map(|p| p.0.clone()).collect(),
        loop_energies: per_loop.iter().map(|p| p.1).collect(),
        residuals: per_loop.iter().map(|p| p.2).collect(),
        lift_energy_spread: state.marked.lift_energy_spread,
    };
    state.counts_history.push(counts);
    state.rho_history.push(rho);
    Ok(state)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BuildDiagnostics {
    pub base_level: usize,
    pub final_level: usize,
    pub rho0: f64,
    pub rho0_exact: QuadRepr,
    /// `dense_set_value` is identical at every stage.
    pub rho_constant: bool,
    pub counts_history: Vec<Vec<u64>>,
    pub atoms: usize,
    /// Every complete final-level supertile holds exactly `N_j` atoms.
    pub occupancy_exact: bool,
    pub occupancy_mismatches: usize,
    pub max_gap: f64,
    /// Largest base-level supertile height, the a priori gap bound.
    pub base_max_height: f64,
    pub max_gap_by_stage: Vec<f64>,
    /// Euler-Lagrange residual at atoms strictly inside final-level supertiles.
    pub el_residual_interior: f64,
    /// Same at supertile boundary atoms, where the construction does not impose criticality.
    pub el_residual_boundary: f64,
    pub slope: f64,
    pub lsq_slope: f64,
    pub bound_lo: f64,
    pub bound_hi: f64,
    pub slope_in_bounds: bool,
    pub lift_energy_spread: f64,
    pub monotone: bool,
    pub coincidences: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOutput {
    pub config: Configuration,
    pub marked: MarkedSkeleton,
    pub diagnostics: BuildDiagnostics,
}

/// Mark at `level`, refine `refine_depth` times, lift the last stage to `window`.
#[allow(clippy::too_many_arguments)]
pub fn build_for_counts(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    model: &EnergyModel,
    level: usize,
    counts: &[u64],
    refine_depth: usize,
    window: (f64, f64),
    options: &MinimizeOptions,
) -> Result<BuildOutput> {
    if level + refine_depth > hierarchy.depth() {
        return range(format!(
            "level {level} + refine depth {refine_depth} exceeds hierarchy depth {}",
            hierarchy.depth()
        ));
    }
    let mut state = BuilderState::start(hierarchy, chain, model, level, counts, options)?;
    let mut gaps = vec![max_gap(&state.lift(window)?.atoms)];
    for _ in 0..refine_depth {
        state = refine(state)?;
        gaps.push(max_gap(&state.lift(window)?.atoms));
    }
    let config = state.lift(window)?;
    let final_level = state.level();
    let xs = &config.atoms;

    let occ = hierarchy.loop_occupancy(chain, final_level, xs)?;
    let final_counts = state.counts();
    let mismatches = occ.visits.iter().filter(|v| v.count as u64 != final_counts[v.kind]).count();

    let layout = hierarchy.layout(chain, final_level)?;
    let (mut el_in, mut el_bd) = (0.0f64, 0.0f64);
    model.substrate.check_coverage(xs[0], *xs.last().unwrap())?;
    let mut ti = layout.tiles.partition_point(|t| t.start_f64 < xs[0]);
    for n in 1..xs.len() - 1 {
        while ti < layout.tiles.len() && layout.tiles[ti].end_f64 <= xs[n] {
            ti += 1;
        }
        let on_boundary = ti < layout.tiles.len() && layout.tiles[ti].start_f64 == xs[n];
        let r = model.residual_at(xs, n).abs();
        if on_boundary {
            el_bd = el_bd.max(r);
        } else {
            el_in = el_in.max(r);
        }
    }

    let rot = estimate_rotation(xs)?;
    let bounds = tower_bounds(hierarchy, chain, xs, final_level)?;
    let rho0 = state.rho0;
    let diagnostics = BuildDiagnostics {
        base_level: level,
        final_level,
        rho0: rho0.to_f64(),
        rho0_exact: QuadRepr::from(&rho0),
        rho_constant: state.rho_history.iter().all(|r| *r == rho0),
        counts_history: state.counts_history.clone(),
        atoms: xs.len(),
        occupancy_exact: mismatches == 0 && !occ.visits.is_empty(),
        occupancy_mismatches: mismatches,
        max_gap: *gaps.last().unwrap(),
        base_max_height: hierarchy.level(level)?.max_height_f64(),
        max_gap_by_stage: gaps,
        el_residual_interior: el_in,
        el_residual_boundary: el_bd,
        slope: rot.slope,
        lsq_slope: rot.lsq_slope,
        bound_lo: bounds.lo,
        bound_hi: bounds.hi,
        slope_in_bounds: bounds.contains(rot.slope),
        lift_energy_spread: state.marked.lift_energy_spread,
        monotone: config.is_monotone(),
        coincidences: config.coincidences(),
    };
    let config = config
        .with_provenance("base_level", level.to_string())
        .with_provenance("refine_depth", refine_depth.to_string());
    Ok(BuildOutput { config, marked: state.marked, diagnostics })
}

fn max_gap(xs: &[f64]) -> f64 {
    xs.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Approximation {
    pub level: usize,
    pub counts: Vec<u64>,
    /// `|1/ρ − Σ N_j ν_{l,j}| · ρ`
    pub relative_gap: f64,
    pub rho: f64,
}

/// Smallest level with counts whose dense-set value is within `tol` (relative, in `1/ρ`) of `rho`.
pub fn approximate_rho(hierarchy: &TowerHierarchy, rho: f64, tol: f64, max_level: usize) -> Result<Approximation> {
    if !(rho > 0.0) || !rho.is_finite() {
        return domain(format!("rho must be positive, got {rho}"));
    }
    if !(tol > 0.0) {
        return domain("tolerance must be positive");
    }
    let target = 1.0 / rho;
    let n = hierarchy.rule().len();
    let mut best = (f64::INFINITY, 0);
    for level in 0..=max_level {
        let nu = hierarchy.measures_f64(level);
        let total: f64 = nu.iter().sum();
        let init = (target / total).round().max(1.0);
        if init > 1e15 {
            continue;
        }
        let mut counts = vec![init as u64; n];
        let sum = |c: &[u64]| c.iter().zip(&nu).map(|(&k, m)| k as f64 * m).sum::<f64>();
        let mut gap = (target - sum(&counts)).abs();
        loop {
            let mut step: Option<(usize, bool, f64)> = None;
            for j in 0..n {
                for up in [true, false] {
                    if !up && counts[j] == 1 {
                        continue;
                    }
                    let s = sum(&counts) + if up { nu[j] } else { -nu[j] };
                    let g = (target - s).abs();
                    if g < gap && step.is_none_or(|(_, _, bg)| g < bg) {
                        step = Some((j, up, g));
                    }
                }
            }
            let Some((j, up, g)) = step else { break };
            if up {
                counts[j] += 1;
            } else {
                counts[j] -= 1;
            }
            gap = g;
        }
        let rel = gap / target;
        if rel <= tol {
            return Ok(Approximation { level, rho: 1.0 / sum(&counts), counts, relative_gap: rel });
        }
        if rel < best.0 {
            best = (rel, level);
        }
    }
    Err(FkError::Approximation { best_gap: best.0, level: best.1 })
}
