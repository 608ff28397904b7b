//! Minimal segments: global minimizers of `H_p` with both endpoints fixed.

use rayon::prelude::*;
use serde::Serialize;

use crate::chain::QuasicrystalChain;
use crate::energy::EnergyModel;
use crate::error::{domain, FkError, Result};
use crate::tower::TowerHierarchy;

#[derive(Clone, Copy, Debug)]
pub struct SegmentProblem<'a> {
    pub model: &'a EnergyModel,
    pub left: f64,
    pub right: f64,
    /// Number of bonds `p`; the segment has `p + 1` atoms.
    pub bonds: usize,
}

impl<'a> SegmentProblem<'a> {
    pub fn new(model: &'a EnergyModel, left: f64, right: f64, bonds: usize) -> Result<Self> {
        if bonds < 1 {
            return domain("a segment needs at least one bond");
        }
        if !(left <= right) {
            return domain(format!("endpoints must satisfy left ≤ right, got ({left}, {right})"));
        }
        model.substrate.check_coverage(left, right)?;
        Ok(SegmentProblem { model, left, right, bonds })
    }

    pub fn atom_count(&self) -> usize {
        self.bonds + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Number of low-discrepancy perturbed starts.
    pub perturbed_starts: usize,
    pub seed: u64,
    pub parallel: bool,
    /// Extra start (full segment including endpoints), tried first.
    pub initial: Option<Vec<f64>>,
    /// Longest subsegment (in bonds) re-minimized on its own after the multistart; 0 disables.
    pub repair_window: usize,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { tol: 1e-10, max_iter: 200, perturbed_starts: 8, seed: 0, parallel: true, initial: None, repair_window: 6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SegmentResult {
    pub positions: Vec<f64>,
    pub energy: f64,
    /// Max-norm of the interior gradient.
    pub residual: f64,
    pub iterations: usize,
    pub starts_used: usize,
    pub converged_starts: usize,
    pub start: String,
    pub converged: bool,
    pub monotone: bool,
    pub coincidences: usize,
}

/// Multistart damped Newton over the monotone cone.
pub fn minimize_segment(problem: &SegmentProblem, options: &MinimizeOptions) -> Result<SegmentResult> {
    let starts = enumerate_starts(problem, options);
    let run = |(label, start): &(String, Vec<f64>)| local_solve(problem.model, start, options, label);
    let candidates: Vec<SegmentResult> = if options.parallel {
        starts.par_iter().map(run).collect()
    } else {
        starts.iter().map(run).collect()
    };
    let best = reduce(candidates, starts.len())?;
    Ok(repair(problem.model, best, options))
}

/// Replaces subsegments of up to `repair_window` bonds by their own minimizers while that lowers
/// the total energy, re-solving the whole segment after each splice.
fn repair(model: &EnergyModel, mut best: SegmentResult, options: &MinimizeOptions) -> SegmentResult {
    let p = best.positions.len() - 1;
    let k = options.repair_window.min(p - 1);
    if k < 2 {
        return best;
    }
    let sub_options = MinimizeOptions { repair_window: 0, parallel: false, perturbed_starts: 4, initial: None, ..options.clone() };
    let windows: Vec<(usize, usize)> = (0..p).flat_map(|a| (2..=k).filter(move |s| a + s <= p).map(move |s| (a, a + s))).collect();
    for _ in 0..20 {
        let current = &best.positions;
        let try_window = |&(a, b): &(usize, usize)| -> Option<(f64, usize, Vec<f64>)> {
            let sub = &current[a..=b];
            let problem = SegmentProblem { model, left: sub[0], right: sub[b - a], bonds: b - a };
            let res = minimize_segment(&problem, &sub_options).ok()?;
            let gain = model.energy_unchecked(sub) - res.energy;
            (gain > 1e-12 * (1.0 + best.energy.abs())).then_some((gain, a, res.positions))
        };
        let gains: Vec<Option<(f64, usize, Vec<f64>)>> = if options.parallel {
            windows.par_iter().map(try_window).collect()
        } else {
            windows.iter().map(try_window).collect()
        };
        let Some((_, a, sub)) = gains.into_iter().flatten().fold(None, |acc: Option<(f64, usize, Vec<f64>)>, g| match acc {
            Some(x) if x.0 >= g.0 => Some(x),
            _ => Some(g),
        }) else {
            break;
        };
        let mut spliced = best.positions.clone();
        spliced[a..a + sub.len()].copy_from_slice(&sub);
        let candidate = local_solve(model, &spliced, options, "repaired");
        if !(candidate.converged && candidate.energy < best.energy) {
            break;
        }
        best = SegmentResult { starts_used: best.starts_used, converged_starts: best.converged_starts, ..candidate };
    }
    best
}

/// Local solve from a given full segment; its endpoints stay pinned.
pub fn minimize_from(model: &EnergyModel, start: &[f64], options: &MinimizeOptions) -> Result<SegmentResult> {
    if start.len() < 2 {
        return domain("a segment needs at least two atoms");
    }
    SegmentProblem::new(model, start[0], *start.last().unwrap(), start.len() - 1)?;
    let mut first = start.to_vec();
    project_monotone(&mut first);
    reduce(vec![local_solve(model, &first, options, "given")], 1)
}

fn reduce(candidates: Vec<SegmentResult>, starts_used: usize) -> Result<SegmentResult> {
    let converged: Vec<&SegmentResult> = candidates.iter().filter(|c| c.converged).collect();
    let n_conv = converged.len();
    let pick = |pool: &[&SegmentResult]| -> SegmentResult {
        let e_min = pool.iter().map(|c| c.energy).fold(f64::INFINITY, f64::min);
        let tie = 1e-12 * (1.0 + e_min.abs());
        let best = pool
            .iter()
            .filter(|c| c.energy <= e_min + tie)
            .min_by(|a, b| lex_cmp(&a.positions, &b.positions))
            .expect("nonempty pool");
        SegmentResult { starts_used, converged_starts: n_conv, ..(*best).clone() }
    };
    if n_conv > 0 {
        return Ok(pick(&converged));
    }
    let best = candidates
        .iter()
        .min_by(|a, b| a.residual.total_cmp(&b.residual))
        .expect("at least one start");
    let best = SegmentResult { starts_used, converged_starts: 0, ..best.clone() };
    Err(FkError::Convergence {
        message: format!("best residual {:e} after {} iterations", best.residual, best.iterations),
        best: Box::new(best),
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

fn enumerate_starts(problem: &SegmentProblem, options: &MinimizeOptions) -> Vec<(String, Vec<f64>)> {
    let (l, r, p) = (problem.left, problem.right, problem.bonds);
    let equal: Vec<f64> = (0..=p).map(|i| if i == p { r } else { l + (r - l) * i as f64 / p as f64 }).collect();
    let mut starts = Vec::new();
    if let Some(init) = &options.initial {
        if init.len() == p + 1 {
            let mut s = init.clone();
            s[0] = l;
            s[p] = r;
            project_monotone(&mut s);
            starts.push(("given".to_string(), s));
        }
    }
    starts.push(("equal".to_string(), equal.clone()));
    if let Some(chain) = problem.model.substrate.chain() {
        let snapped: Vec<f64> = equal
            .iter()
            .enumerate()
            .map(|(i, &x)| if i == 0 || i == p { x } else { chain.positions()[chain.nearest_atom(x)].clamp(l, r) })
            .collect();
        starts.push(("snap".to_string(), snapped));
        if let Some(g) = grid_start(problem.model, l, r, p) {
            starts.push(("grid".to_string(), g));
        }
    }
    let spacing = (r - l) / p as f64;
    let shift = (splitmix64(options.seed) >> 11) as f64 / (1u64 << 53) as f64;
    const A1: f64 = 0.754_877_666_246_692_7;
    const A2: f64 = 0.569_840_290_998_053_2;
    for s in 0..options.perturbed_starts {
        let mut x = equal.clone();
        for (i, xi) in x.iter_mut().enumerate().take(p).skip(1) {
            let u = (shift + (s + 1) as f64 * A1 + i as f64 * A2).fract();
            *xi += 0.9 * spacing * (u - 0.5);
        }
        project_monotone(&mut x);
        starts.push((format!("perturbed-{s}"), x));
    }
    starts
}

/// Best non-decreasing segment on a banded grid around equal spacing, by dynamic programming.
fn grid_start(model: &EnergyModel, l: f64, r: f64, p: usize) -> Option<Vec<f64>> {
    if p < 2 || model.substrate.is_flat() {
        return None;
    }
    let spacing = (r - l) / p as f64;
    let half = (1.5 * spacing).max(3.0 * model.range());
    let mut h = model.range() / 8.0;
    let mut g = (2.0 * half / h).ceil() as usize + 1;
    while (p as f64) * (g as f64).powi(2) > 2e7 {
        h *= 1.5;
        g = (2.0 * half / h).ceil() as usize + 1;
    }
    let grid: Vec<Vec<f64>> = (1..p)
        .map(|i| {
            let c = l + spacing * i as f64;
            let mut pts: Vec<f64> = (0..g).map(|k| (c - half + k as f64 * h).clamp(l, r)).collect();
            pts.dedup();
            pts
        })
        .collect();
    let u = |a: f64, b: f64| model.interaction.value(a - b);
    let v0 = model.substrate.value_unchecked(l);
    let mut cost: Vec<f64> = grid[0].iter().map(|&x| v0 + u(l, x)).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(p - 2);
    for i in 1..p - 1 {
        let (prev, cur) = (&grid[i - 1], &grid[i]);
        let vp: Vec<f64> = prev.iter().map(|&x| model.substrate.value_unchecked(x)).collect();
        let mut next = vec![f64::INFINITY; cur.len()];
        let mut arg = vec![0; cur.len()];
        for (k, &x) in cur.iter().enumerate() {
            for (f, &y) in prev.iter().enumerate() {
                if y > x {
                    break;
                }
                let c = cost[f] + vp[f] + u(y, x);
                if c < next[k] {
                    next[k] = c;
                    arg[k] = f;
                }
            }
        }
        back.push(arg);
        cost = next;
    }
    let last = &grid[p - 2];
    let mut k = (0..last.len())
        .filter(|&k| cost[k].is_finite())
        .min_by(|&a, &b| {
            let ea = cost[a] + model.substrate.value_unchecked(last[a]) + u(last[a], r);
            let eb = cost[b] + model.substrate.value_unchecked(last[b]) + u(last[b], r);
            ea.total_cmp(&eb)
        })?;
    let mut x = vec![0.0; p + 1];
    x[0] = l;
    x[p] = r;
    for i in (1..p).rev() {
        x[i] = grid[i - 1][k];
        if i > 1 {
            k = back[i - 2][k];
        }
    }
    Some(x)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Euclidean projection of the interior onto `θ_0 ≤ θ_1 ≤ … ≤ θ_p` with the endpoints fixed.
pub(crate) fn project_monotone(theta: &mut [f64]) {
    let n = theta.len();
    if n < 3 {
        return;
    }
    let (lo, hi) = (theta[0], theta[n - 1]);
    // pool adjacent violators on the interior
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(n - 2);
    for &x in &theta[1..n - 1] {
        let mut sum = x;
        let mut cnt = 1;
        while let Some(&(s, c)) = blocks.last() {
            if s / c as f64 > sum / cnt as f64 {
                sum += s;
                cnt += c;
                blocks.pop();
            } else {
                break;
            }
        }
        blocks.push((sum, cnt));
    }
    let mut i = 1;
    for (s, c) in blocks {
        let v = (s / c as f64).clamp(lo, hi);
        for _ in 0..c {
            theta[i] = v;
            i += 1;
        }
    }
}

/// Solves `(T + μI) x = b` for symmetric tridiagonal `T` by `LDLᵀ`; `None` unless positive definite.
pub(crate) fn solve_tridiagonal(diag: &[f64], off: &[f64], shift: f64, b: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut d = vec![0.0; n];
    let mut l = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let mut di = diag[i] + shift;
        if i > 0 {
            di -= l[i - 1] * l[i - 1] * d[i - 1];
        }
        if !(di > 0.0) || !di.is_finite() {
            return None;
        }
        d[i] = di;
        if i + 1 < n {
            l[i] = off[i] / di;
        }
    }
    let mut y = b.to_vec();
    for i in 1..n {
        y[i] -= l[i - 1] * y[i - 1];
    }
    for i in 0..n {
        y[i] /= d[i];
    }
    for i in (0..n.saturating_sub(1)).rev() {
        y[i] -= l[i] * y[i + 1];
    }
    Some(y)
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn local_solve(model: &EnergyModel, start: &[f64], options: &MinimizeOptions, label: &str) -> SegmentResult {
    let mut theta = start.to_vec();
    let p = theta.len() - 1;
    let finish = |theta: Vec<f64>, iterations: usize| {
        let energy = model.energy_unchecked(&theta);
        let residual = if p >= 2 { max_norm(&model.gradient_unchecked(&theta)) } else { 0.0 };
        let monotone = theta.windows(2).all(|w| w[0] <= w[1]);
        let coincidences = theta.windows(2).filter(|w| w[0] == w[1]).count();
        SegmentResult {
            positions: theta,
            energy,
            residual,
            iterations,
            starts_used: 1,
            converged_starts: 0,
            start: label.to_string(),
            converged: residual.is_finite() && residual <= options.tol,
            monotone,
            coincidences,
        }
    };
    if p < 2 {
        return finish(theta, 0);
    }
    let mut energy = model.energy_unchecked(&theta);
    let mut grad = model.gradient_unchecked(&theta);
    let mut iter = 0;
    while iter < options.max_iter {
        let gnorm = max_norm(&grad);
        if gnorm <= options.tol {
            break;
        }
        iter += 1;
        let (diag, off) = model.hessian_unchecked(&theta);
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs())).max(1.0);
        let mut mu = 0.0;
        let mut newton = None;
        while newton.is_none() && mu < 1e12 * scale {
            newton = solve_tridiagonal(&diag, &off, mu, &neg);
            if newton.is_none() {
                mu = if mu == 0.0 { 1e-8 * scale } else { mu * 4.0 };
            }
        }
        let pure_newton = mu == 0.0;
        let mut accepted = false;
        for dir in newton.into_iter().chain(std::iter::once(neg.iter().map(|g| g / scale).collect())) {
            let mut t = 1.0;
            while t > 1e-14 {
                let mut trial = theta.clone();
                for (k, s) in dir.iter().enumerate() {
                    trial[k + 1] += t * s;
                }
                project_monotone(&mut trial);
                let e = model.energy_unchecked(&trial);
                let decrease: f64 = grad.iter().zip(&trial[1..p]).zip(&theta[1..p]).map(|((g, a), b)| g * (a - b)).sum();
                let g_trial = model.gradient_unchecked(&trial);
                let armijo = e <= energy + 1e-4 * decrease;
                // near convergence energy differences drown in rounding; accept gradient progress
                let close = pure_newton && t == 1.0 && max_norm(&g_trial) < 0.5 * gnorm && e <= energy + 1e-12 * (1.0 + energy.abs());
                if armijo || close {
                    theta = trial;
                    energy = e;
                    grad = g_trial;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if accepted {
                break;
            }
        }
        if !accepted {
            break;
        }
    }
    finish(theta, iter)
}

/// Max-norm Euler-Lagrange residual over interior atoms, and where it is attained.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CriticalReport {
    pub max_residual: f64,
    pub worst_index: usize,
}

pub fn verify_critical(model: &EnergyModel, segment: &[f64]) -> Result<CriticalReport> {
    let g = model.energy_gradient(segment)?;
    let (worst, max) = g.iter().enumerate().fold((0, 0.0f64), |(wi, m), (i, x)| if x.abs() > m { (i, x.abs()) } else { (wi, m) });
    Ok(CriticalReport { max_residual: max, worst_index: worst + 1 })
}

/// Marked points `0 = b_0 < … < b_{N−1} < L` minimizing the loop energy on one supertile type.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopMarks {
    pub level: usize,
    pub loop_index: usize,
    pub count: u64,
    pub height: f64,
    /// Offsets from the loop start, `marks[0] = 0`.
    pub marks: Vec<f64>,
    pub energy: f64,
    pub residual: f64,
    /// Start of the supertile occurrence used as the lift.
    pub lift_start: f64,
    /// Largest loop-energy difference between the lift and other occurrences of the loop in the chain.
    pub lift_energy_spread: f64,
}

pub fn minimize_loop_segment(
    hierarchy: &TowerHierarchy,
    chain: &QuasicrystalChain,
    model: &EnergyModel,
    level: usize,
    loop_index: usize,
    count: u64,
    options: &MinimizeOptions,
) -> Result<LoopMarks> {
    if count < 1 {
        return domain("loop counts must be at least 1");
    }
    let t = hierarchy.level(level)?;
    if loop_index >= t.loop_count {
        return domain(format!("loop {loop_index} does not exist at level {level}"));
    }
    let height = t.heights_f64[loop_index];
    let r = model.range();
    if t.min_height_f64() < r {
        return Err(FkError::Precondition(format!(
            "level-{level} supertiles (min height {}) are smaller than the potential range {r}; use a deeper level",
            t.min_height_f64()
        )));
    }
    let layout = hierarchy.layout(chain, level)?;
    let tile = *layout
        .canonical(loop_index)
        .ok_or_else(|| FkError::Range(format!("no level-{level} supertile of type {loop_index} in the chain")))?;
    let problem = SegmentProblem::new(model, tile.start_f64, tile.end_f64, count as usize)?;
    let result = minimize_segment(&problem, options)?;
    let marks: Vec<f64> = result.positions[..count as usize].iter().map(|x| x - tile.start_f64).collect();
    let mut spread = 0.0f64;
    for other in layout.tiles.iter().filter(|o| o.kind == loop_index) {
        if model.substrate.check_coverage(other.start_f64, other.end_f64).is_err() {
            continue;
        }
        let mut seg: Vec<f64> = marks.iter().map(|b| other.start_f64 + b).collect();
        seg.push(other.end_f64);
        spread = spread.max((model.energy_unchecked(&seg) - result.energy).abs());
    }
    Ok(LoopMarks {
        level,
        loop_index,
        count,
        height,
        marks,
        energy: result.energy,
        residual: result.residual,
        lift_start: tile.start_f64,
        lift_energy_spread: spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::Interaction;

    fn free(rest: f64) -> EnergyModel {
        EnergyModel::flat(Interaction::quadratic(1.0, rest).unwrap())
    }

    #[test]
    fn free_chain_is_equally_spaced() {
        let m = free(1.0);
        let r = minimize_segment(&SegmentProblem::new(&m, 0.0, 3.0, 3).unwrap(), &MinimizeOptions::default()).unwrap();
        for (x, e) in r.positions.iter().zip([0.0, 1.0, 2.0, 3.0]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!(r.energy.abs() < 1e-20);
        let m = free(2.7);
        let r = minimize_segment(&SegmentProblem::new(&m, 1.0, 6.0, 5).unwrap(), &MinimizeOptions::default()).unwrap();
        for (i, x) in r.positions.iter().enumerate() {
            assert!((x - (1.0 + i as f64)).abs() < 1e-12);
        }
        assert_eq!(r.positions[0], 1.0);
        assert_eq!(r.positions[5], 6.0);
    }

    #[test]
    fn tridiagonal_solver() {
        let x = solve_tridiagonal(&[2.0, 2.0, 2.0], &[-1.0, -1.0], 0.0, &[1.0, 0.0, 1.0]).unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!(solve_tridiagonal(&[1.0, -1.0], &[0.0], 0.0, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn monotone_projection() {
        let mut t = vec![0.0, 2.0, 1.0, 3.5, 3.0];
        project_monotone(&mut t);
        assert_eq!(t, vec![0.0, 1.5, 1.5, 3.0, 3.0]);
        let mut t = vec![0.0, -1.0, 0.5, 1.0];
        project_monotone(&mut t);
        assert_eq!(t, vec![0.0, 0.0, 0.5, 1.0]);
    }

    #[test]
    fn symmetric_single_atom_is_critical() {
        let m = free(1.0);
        let rep = verify_critical(&m, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(rep.max_residual, 0.0);
    }
}
