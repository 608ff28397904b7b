//! Kakutani-Rohlin towers of a substitution hull: one loop per supertile type and level.

use serde::{Deserialize, Serialize};

use crate::chain::QuasicrystalChain;
use crate::error::{domain, range, Result};
use crate::field::{Coord, Quad, QuadRepr};
use crate::substitution::{IntMatrix, Letter, SubstitutionRule};

#[derive(Clone, Debug, PartialEq)]
pub struct TowerLevel {
    pub level: usize,
    pub loop_count: usize,
    pub heights: Vec<Quad>,
    pub measures: Vec<Quad>,
    pub heights_f64: Vec<f64>,
    pub measures_f64: Vec<f64>,
}

impl TowerLevel {
    /// `ν(C_l) = Σ_j ν_{l,j}`.
    pub fn total_measure(&self) -> Quad {
        self.measures.iter().skip(1).fold(self.measures[0], |acc, x| acc + *x)
    }

    pub fn total_measure_f64(&self) -> f64 {
        self.total_measure().to_f64()
    }

    /// `Σ_j ν_{l,j} L_{l,j}`, which is 1 at every level.
    pub fn normalization(&self) -> Quad {
        let f = self.heights[0].field;
        self.measures.iter().zip(&self.heights).fold(f.zero(), |acc, (m, h)| acc + *m * *h)
    }

    pub fn max_height_f64(&self) -> f64 {
        self.heights_f64.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_height_f64(&self) -> f64 {
        self.heights_f64.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Tower levels `0..=depth`; level `l` loop `j` is the supertile `σ^{kl}(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerHierarchy {
    rule: SubstitutionRule,
    step: usize,
    homology: IntMatrix,
    levels: Vec<TowerLevel>,
    perron: Quad,
}

/// Builds levels `0..=depth` with the smallest step `k` making `M^k` entrywise positive.
pub fn build_hierarchy(rule: &SubstitutionRule, depth: usize) -> Result<TowerHierarchy> {
    let k = rule.primitivity_power().ok_or_else(|| crate::FkError::Domain("substitution is not primitive".into()))?;
    TowerHierarchy::with_step(rule, depth, k)
}

impl TowerHierarchy {
    /// Levels built from `σ^step`-supertiles. Any `step ≥ 1` is accepted for a primitive rule;
    /// only steps with `M^step > 0` give towers meeting every lower tower.
    pub fn with_step(rule: &SubstitutionRule, depth: usize, step: usize) -> Result<Self> {
        if depth < 1 {
            return domain("hierarchy depth must be at least 1");
        }
        if step < 1 {
            return domain("level step must be at least 1");
        }
        if rule.primitivity_power().is_none() {
            return domain("substitution is not primitive");
        }
        let field = rule.field();
        let homology = rule.power_matrix(step);
        let perron = rule.perron_eigenvalue_exact()?;
        let shrink = perron.pow(step as u32).inv().expect("Perron eigenvalue is nonzero");
        let freq = rule.letter_frequencies_exact()?;
        let mean = freq.iter().zip(rule.lengths()).fold(field.zero(), |acc, (f, l)| acc + *f * *l);
        let inv_mean = mean.inv().expect("positive mean length");
        let n = rule.len();

        let mut heights: Vec<Quad> = rule.lengths().to_vec();
        let mut measures: Vec<Quad> = freq.iter().map(|f| *f * inv_mean).collect();
        let mut levels = Vec::with_capacity(depth + 1);
        for level in 0..=depth {
            levels.push(TowerLevel {
                level,
                loop_count: n,
                heights_f64: heights.iter().map(Quad::to_f64).collect(),
                measures_f64: measures.iter().map(Quad::to_f64).collect(),
                heights: heights.clone(),
                measures: measures.clone(),
            });
            heights = (0..n)
                .map(|j| (0..n).fold(field.zero(), |acc, i| acc + heights[i] * homology[i][j]))
                .collect();
            measures = measures.iter().map(|m| *m * shrink).collect();
        }
        Ok(TowerHierarchy { rule: rule.clone(), step, homology, levels, perron })
    }

    pub fn rule(&self) -> &SubstitutionRule {
        &self.rule
    }

    /// Substitution power `k` between consecutive levels.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Level-to-level matrix `M^k`: entry `(i, j)` counts level-`l` loops `i` in loop `j` of level `l+1`.
    pub fn homology(&self) -> &IntMatrix {
        &self.homology
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[TowerLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> Result<&TowerLevel> {
        match self.levels.get(l) {
            Some(t) => Ok(t),
            None => range(format!("level {l} exceeds hierarchy depth {}", self.depth())),
        }
    }

    /// Float measures at any level, including levels beyond the exact depth.
    pub fn measures_f64(&self, l: usize) -> Vec<f64> {
        if let Some(t) = self.levels.get(l) {
            return t.measures_f64.clone();
        }
        let scale = self.perron.to_f64().powi((self.step * l) as i32);
        self.levels[0].measures_f64.iter().map(|m| m / scale).collect()
    }

    /// `ρ = 1 / Σ_j N_{l,j} ν_{l,j}`, exactly.
    pub fn dense_set_value(&self, l: usize, counts: &[u64]) -> Result<Quad> {
        let t = self.level(l)?;
        check_counts(counts, t.loop_count)?;
        let f = self.rule.field();
        let s = counts.iter().zip(&t.measures).fold(f.zero(), |acc, (&c, m)| acc + *m * c as i64);
        Ok(s.inv().expect("positive sum"))
    }

    /// Float version of [`Self::dense_set_value`], usable at any level.
    pub fn dense_set_value_f64(&self, l: usize, counts: &[u64]) -> Result<f64> {
        check_counts(counts, self.rule.len())?;
        let nu = self.measures_f64(l);
        Ok(1.0 / counts.iter().zip(&nu).map(|(&c, m)| c as f64 * m).sum::<f64>())
    }

    /// Counts one level up: `N_{l+1,j} = Σ_i m_{i,j} N_{l,i}`.
    pub fn lift_counts(&self, counts: &[u64]) -> Vec<u64> {
        let n = counts.len();
        (0..n).map(|j| (0..n).map(|i| self.homology[i][j] as u64 * counts[i]).sum()).collect()
    }

    /// Level-`l` supertile decomposition of `chain`, restricted to complete supertiles.
    pub fn layout(&self, chain: &QuasicrystalChain, level: usize) -> Result<SupertileLayout> {
        if chain.rule() == &self.rule {
            SupertileLayout::new(self, chain, level)
        } else {
            domain("chain and hierarchy use different substitutions")
        }
    }

    /// `π_l(x)`: the level-`l` supertile containing `x` and the offset from its left end.
    pub fn project(&self, chain: &QuasicrystalChain, x: f64, level: usize) -> Result<SkeletonPoint> {
        self.layout(chain, level)?.project(x)
    }

    /// Maps a level-`l+1` point to level `l` through the supertile decomposition `τ_l`.
    pub fn coarsen(&self, point: &SkeletonPoint) -> Result<SkeletonPoint> {
        if point.level == 0 {
            return domain("level 0 has no coarser level");
        }
        let lower = self.level(point.level - 1)?;
        let word = self.rule.expand_word(point.loop_index, self.step)?;
        let mut cum = 0.0;
        for (idx, &i) in word.iter().enumerate() {
            let h = lower.heights_f64[i];
            if point.offset < cum + h || idx + 1 == word.len() {
                return Ok(SkeletonPoint { level: point.level - 1, loop_index: i, offset: point.offset - cum });
            }
            cum += h;
        }
        unreachable!("supertile words are nonempty")
    }

    /// Per-loop complete-visit counts of `config` at `level`.
    pub fn loop_occupancy(&self, chain: &QuasicrystalChain, level: usize, config: &[f64]) -> Result<Occupancy> {
        let layout = self.layout(chain, level)?;
        Ok(layout.occupancy(config))
    }

    pub fn to_json(&self) -> TowersJson {
        TowersJson {
            k: self.step,
            homology: self.homology.clone(),
            levels: self
                .levels
                .iter()
                .map(|t| LevelJson {
                    level: t.level,
                    heights: t.heights_f64.clone(),
                    measures: t.measures_f64.clone(),
                    heights_exact: t.heights.iter().map(QuadRepr::from).collect(),
                    measures_exact: t.measures.iter().map(QuadRepr::from).collect(),
                    total_measure: t.total_measure_f64(),
                })
                .collect(),
        }
    }
}

fn check_counts(counts: &[u64], n: usize) -> Result<()> {
    if counts.len() != n {
        return domain(format!("expected {n} counts, got {}", counts.len()));
    }
    if counts.iter().any(|&c| c < 1) {
        return domain("counts must be positive integers");
    }
    Ok(())
}

/// A point of the level-`l` skeleton: loop `j` and offset `u ∈ [0, L_{l,j})`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonPoint {
    pub level: usize,
    pub loop_index: Letter,
    pub offset: f64,
}

/// One complete supertile of a layout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Supertile {
    pub kind: Letter,
    pub start: Coord,
    pub end: Coord,
    pub start_f64: f64,
    pub end_f64: f64,
}

/// The complete level-`l` supertiles inside a chain's coverage, ordered left to right.
#[derive(Clone, Debug, PartialEq)]
pub struct SupertileLayout {
    pub level: usize,
    pub tiles: Vec<Supertile>,
    /// Index into `tiles` of the supertile starting at 0.
    pub origin: usize,
}

impl SupertileLayout {
    fn new(h: &TowerHierarchy, chain: &QuasicrystalChain, level: usize) -> Result<Self> {
        let rule = chain.rule();
        let field = chain.field();
        let denom = chain.denom();
        let n = rule.len();
        // exact supertile lengths over the chain's denominator
        let mut sizes: Vec<Coord> = chain.tile_lengths().to_vec();
        for _ in 0..level {
            sizes = (0..n)
                .map(|j| (0..n).fold(Coord::ZERO, |acc, i| acc + sizes[i].scale(h.homology[i][j])))
                .collect();
        }
        let sizes_f64: Vec<f64> = sizes.iter().map(|c| c.to_f64(&field, denom)).collect();
        let seed = chain.seed();
        let kl = h.step * level;
        let offset = kl.div_ceil(seed.power) * seed.power - kl;
        let (lo, hi) = chain.coverage();
        let longest = sizes_f64.iter().cloned().fold(0.0, f64::max);
        let total = |w: &[Letter]| w.iter().map(|&l| sizes_f64[l]).sum::<f64>();
        let right = seed.grow(rule, seed.right, offset, |w| total(w) > hi + longest);
        let left = seed.grow(rule, seed.left, offset, |w| total(w) > -lo + longest);
        let (first, last) = (chain.atoms()[0], *chain.atoms().last().unwrap());

        let mut tiles = Vec::new();
        let mut pos = Coord::ZERO;
        for &kind in left.iter().rev() {
            let start = pos - sizes[kind];
            if start.cmp_in(first, &field).is_lt() {
                break;
            }
            tiles.push(supertile(kind, start, pos, &field, denom));
            pos = start;
        }
        tiles.reverse();
        let origin = tiles.len();
        let mut pos = Coord::ZERO;
        for &kind in &right {
            let end = pos + sizes[kind];
            if end.cmp_in(last, &field).is_gt() {
                break;
            }
            tiles.push(supertile(kind, pos, end, &field, denom));
            pos = end;
        }
        if tiles.is_empty() {
            return range(format!("no complete level-{level} supertile inside the chain; widen the chain"));
        }
        Ok(SupertileLayout { level, tiles, origin })
    }

    /// Index of the supertile whose half-open span `[start, end)` contains `x`.
    pub fn locate(&self, x: f64) -> Result<usize> {
        let i = self.tiles.partition_point(|t| t.start_f64 <= x);
        if i == 0 || x >= self.tiles[i - 1].end_f64 {
            return range(format!("x = {x} is outside the level-{} supertile layout", self.level));
        }
        Ok(i - 1)
    }

    pub fn project(&self, x: f64) -> Result<SkeletonPoint> {
        let t = &self.tiles[self.locate(x)?];
        Ok(SkeletonPoint { level: self.level, loop_index: t.kind, offset: x - t.start_f64 })
    }

    /// Distance from `x` to the nearest boundary of its supertile.
    pub fn floor_margin(&self, x: f64) -> Result<f64> {
        let t = &self.tiles[self.locate(x)?];
        Ok((x - t.start_f64).min(t.end_f64 - x))
    }

    /// First supertile of type `kind` at or right of 0, else the nearest one to its left.
    pub fn canonical(&self, kind: Letter) -> Option<&Supertile> {
        self.tiles[self.origin..]
            .iter()
            .find(|t| t.kind == kind)
            .or_else(|| self.tiles[..self.origin].iter().rev().find(|t| t.kind == kind))
    }

    /// Complete visits `[c, c+L)` with `θ_first ≤ c` and `c + L ≤ θ_last`.
    pub fn occupancy(&self, config: &[f64]) -> Occupancy {
        let mut occ = Occupancy { per_loop: vec![Vec::new(); self.kinds()], visits: Vec::new() };
        let (Some(&first), Some(&last)) = (config.first(), config.last()) else {
            return occ;
        };
        for t in &self.tiles {
            if t.start_f64 < first || t.end_f64 > last {
                continue;
            }
            let count = count_half_open(config, t.start_f64, t.end_f64);
            occ.per_loop[t.kind].push(count);
            occ.visits.push(LoopVisit { kind: t.kind, start: t.start_f64, end: t.end_f64, count });
        }
        occ
    }

    fn kinds(&self) -> usize {
        self.tiles.iter().map(|t| t.kind + 1).max().unwrap_or(0)
    }
}

fn supertile(kind: Letter, start: Coord, end: Coord, field: &crate::field::QuadField, denom: i64) -> Supertile {
    Supertile { kind, start, end, start_f64: start.to_f64(field, denom), end_f64: end.to_f64(field, denom) }
}

/// Number of sorted `xs` in `[a, b)`.
pub(crate) fn count_half_open(xs: &[f64], a: f64, b: f64) -> usize {
    xs.partition_point(|&x| x < b).saturating_sub(xs.partition_point(|&x| x < a))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LoopVisit {
    pub kind: Letter,
    pub start: f64,
    pub end: f64,
    pub count: usize,
}

/// Visit counts grouped by loop, and the visits in order along the line.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Occupancy {
    pub per_loop: Vec<Vec<usize>>,
    pub visits: Vec<LoopVisit>,
}

impl Occupancy {
    /// Minimal visit count per loop, `None` for loops never visited.
    pub fn min_counts(&self) -> Vec<Option<usize>> {
        self.per_loop.iter().map(|v| v.iter().copied().min()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelJson {
    pub level: usize,
    pub heights: Vec<f64>,
    pub measures: Vec<f64>,
    pub heights_exact: Vec<QuadRepr>,
    pub measures_exact: Vec<QuadRepr>,
    pub total_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowersJson {
    pub levels: Vec<LevelJson>,
    pub homology: IntMatrix,
    pub k: usize,
}
