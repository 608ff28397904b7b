//! Substitution quasicrystals on a finite window, with exact coordinates and local patterns.

use std::collections::BTreeSet;

use num_integer_lcm::lcm;
use serde::{Deserialize, Serialize};

use crate::error::{domain, range, FkError, Result};
use crate::field::{Coord, QuadField};
use crate::substitution::{Letter, RuleSpec, SubstitutionRule, Word};

mod num_integer_lcm {
    pub fn gcd(mut a: i128, mut b: i128) -> i128 {
        while b != 0 {
            let t = a % b;
            a = b;
            b = t;
        }
        a.abs()
    }

    pub fn lcm(a: i128, b: i128) -> i128 {
        a / gcd(a, b) * b
    }
}

/// Seed `a.b` of a two-sided periodic point of the substitution: the left half is the
/// limit of `σ^{pm}(a)` (suffix-stable), the right half the limit of `σ^{pm}(b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seed {
    pub left: Letter,
    pub right: Letter,
    pub power: usize,
}

impl Seed {
    /// Lexicographically first legal pair `a.b` with `σ^p(a)` ending in `a` and `σ^p(b)`
    /// starting with `b`, for the smallest even `p` that admits one.
    pub fn choose(rule: &SubstitutionRule) -> Result<Seed> {
        let legal = legal_pairs(rule);
        let n = rule.len();
        for power in (2..=2 * n.max(1) * n.max(1) + 2).step_by(2) {
            let ends: Vec<(Letter, Letter)> = (0..n)
                .map(|c| {
                    let w = rule.expand_word(c, power).expect("letter in range");
                    (w[0], *w.last().unwrap())
                })
                .collect();
            for a in 0..n {
                if ends[a].1 != a {
                    continue;
                }
                for b in 0..n {
                    if ends[b].0 == b && legal.contains(&(a, b)) {
                        return Ok(Seed { left: a, right: b, power });
                    }
                }
            }
        }
        domain("no admissible seed pair for a two-sided periodic point")
    }

    /// Right half-word `σ^{power·m}(b)` (or `σ^{offset + power·m}` for the supertile words of
    /// deeper levels), grown until it has at least `min_len` letters or satisfies `enough`.
    pub(crate) fn grow(
        &self,
        rule: &SubstitutionRule,
        letter: Letter,
        offset: usize,
        mut enough: impl FnMut(&[Letter]) -> bool,
    ) -> Word {
        let mut w = rule.expand_word(letter, offset).expect("letter in range");
        while !enough(&w) {
            for _ in 0..self.power {
                w = rule.apply(&w);
            }
        }
        w
    }
}

/// All two-letter factors of the language of a primitive substitution.
fn legal_pairs(rule: &SubstitutionRule) -> BTreeSet<(Letter, Letter)> {
    let mut set = BTreeSet::new();
    for c in 0..rule.len() {
        for w in rule.image(c).windows(2) {
            set.insert((w[0], w[1]));
        }
    }
    loop {
        let mut next = set.clone();
        for &(x, y) in &set {
            let w = rule.apply(&[x, y]);
            for p in w.windows(2) {
                next.insert((p[0], p[1]));
            }
        }
        if next == set {
            return set;
        }
        set = next;
    }
}

/// A finite window of an anchored substitution quasicrystal.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasicrystalChain {
    rule: SubstitutionRule,
    denom: i64,
    tile: Vec<Coord>,
    seed: Seed,
    window: (f64, f64),
    atoms: Vec<Coord>,
    shadows: Vec<f64>,
    labels: Vec<Letter>,
    origin: usize,
}

pub fn build_chain(rule: &SubstitutionRule, window: (f64, f64)) -> Result<QuasicrystalChain> {
    QuasicrystalChain::build(rule, window)
}

impl QuasicrystalChain {
    /// Atoms covering `[lo, hi]` plus one atom beyond each end, anchored with `s_0 = 0`.
    pub fn build(rule: &SubstitutionRule, window: (f64, f64)) -> Result<Self> {
        let (lo, hi) = window;
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return domain(format!("invalid window [{lo}, {hi}]"));
        }
        if lo > 0.0 || hi < 0.0 {
            return domain(format!("window [{lo}, {hi}] must contain the anchor 0"));
        }
        if rule.primitivity_power().is_none() {
            return domain("substitution is not primitive");
        }
        let seed = Seed::choose(rule)?;
        let (denom, tile) = lattice_lengths(rule);
        let field = rule.field();
        let lens: Vec<f64> = tile.iter().map(|c| c.to_f64(&field, denom)).collect();
        let max_len = lens.iter().cloned().fold(0.0, f64::max);

        let covered = |w: &[Letter], need: f64| w.iter().map(|&l| lens[l]).sum::<f64>() > need + 2.0 * max_len;
        let right = seed.grow(rule, seed.right, 0, |w| covered(w, hi));
        let left = seed.grow(rule, seed.left, 0, |w| covered(w, -lo));

        // Left half, walking from 0 towards -inf.
        let mut left_atoms = Vec::new();
        let mut left_labels = Vec::new();
        let mut pos = Coord::ZERO;
        for &l in left.iter().rev() {
            pos -= tile[l];
            left_atoms.push(pos);
            left_labels.push(l);
            if pos.to_f64(&field, denom) < lo {
                break;
            }
        }
        let mut atoms: Vec<Coord> = left_atoms.iter().rev().copied().collect();
        let mut labels: Vec<Letter> = left_labels.iter().rev().copied().collect();
        let origin = atoms.len();
        atoms.push(Coord::ZERO);
        let mut pos = Coord::ZERO;
        for &l in &right {
            pos += tile[l];
            atoms.push(pos);
            labels.push(l);
            if pos.to_f64(&field, denom) > hi {
                break;
            }
        }
        let shadows = atoms.iter().map(|c| c.to_f64(&field, denom)).collect();
        Ok(QuasicrystalChain {
            rule: rule.clone(),
            denom,
            tile,
            seed,
            window,
            atoms,
            shadows,
            labels,
            origin,
        })
    }

    pub fn rule(&self) -> &SubstitutionRule {
        &self.rule
    }

    pub fn field(&self) -> QuadField {
        self.rule.field()
    }

    /// Common denominator `D` of all coordinates `(a + bλ)/D`.
    pub fn denom(&self) -> i64 {
        self.denom
    }

    pub fn tile_length(&self, l: Letter) -> Coord {
        self.tile[l]
    }

    pub fn tile_lengths(&self) -> &[Coord] {
        &self.tile
    }

    pub fn seed(&self) -> Seed {
        self.seed
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn atoms(&self) -> &[Coord] {
        &self.atoms
    }

    /// Float shadows of the atoms.
    pub fn positions(&self) -> &[f64] {
        &self.shadows
    }

    /// `labels[n]` is the tile type of `[atoms[n], atoms[n+1]]`.
    pub fn labels(&self) -> &[Letter] {
        &self.labels
    }

    /// Index of the anchor atom `s_0 = 0`.
    pub fn origin_index(&self) -> usize {
        self.origin
    }

    pub fn to_f64(&self, c: Coord) -> f64 {
        c.to_f64(&self.field(), self.denom)
    }

    /// Span `[first atom, last atom]` on which queries are answerable.
    pub fn coverage(&self) -> (f64, f64) {
        (self.shadows[0], *self.shadows.last().unwrap())
    }

    pub fn min_tile_length(&self) -> f64 {
        self.tile.iter().map(|&c| self.to_f64(c)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_tile_length(&self) -> f64 {
        self.tile.iter().map(|&c| self.to_f64(c)).fold(0.0, f64::max)
    }

    pub fn mean_tile_length(&self) -> f64 {
        let freq = self.rule.letter_frequencies();
        freq.iter().zip(&self.tile).map(|(f, &c)| f * self.to_f64(c)).sum()
    }

    /// Index of the atom nearest to `x`; ties go to the left atom.
    pub fn nearest_atom(&self, x: f64) -> usize {
        let i = self.shadows.partition_point(|&s| s <= x);
        if i == 0 {
            return 0;
        }
        if i == self.shadows.len() {
            return i - 1;
        }
        if x - self.shadows[i - 1] <= self.shadows[i] - x {
            i - 1
        } else {
            i
        }
    }

    /// Index of the exact atom `c`, if present.
    pub fn index_of(&self, c: Coord) -> Option<usize> {
        let field = self.field();
        self.atoms.binary_search_by(|a| a.cmp_in(c, &field)).ok()
    }

    /// Indices of atoms with shadow in `[lo, hi)`.
    pub fn atoms_between(&self, lo: f64, hi: f64) -> std::ops::Range<usize> {
        self.shadows.partition_point(|&s| s < lo)..self.shadows.partition_point(|&s| s < hi)
    }

    /// `QC ∩ B_R(x) − x`, with exact offsets relative to the nearest atom.
    pub fn local_window(&self, x: f64, radius: f64) -> Result<LocalPattern> {
        if !(radius > 0.0) {
            return domain("pattern radius must be positive");
        }
        let (first, last) = self.coverage();
        if !(x - radius > first && x + radius < last) {
            return range(format!(
                "window ({}, {}) exceeds chain coverage [{first}, {last}]; widen the chain",
                x - radius,
                x + radius
            ));
        }
        let pivot = self.nearest_atom(x);
        let center = x - self.shadows[pivot];
        let base = self.atoms[pivot];
        let rel = |i: usize| self.to_f64(self.atoms[i] - base);
        let inside = |i: usize| (rel(i) - center).abs() < radius;
        if !inside(pivot) {
            let label = if center >= 0.0 { self.labels[pivot] } else { self.labels[pivot - 1] };
            return Ok(LocalPattern { radius, center_offset: 0.0, offsets: Vec::new(), labels: vec![label] });
        }
        let mut i0 = pivot;
        while i0 > 0 && inside(i0 - 1) {
            i0 -= 1;
        }
        let mut i1 = pivot;
        while i1 + 1 < self.atoms.len() && inside(i1 + 1) {
            i1 += 1;
        }
        Ok(LocalPattern {
            radius,
            center_offset: center,
            offsets: (i0..=i1).map(|i| self.atoms[i] - base).collect(),
            labels: self.labels[i0 - 1..=i1].to_vec(),
        })
    }

    pub fn equivalent_windows(&self, x: f64, y: f64, radius: f64) -> Result<bool> {
        Ok(self.local_window(x, radius)? == self.local_window(y, radius)?)
    }

    /// Per-letter tile counts for the tiles starting in `[lo, hi)`.
    pub fn label_counts(&self, lo: f64, hi: f64) -> Vec<usize> {
        let mut counts = vec![0; self.rule.len()];
        for i in self.atoms_between(lo, hi) {
            if i < self.labels.len() {
                counts[self.labels[i]] += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> ChainJson {
        let field = self.field();
        ChainJson {
            rule: self.rule.to_spec(),
            lambda: LambdaJson { trace: field.trace, norm: field.norm, value: field.lambda() },
            denominator: self.denom,
            seed: [self.rule.alphabet()[self.seed.left], self.rule.alphabet()[self.seed.right]],
            seed_power: self.seed.power,
            window: [self.window.0, self.window.1],
            origin_index: self.origin,
            atoms: self.atoms.iter().map(|c| [c.a, c.b]).collect(),
            atoms_f64: self.shadows.clone(),
            labels: self.labels.iter().map(|&l| self.rule.alphabet()[l].to_string()).collect(),
        }
    }

    /// Rebuilds a chain from its JSON export, checking every gap exactly.
    pub fn from_json(j: &ChainJson) -> Result<Self> {
        let rule = SubstitutionRule::from_spec(&j.rule)?;
        let field = rule.field();
        if field.trace != j.lambda.trace || field.norm != j.lambda.norm {
            return domain("lambda does not match the rule's field");
        }
        let (denom, tile) = lattice_lengths(&rule);
        if denom != j.denominator {
            return domain("denominator does not match the rule's tile lengths");
        }
        let atoms: Vec<Coord> = j.atoms.iter().map(|&[a, b]| Coord::new(a, b)).collect();
        let labels = j
            .labels
            .iter()
            .map(|s| {
                let mut cs = s.chars();
                match (cs.next(), cs.next()) {
                    (Some(c), None) => rule.letter(c),
                    _ => Err(FkError::Parse(format!("bad label {s:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if atoms.len() != labels.len() + 1 || j.origin_index >= atoms.len() {
            return domain("atoms and labels are inconsistent");
        }
        if atoms[j.origin_index] != Coord::ZERO {
            return domain("anchor atom is not at 0");
        }
        for (i, &l) in labels.iter().enumerate() {
            if atoms[i + 1] - atoms[i] != tile[l] {
                return domain(format!("gap {i} does not match its tile label"));
            }
        }
        let seed = Seed {
            left: rule.letter(j.seed[0])?,
            right: rule.letter(j.seed[1])?,
            power: j.seed_power,
        };
        let shadows = atoms.iter().map(|c| c.to_f64(&field, denom)).collect();
        Ok(QuasicrystalChain {
            rule,
            denom,
            tile,
            seed,
            window: (j.window[0], j.window[1]),
            atoms,
            shadows,
            labels,
            origin: j.origin_index,
        })
    }
}

/// Tile lengths as lattice points over their common denominator.
fn lattice_lengths(rule: &SubstitutionRule) -> (i64, Vec<Coord>) {
    let mut d: i128 = 1;
    for q in rule.lengths() {
        d = lcm(d, *q.a.denom());
        d = lcm(d, *q.b.denom());
    }
    let tile = rule
        .lengths()
        .iter()
        .map(|q| {
            let a = q.a * d;
            let b = q.b * d;
            Coord::new(a.to_integer() as i64, b.to_integer() as i64)
        })
        .collect();
    (d as i64, tile)
}

/// `QC ∩ B_R(x) − x`: exact atom offsets relative to the atom nearest to `x`, the float
/// offset of `x` from that atom, and the tile types of all intervals meeting the ball.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalPattern {
    pub radius: f64,
    pub center_offset: f64,
    pub offsets: Vec<Coord>,
    pub labels: Vec<Letter>,
}

impl LocalPattern {
    /// Offsets of the atoms from the center, as floats.
    pub fn offsets_from_center(&self, chain: &QuasicrystalChain) -> Vec<f64> {
        self.offsets.iter().map(|&c| chain.to_f64(c) - self.center_offset).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaJson {
    pub trace: i64,
    pub norm: i64,
    pub value: f64,
}

/// Chain export; `atoms` are integer pairs `[a, b]` meaning `(a + b·λ)/denominator`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainJson {
    pub rule: RuleSpec,
    pub lambda: LambdaJson,
    pub denominator: i64,
    pub seed: [char; 2],
    pub seed_power: usize,
    pub window: [f64; 2],
    pub origin_index: usize,
    pub atoms: Vec<[i64; 2]>,
    pub atoms_f64: Vec<f64>,
    pub labels: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Rational;

    const PHI: f64 = 1.618_033_988_749_895;

    #[test]
    fn fibonacci_seed_is_l_dot_l() {
        let seed = Seed::choose(&SubstitutionRule::fibonacci()).unwrap();
        assert_eq!((seed.left, seed.right, seed.power), (0, 0, 2));
    }

    #[test]
    fn fibonacci_prefix_follows_lslls() {
        let fib = SubstitutionRule::fibonacci();
        let chain = QuasicrystalChain::build(&fib, (0.0, 9.0)).unwrap();
        let o = chain.origin_index();
        let expected = [0.0, PHI, PHI + 1.0, 2.0 * PHI + 1.0, 3.0 * PHI + 1.0];
        for (k, e) in expected.iter().enumerate() {
            assert!((chain.positions()[o + k] - e).abs() < 1e-12);
        }
        assert_eq!(chain.atoms()[o + 3], Coord::new(1, 2));
        assert_eq!(fib.word_to_string(&chain.labels()[o..o + 5]), "LSLLS");
        // one extra atom on each side
        assert!(chain.positions()[0] < 0.0);
        assert!(*chain.positions().last().unwrap() > 9.0);
        assert!(chain.positions()[chain.positions().len() - 2] <= 9.0);
    }

    #[test]
    fn crystal_atoms_are_integers() {
        let c = QuasicrystalChain::build(&SubstitutionRule::crystal(Rational::from_integer(1)), (-3.0, 3.0))
            .unwrap();
        let xs: Vec<f64> = c.positions().to_vec();
        assert_eq!(xs, (-4..=4).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn window_must_contain_origin() {
        assert!(QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (1.0, 5.0)).is_err());
    }

    #[test]
    fn gaps_are_tile_lengths() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-10.0, 10.0)).unwrap();
        for (i, w) in chain.atoms().windows(2).enumerate() {
            assert_eq!(w[1] - w[0], chain.tile_length(chain.labels()[i]));
        }
        let gaps: BTreeSet<(i64, i64)> = chain.atoms().windows(2).map(|w| (w[1].a - w[0].a, w[1].b - w[0].b)).collect();
        assert_eq!(gaps, BTreeSet::from([(0, 1), (1, 0)]));
    }

    #[test]
    fn local_windows() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-20.0, 20.0)).unwrap();
        let p = chain.local_window(0.0, 0.5).unwrap();
        assert_eq!(p.offsets, vec![Coord::ZERO]);
        let p = chain.local_window(PHI, 1.2).unwrap();
        assert_eq!(p.offsets, vec![Coord::ZERO, Coord::new(1, 0)]);
        assert!(chain.local_window(19.9, 3.0).is_err());

        let crystal =
            QuasicrystalChain::build(&SubstitutionRule::crystal(Rational::from_integer(1)), (-20.0, 20.0)).unwrap();
        let p = crystal.local_window(7.0, 2.5).unwrap();
        let offs: Vec<f64> = p.offsets_from_center(&crystal);
        assert_eq!(offs, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
        assert!(crystal.equivalent_windows(3.2, 7.2, 2.0).unwrap());
        assert!(!crystal.equivalent_windows(3.2, 7.3, 2.0).unwrap());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let chain = QuasicrystalChain::build(&SubstitutionRule::fibonacci(), (-30.0, 30.0)).unwrap();
        let text = serde_json::to_string(&chain.to_json()).unwrap();
        let back = QuasicrystalChain::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, chain);
    }
}
