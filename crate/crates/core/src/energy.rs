//! Nearest-neighbour interaction `U`, substrate potential `V` of finite range, and the segment energy.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::chain::QuasicrystalChain;
use crate::error::{domain, range, FkError, Result};
use crate::substitution::Letter;

/// A strictly convex, superlinear interaction `U`.
pub trait InteractionPotential: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;

    /// `(U')⁻¹(y)` by bracketing bisection polished with Newton steps.
    fn d1_inverse(&self, y: f64) -> f64 {
        invert_increasing(|x| self.d1(x), |x| self.d2(x), y)
    }
}

pub(crate) fn invert_increasing(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, y: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) > y {
        lo *= 2.0;
    }
    while f(hi) < y {
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = f(x) - y;
        if r.abs() <= 1e-12 * (1.0 + y.abs()) {
            break;
        }
        if r > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = df(x);
        let newton = x - r / d;
        x = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    x
}

#[derive(Clone, Debug)]
pub enum Interaction {
    /// `U(x) = (κ/2)(x + a)²`.
    Quadratic { kappa: f64, rest: f64 },
    /// `U(x) = (κ/2)(x + a)² + (c/4)(x + a)⁴` with `c ≥ 0`.
    Quartic { kappa: f64, rest: f64, quartic: f64 },
    Custom(Arc<dyn InteractionPotential>),
}

impl Interaction {
    pub fn quadratic(kappa: f64, rest: f64) -> Result<Self> {
        if !(kappa > 0.0) || !rest.is_finite() {
            return domain(format!("quadratic interaction needs κ > 0 and finite rest length, got κ = {kappa}"));
        }
        Ok(Interaction::Quadratic { kappa, rest })
    }

    pub fn quartic(kappa: f64, rest: f64, quartic: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(quartic >= 0.0) || !rest.is_finite() {
            return domain("quartic interaction needs κ > 0 and c ≥ 0");
        }
        Ok(Interaction::Quartic { kappa, rest, quartic })
    }

    /// Wraps a user potential after spot-checking `U'' > 0` on `grid`.
    pub fn custom(u: Arc<dyn InteractionPotential>, grid: &[f64]) -> Result<Self> {
        for &x in grid {
            if !(u.d2(x) > 0.0) {
                return domain(format!("user interaction is not strictly convex at x = {x}"));
            }
        }
        Ok(Interaction::Custom(u))
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Interaction::Quadratic { kappa, rest } => 0.5 * kappa * (x + rest).powi(2),
            Interaction::Quartic { kappa, rest, quartic } => {
                let y = x + rest;
                0.5 * kappa * y * y + 0.25 * quartic * y.powi(4)
            }
            Interaction::Custom(u) => u.value(x),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Interaction::Quadratic { kappa, rest } => kappa * (x + rest),
            Interaction::Quartic { kappa, rest, quartic } => {
                let y = x + rest;
                kappa * y + quartic * y.powi(3)
            }
            Interaction::Custom(u) => u.d1(x),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Interaction::Quadratic { kappa, .. } => *kappa,
            Interaction::Quartic { kappa, rest, quartic } => kappa + 3.0 * quartic * (x + rest).powi(2),
            Interaction::Custom(u) => u.d2(x),
        }
    }

    /// `(U')⁻¹(y)`; closed form in the quadratic case.
    pub fn d1_inverse(&self, y: f64) -> f64 {
        match self {
            Interaction::Quadratic { kappa, rest } => y / kappa - rest,
            Interaction::Quartic { .. } => invert_increasing(|x| self.d1(x), |x| self.d2(x), y),
            Interaction::Custom(u) => u.d1_inverse(y),
        }
    }

    /// Bond length `d` minimizing `U(−d)`.
    pub fn rest_spacing(&self) -> f64 {
        -self.d1_inverse(0.0)
    }
}

/// `v(t) = h (1 − (t/w)²)³` for `|t| < w`, else 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpSpec {
    pub w: f64,
    pub h: f64,
}

impl BumpSpec {
    pub fn value(&self, t: f64) -> f64 {
        let u = t / self.w;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        self.h * s * s * s
    }

    pub fn d1(&self, t: f64) -> f64 {
        let u = t / self.w;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - u * u;
        -6.0 * self.h * u * s * s / self.w
    }

    pub fn d2(&self, t: f64) -> f64 {
        let u = t / self.w;
        if u.abs() >= 1.0 {
            return 0.0;
        }
        -6.0 * self.h / (self.w * self.w) * (1.0 - u * u) * (1.0 - 5.0 * u * u)
    }
}

/// How an atom's pattern class is read from its neighbouring tiles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyScheme {
    /// `(left tile, right tile)`, all ordered pairs distinct.
    OrderedPair,
    /// Unordered pairs: `(S, L)` and `(L, S)` share a bump.
    SymmetricPair,
}

impl KeyScheme {
    pub fn key(self, left: Letter, right: Letter) -> (Letter, Letter) {
        match self {
            KeyScheme::OrderedPair => (left, right),
            KeyScheme::SymmetricPair => (left.min(right), left.max(right)),
        }
    }

    /// All keys for an alphabet of size `n`, in lexicographic order.
    pub fn keys(self, n: usize) -> Vec<(Letter, Letter)> {
        let mut out = Vec::new();
        for a in 0..n {
            for b in 0..n {
                if self == KeyScheme::OrderedPair || a <= b {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Sum of bumps centred on substrate atoms, one bump per pattern class.
#[derive(Clone, Debug)]
pub struct SubstratePotential {
    chain: Option<Arc<QuasicrystalChain>>,
    scheme: KeyScheme,
    bumps: BTreeMap<(Letter, Letter), BumpSpec>,
    range: f64,
    /// bump index per atom, `None` where no bump sits
    per_atom: Vec<Option<BumpSpec>>,
}

impl SubstratePotential {
    /// `V ≡ 0`, valid on the whole line.
    pub fn flat() -> Self {
        SubstratePotential {
            chain: None,
            scheme: KeyScheme::OrderedPair,
            bumps: BTreeMap::new(),
            range: 0.0,
            per_atom: Vec::new(),
        }
    }

    pub fn new(
        chain: Arc<QuasicrystalChain>,
        scheme: KeyScheme,
        bumps: BTreeMap<(Letter, Letter), BumpSpec>,
    ) -> Result<Self> {
        let min_tile = chain.min_tile_length();
        for (key, b) in &bumps {
            if !(b.w > 0.0) || !b.h.is_finite() {
                return domain(format!("bump {key:?} needs w > 0 and finite h"));
            }
            if !(2.0 * b.w < min_tile) {
                return domain(format!("bump {key:?}: 2w = {} must be below the minimal tile length {min_tile}", 2.0 * b.w));
            }
            if scheme.key(key.0, key.1) != *key {
                return domain(format!("bump key {key:?} is not canonical for the key scheme"));
            }
        }
        let range = bumps.values().map(|b| b.w).fold(0.0, f64::max);
        let labels = chain.labels();
        let n = chain.atoms().len();
        let per_atom = (0..n)
            .map(|i| {
                if i == 0 || i + 1 == n {
                    None
                } else {
                    bumps.get(&scheme.key(labels[i - 1], labels[i])).copied()
                }
            })
            .collect();
        Ok(SubstratePotential { chain: Some(chain), scheme, bumps, range, per_atom })
    }

    /// Defaults: `w = 0.3 ·` minimal tile length, amplitudes alternating `+0.1, −0.1` in key order.
    pub fn default_for(chain: Arc<QuasicrystalChain>, scheme: KeyScheme) -> Result<Self> {
        let w = 0.3 * chain.min_tile_length();
        let bumps = scheme
            .keys(chain.rule().len())
            .into_iter()
            .enumerate()
            .map(|(i, k)| (k, BumpSpec { w, h: if i % 2 == 0 { 0.1 } else { -0.1 } }))
            .collect();
        Self::new(chain, scheme, bumps)
    }

    /// Same widths as the defaults, every amplitude set to `h`.
    pub fn uniform(chain: Arc<QuasicrystalChain>, scheme: KeyScheme, h: f64) -> Result<Self> {
        let w = 0.3 * chain.min_tile_length();
        let bumps = scheme.keys(chain.rule().len()).into_iter().map(|k| (k, BumpSpec { w, h })).collect();
        Self::new(chain, scheme, bumps)
    }

    pub fn chain(&self) -> Option<&Arc<QuasicrystalChain>> {
        self.chain.as_ref()
    }

    pub fn scheme(&self) -> KeyScheme {
        self.scheme
    }

    pub fn bumps(&self) -> &BTreeMap<(Letter, Letter), BumpSpec> {
        &self.bumps
    }

    /// Range `R`: `V(x)` depends only on the labelled pattern of radius `R` around `x`.
    pub fn range(&self) -> f64 {
        self.range
    }

    pub fn is_flat(&self) -> bool {
        self.chain.is_none() || self.bumps.values().all(|b| b.h == 0.0)
    }

    /// Errors unless `(lo − R, hi + R)` lies inside the chain's coverage.
    pub fn check_coverage(&self, lo: f64, hi: f64) -> Result<()> {
        let Some(chain) = &self.chain else { return Ok(()) };
        let (first, last) = chain.coverage();
        if lo - self.range > first && hi + self.range < last {
            Ok(())
        } else {
            range(format!(
                "[{lo}, {hi}] with margin {} leaves the chain coverage [{first}, {last}]; widen the chain",
                self.range
            ))
        }
    }

    fn bump_at(&self, x: f64) -> Option<(BumpSpec, f64)> {
        let chain = self.chain.as_ref()?;
        let n = chain.nearest_atom(x);
        let b = self.per_atom[n]?;
        Some((b, x - chain.positions()[n]))
    }

    /// `V(x)` without the coverage check; callers check once per segment.
    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        self.bump_at(x).map_or(0.0, |(b, t)| b.value(t))
    }

    pub(crate) fn d1_unchecked(&self, x: f64) -> f64 {
        self.bump_at(x).map_or(0.0, |(b, t)| b.d1(t))
    }

    pub(crate) fn d2_unchecked(&self, x: f64) -> f64 {
        self.bump_at(x).map_or(0.0, |(b, t)| b.d2(t))
    }

    /// Distance from `x` to the nearest bump edge `|x − s| = w`; infinite when flat.
    pub fn edge_distance(&self, x: f64) -> f64 {
        let Some(chain) = &self.chain else { return f64::INFINITY };
        let n = chain.nearest_atom(x);
        let mut d = f64::INFINITY;
        for m in n.saturating_sub(1)..(n + 2).min(chain.atoms().len()) {
            if let Some(b) = self.per_atom[m] {
                d = d.min(((x - chain.positions()[m]).abs() - b.w).abs());
            }
        }
        d
    }
}

/// `H(θ, θ') = U(θ − θ') + V(θ)`.
#[derive(Clone, Debug)]
pub struct EnergyModel {
    pub interaction: Interaction,
    pub substrate: SubstratePotential,
}

impl EnergyModel {
    pub fn new(interaction: Interaction, substrate: SubstratePotential) -> Self {
        EnergyModel { interaction, substrate }
    }

    /// `κ = 1`, `a =` mean tile length, default bumps with all ordered pairs as keys.
    pub fn default_for(chain: Arc<QuasicrystalChain>) -> Result<Self> {
        Self::with_scheme(chain, KeyScheme::OrderedPair)
    }

    /// The Fibonacci-style preset identifying `(S, L)` with `(L, S)`.
    pub fn symmetric_for(chain: Arc<QuasicrystalChain>) -> Result<Self> {
        Self::with_scheme(chain, KeyScheme::SymmetricPair)
    }

    fn with_scheme(chain: Arc<QuasicrystalChain>, scheme: KeyScheme) -> Result<Self> {
        let interaction = Interaction::quadratic(1.0, chain.mean_tile_length())?;
        Ok(EnergyModel { interaction, substrate: SubstratePotential::default_for(chain, scheme)? })
    }

    pub fn flat(interaction: Interaction) -> Self {
        EnergyModel { interaction, substrate: SubstratePotential::flat() }
    }

    pub fn range(&self) -> f64 {
        self.substrate.range()
    }

    pub fn v(&self, x: f64) -> Result<f64> {
        self.substrate.check_coverage(x, x)?;
        Ok(self.substrate.value_unchecked(x))
    }

    pub fn v1(&self, x: f64) -> Result<f64> {
        self.substrate.check_coverage(x, x)?;
        Ok(self.substrate.d1_unchecked(x))
    }

    pub fn v2(&self, x: f64) -> Result<f64> {
        self.substrate.check_coverage(x, x)?;
        Ok(self.substrate.d2_unchecked(x))
    }

    fn check_segment(&self, theta: &[f64], min_len: usize) -> Result<()> {
        if theta.len() < min_len {
            return domain(format!("segment needs at least {min_len} atoms"));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return domain("segment contains non-finite positions");
        }
        let lo = theta.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.substrate.check_coverage(lo, hi)
    }

    /// `H_p = Σ_{j<p} U(θ_j − θ_{j+1}) + V(θ_j)`; the last atom's `V` is not counted.
    pub fn segment_energy(&self, theta: &[f64]) -> Result<f64> {
        self.check_segment(theta, 2)?;
        Ok(self.energy_unchecked(theta))
    }

    pub(crate) fn energy_unchecked(&self, theta: &[f64]) -> f64 {
        theta
            .windows(2)
            .map(|w| self.interaction.value(w[0] - w[1]) + self.substrate.value_unchecked(w[0]))
            .sum()
    }

    /// Gradient over the interior atoms `1..p`.
    pub fn energy_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_segment(theta, 3)?;
        Ok(self.gradient_unchecked(theta))
    }

    pub(crate) fn gradient_unchecked(&self, theta: &[f64]) -> Vec<f64> {
        (1..theta.len() - 1).map(|n| self.residual_at(theta, n)).collect()
    }

    /// `U'(θ_n − θ_{n+1}) − U'(θ_{n−1} − θ_n) + V'(θ_n)`.
    pub(crate) fn residual_at(&self, theta: &[f64], n: usize) -> f64 {
        self.interaction.d1(theta[n] - theta[n + 1]) - self.interaction.d1(theta[n - 1] - theta[n])
            + self.substrate.d1_unchecked(theta[n])
    }

    /// Tridiagonal Hessian over the interior atoms: `(diagonal, off-diagonal)`.
    pub fn hessian(&self, theta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_segment(theta, 3)?;
        Ok(self.hessian_unchecked(theta))
    }

    pub(crate) fn hessian_unchecked(&self, theta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = theta.len() - 1;
        let bonds: Vec<f64> = theta.windows(2).map(|w| self.interaction.d2(w[0] - w[1])).collect();
        let diag = (1..p).map(|n| bonds[n - 1] + bonds[n] + self.substrate.d2_unchecked(theta[n])).collect();
        let off = (1..p.saturating_sub(1)).map(|n| -bonds[n]).collect();
        (diag, off)
    }

    pub fn to_config(&self) -> Result<ModelConfig> {
        let interaction = match &self.interaction {
            Interaction::Quadratic { kappa, rest } => {
                InteractionConfig { kind: "quadratic".into(), kappa: *kappa, rest: *rest, quartic: None }
            }
            Interaction::Quartic { kappa, rest, quartic } => {
                InteractionConfig { kind: "quartic".into(), kappa: *kappa, rest: *rest, quartic: Some(*quartic) }
            }
            Interaction::Custom(_) => return domain("user-defined interactions cannot be serialized"),
        };
        let sub = &self.substrate;
        let alphabet: Vec<char> = sub.chain.as_ref().map(|c| c.rule().alphabet().to_vec()).unwrap_or_default();
        let bumps = sub
            .bumps
            .iter()
            .map(|(&(a, b), &spec)| (format!("{}{}", alphabet[a], alphabet[b]), spec))
            .collect();
        Ok(ModelConfig {
            interaction,
            substrate: SubstrateConfig { range: sub.range, key_scheme: sub.scheme, bumps, flat: sub.chain.is_none() },
        })
    }

    pub fn from_config(cfg: &ModelConfig, chain: Option<Arc<QuasicrystalChain>>) -> Result<Self> {
        let i = &cfg.interaction;
        let interaction = match i.kind.as_str() {
            "quadratic" => Interaction::quadratic(i.kappa, i.rest)?,
            "quartic" => Interaction::quartic(i.kappa, i.rest, i.quartic.unwrap_or(0.0))?,
            other => return domain(format!("unknown interaction kind {other:?}")),
        };
        let substrate = match chain {
            Some(chain) if !cfg.substrate.flat => {
                let rule = chain.rule().clone();
                let mut bumps = BTreeMap::new();
                for (key, spec) in &cfg.substrate.bumps {
                    let cs: Vec<char> = key.chars().collect();
                    if cs.len() != 2 {
                        return Err(FkError::Parse(format!("bump key {key:?} must be two letters")));
                    }
                    bumps.insert((rule.letter(cs[0])?, rule.letter(cs[1])?), *spec);
                }
                SubstratePotential::new(chain, cfg.substrate.key_scheme, bumps)?
            }
            _ => SubstratePotential::flat(),
        };
        Ok(EnergyModel { interaction, substrate })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionConfig {
    pub kind: String,
    pub kappa: f64,
    pub rest: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quartic: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstrateConfig {
    pub range: f64,
    pub key_scheme: KeyScheme,
    pub bumps: BTreeMap<String, BumpSpec>,
    #[serde(default)]
    pub flat: bool,
}

/// Model config file: `{interaction: {kind, kappa, rest}, substrate: {range, key_scheme, bumps}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub interaction: InteractionConfig,
    pub substrate: SubstrateConfig,
}
