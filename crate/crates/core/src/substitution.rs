//! Primitive substitutions on a finite alphabet and their abelianization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, FkError, Result};
use crate::field::{Quad, QuadField, QuadRepr, Rational};

/// Letters are indices into [`SubstitutionRule::alphabet`].
pub type Letter = usize;

/// A word over the alphabet of a rule.
pub type Word = Vec<Letter>;

/// Square integer matrix, row-major.
pub type IntMatrix = Vec<Vec<i64>>;

#[derive(Clone, Debug, PartialEq)]
pub struct SubstitutionRule {
    alphabet: Vec<char>,
    images: Vec<Word>,
    lengths: Vec<Quad>,
    field: QuadField,
}

impl SubstitutionRule {
    pub fn new(
        alphabet: Vec<char>,
        images: Vec<Word>,
        lengths: Vec<Quad>,
        field: QuadField,
    ) -> Result<Self> {
        let n = alphabet.len();
        if n == 0 {
            return domain("empty alphabet");
        }
        if images.len() != n || lengths.len() != n {
            return domain("images and lengths must have one entry per letter");
        }
        for (i, c) in alphabet.iter().enumerate() {
            if alphabet[..i].contains(c) {
                return domain(format!("duplicate letter {c:?}"));
            }
        }
        for (c, img) in alphabet.iter().zip(&images) {
            if img.is_empty() {
                return domain(format!("image of {c:?} is empty"));
            }
            if img.iter().any(|&l| l >= n) {
                return domain(format!("image of {c:?} uses a letter outside the alphabet"));
            }
        }
        for (c, len) in alphabet.iter().zip(&lengths) {
            if len.field != field {
                return domain("tile lengths must live in the rule's field");
            }
            if !len.is_positive() {
                return domain(format!("tile length of {c:?} must be positive"));
            }
        }
        let rule = SubstitutionRule { alphabet, images, lengths, field };
        if rule.primitivity_power().is_none() {
            return domain("substitution is not primitive");
        }
        Ok(rule)
    }

    /// Builds a rule whose tile lengths are the left Perron eigenvector (self-similar tiling),
    /// normalized so the shortest tile has length 1.
    pub fn self_similar(alphabet: Vec<char>, images: Vec<Word>, field: QuadField) -> Result<Self> {
        let n = alphabet.len();
        let probe = SubstitutionRule {
            alphabet: alphabet.clone(),
            images: images.clone(),
            lengths: vec![field.one(); n],
            field,
        };
        // Validate shape and primitivity with unit lengths first.
        let probe = SubstitutionRule::new(probe.alphabet, probe.images, probe.lengths, field)?;
        let lambda = probe.perron_eigenvalue_exact()?;
        let m = probe.abelianization();
        let mt: Vec<Vec<Quad>> = (0..n)
            .map(|i| (0..n).map(|j| field.int(m[j][i])).collect())
            .collect();
        let mut v = kernel_vector(&shift(&mt, lambda))?;
        let min = v
            .iter()
            .copied()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .expect("non-empty");
        for x in &mut v {
            *x = *x / min;
        }
        SubstitutionRule::new(alphabet, images, v, field)
    }

    /// `L → LS, S → L` with lengths `L = φ`, `S = 1`.
    pub fn fibonacci() -> Self {
        let f = QuadField::GOLDEN;
        SubstitutionRule::new(vec!['L', 'S'], vec![vec![0, 1], vec![0]], vec![f.generator(), f.one()], f)
            .expect("fibonacci rule is valid")
    }

    /// One-letter rule `A → AA`; its fixed point is the periodic lattice with spacing `length`.
    pub fn crystal(length: Rational) -> Self {
        let f = QuadField::GOLDEN;
        SubstitutionRule::new(vec!['A'], vec![vec![0, 0]], vec![Quad::rational(f, length)], f)
            .expect("crystal rule is valid")
    }

    /// `A → AB, B → BA` with unit tiles.
    pub fn thue_morse() -> Self {
        let f = QuadField::GOLDEN;
        SubstitutionRule::new(vec!['A', 'B'], vec![vec![0, 1], vec![1, 0]], vec![f.one(); 2], f)
            .expect("thue-morse rule is valid")
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphabet.is_empty()
    }

    pub fn image(&self, letter: Letter) -> &[Letter] {
        &self.images[letter]
    }

    pub fn lengths(&self) -> &[Quad] {
        &self.lengths
    }

    pub fn lengths_f64(&self) -> Vec<f64> {
        self.lengths.iter().map(Quad::to_f64).collect()
    }

    pub fn field(&self) -> QuadField {
        self.field
    }

    pub fn letter(&self, c: char) -> Result<Letter> {
        self.alphabet
            .iter()
            .position(|&x| x == c)
            .ok_or_else(|| FkError::Domain(format!("letter {c:?} not in alphabet")))
    }

    pub fn word_to_string(&self, w: &[Letter]) -> String {
        w.iter().map(|&l| self.alphabet[l]).collect()
    }

    pub fn parse_word(&self, s: &str) -> Result<Word> {
        s.chars().map(|c| self.letter(c)).collect()
    }

    /// One application of the substitution to a word.
    pub fn apply(&self, w: &[Letter]) -> Word {
        let mut out = Vec::with_capacity(w.len() * 2);
        for &l in w {
            out.extend_from_slice(&self.images[l]);
        }
        out
    }

    /// `σ^depth(seed)`.
    pub fn expand_word(&self, seed: Letter, depth: usize) -> Result<Word> {
        if seed >= self.len() {
            return domain(format!("letter index {seed} not in alphabet"));
        }
        let mut w = vec![seed];
        for _ in 0..depth {
            w = self.apply(&w);
        }
        Ok(w)
    }

    /// `m[i][j]` = number of occurrences of letter `i` in `σ(j)`.
    pub fn abelianization(&self) -> IntMatrix {
        let n = self.len();
        let mut m = vec![vec![0i64; n]; n];
        for (j, img) in self.images.iter().enumerate() {
            for &i in img {
                m[i][j] += 1;
            }
        }
        m
    }

    /// Abelianization of `σ^k`.
    pub fn power_matrix(&self, k: usize) -> IntMatrix {
        let m = self.abelianization();
        let n = self.len();
        let mut acc: IntMatrix = (0..n).map(|i| (0..n).map(|j| (i == j) as i64).collect()).collect();
        for _ in 0..k {
            acc = mat_mul(&acc, &m);
        }
        acc
    }

    /// Smallest `k ≥ 1` with `M^k` entrywise positive, if any (Wielandt bound `(n−1)² + 1`).
    pub fn primitivity_power(&self) -> Option<usize> {
        let n = self.len();
        let m: Vec<Vec<bool>> = self
            .abelianization()
            .iter()
            .map(|r| r.iter().map(|&x| x > 0).collect())
            .collect();
        let mut acc = m.clone();
        let bound = (n - 1) * (n - 1) + 1;
        for k in 1..=bound {
            if acc.iter().all(|r| r.iter().all(|&x| x)) {
                return Some(k);
            }
            acc = (0..n)
                .map(|i| (0..n).map(|j| (0..n).any(|l| acc[i][l] && m[l][j])).collect())
                .collect();
        }
        None
    }

    /// Perron eigenvalue of the abelianization, in floating point.
    pub fn perron_eigenvalue(&self) -> f64 {
        power_iteration(&self.abelianization()).0
    }

    /// Letter frequencies of the fixed point: the Perron eigenvector `v` with `M v = λ v`,
    /// normalized to sum 1.
    pub fn letter_frequencies(&self) -> Vec<f64> {
        power_iteration(&self.abelianization()).1
    }

    /// Exact letter frequencies in the rule's field.
    pub fn letter_frequencies_exact(&self) -> Result<Vec<Quad>> {
        let lambda = self.perron_eigenvalue_exact()?;
        let m: Vec<Vec<Quad>> = self
            .abelianization()
            .iter()
            .map(|r| r.iter().map(|&x| self.field.int(x)).collect())
            .collect();
        let mut v = kernel_vector(&shift(&m, lambda))?;
        let total = v.iter().fold(self.field.zero(), |acc, x| acc + *x);
        for x in &mut v {
            *x = *x / total;
        }
        Ok(v)
    }

    /// The Perron eigenvalue as an element of the rule's field.
    ///
    /// Algebraic integers of `Q(λ)` have small denominators over `Z[λ]`, so a bounded search
    /// around the float value followed by an exact singularity test is complete in practice.
    pub fn perron_eigenvalue_exact(&self) -> Result<Quad> {
        let target = self.perron_eigenvalue();
        let f = self.field;
        let lam = f.lambda();
        let m: Vec<Vec<Quad>> = self
            .abelianization()
            .iter()
            .map(|r| r.iter().map(|&x| f.int(x)).collect())
            .collect();
        for q in [1i128, 2, 3, 4, 6] {
            for kb in 0..=(64 * q) {
                for sign in [1i128, -1] {
                    if kb == 0 && sign < 0 {
                        continue;
                    }
                    let b = Rational::new(sign * kb, q);
                    let bf = (sign * kb) as f64 / q as f64;
                    let ka = ((target - bf * lam) * q as f64).round() as i128;
                    let a = Rational::new(ka, q);
                    let cand = Quad::new(f, a, b);
                    if (cand.to_f64() - target).abs() > 1e-7 * target.max(1.0) {
                        continue;
                    }
                    if is_singular(&shift(&m, cand)) {
                        return Ok(cand);
                    }
                }
            }
        }
        domain(format!(
            "Perron eigenvalue {target} is not representable in Q(λ) with λ² = {}λ + {}",
            f.trace, f.norm
        ))
    }

    pub fn to_spec(&self) -> RuleSpec {
        let mut images = BTreeMap::new();
        let mut lengths = BTreeMap::new();
        for (l, c) in self.alphabet.iter().enumerate() {
            images.insert(c.to_string(), self.word_to_string(&self.images[l]));
            lengths.insert(c.to_string(), QuadRepr::from(&self.lengths[l]));
        }
        RuleSpec {
            alphabet: self.alphabet.iter().collect(),
            images,
            lengths: Some(LengthSpec::Explicit(lengths)),
            field: Some([self.field.trace, self.field.norm]),
        }
    }

    pub fn from_spec(spec: &RuleSpec) -> Result<Self> {
        let field = match spec.field {
            Some([t, n]) => QuadField::new(t, n)?,
            None => QuadField::GOLDEN,
        };
        let alphabet: Vec<char> = spec.alphabet.chars().collect();
        let lookup = |c: char| {
            alphabet
                .iter()
                .position(|&x| x == c)
                .ok_or_else(|| FkError::Domain(format!("letter {c:?} not in alphabet")))
        };
        let mut images = Vec::with_capacity(alphabet.len());
        for c in &alphabet {
            let img = spec
                .images
                .get(&c.to_string())
                .ok_or_else(|| FkError::Domain(format!("missing image for {c:?}")))?;
            images.push(img.chars().map(lookup).collect::<Result<Word>>()?);
        }
        match &spec.lengths {
            None => SubstitutionRule::new(alphabet.clone(), images, vec![field.one(); alphabet.len()], field),
            Some(LengthSpec::Named(name)) => match name.as_str() {
                "perron" | "self-similar" => SubstitutionRule::self_similar(alphabet, images, field),
                "unit" => SubstitutionRule::new(alphabet.clone(), images, vec![field.one(); alphabet.len()], field),
                other => domain(format!("unknown length preset {other:?}")),
            },
            Some(LengthSpec::Explicit(map)) => {
                let mut lengths = Vec::with_capacity(alphabet.len());
                for c in &alphabet {
                    let r = map
                        .get(&c.to_string())
                        .ok_or_else(|| FkError::Domain(format!("missing length for {c:?}")))?;
                    lengths.push(r.parse(field)?);
                }
                SubstitutionRule::new(alphabet, images, lengths, field)
            }
        }
    }

    /// Named presets: `fib`, `crystal`, `thue-morse`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "fib" | "fibonacci" => Ok(SubstitutionRule::fibonacci()),
            "crystal" => Ok(SubstitutionRule::crystal(Rational::from_integer(1))),
            "thue-morse" | "tm" => Ok(SubstitutionRule::thue_morse()),
            other => domain(format!("unknown rule preset {other:?}")),
        }
    }
}

/// JSON form of a rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    /// Letters, one character each, in order.
    pub alphabet: String,
    pub images: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<LengthSpec>,
    /// `[trace, norm]` of the coordinate field; golden field when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<[i64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthSpec {
    Named(String),
    Explicit(BTreeMap<String, QuadRepr>),
}

pub(crate) fn mat_mul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let n = a.len();
    let p = b[0].len();
    let mut out = vec![vec![0i64; p]; n];
    for i in 0..n {
        for l in 0..b.len() {
            if a[i][l] == 0 {
                continue;
            }
            for j in 0..p {
                out[i][j] = out[i][j]
                    .checked_add(a[i][l].checked_mul(b[l][j]).expect("matrix overflow"))
                    .expect("matrix overflow");
            }
        }
    }
    out
}

fn power_iteration(m: &IntMatrix) -> (f64, Vec<f64>) {
    let n = m.len();
    let mut v = vec![1.0 / n as f64; n];
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let mut w = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                w[i] += m[i][j] as f64 * v[j];
            }
        }
        let s: f64 = w.iter().sum();
        for x in &mut w {
            *x /= s;
        }
        let diff = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        lambda = s;
        if diff < 1e-16 {
            break;
        }
    }
    (lambda, v)
}

fn shift(m: &[Vec<Quad>], lambda: Quad) -> Vec<Vec<Quad>> {
    m.iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, &x)| if i == j { x - lambda } else { x })
                .collect()
        })
        .collect()
}

fn row_echelon(m: &[Vec<Quad>]) -> (Vec<Vec<Quad>>, Vec<usize>) {
    let mut a = m.to_vec();
    let rows = a.len();
    let cols = a[0].len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else { continue };
        a.swap(r, p);
        let inv = a[r][c].inv().expect("non-zero pivot");
        for x in a[r].iter_mut() {
            *x = *x * inv;
        }
        for i in 0..rows {
            if i != r && !a[i][c].is_zero() {
                let factor = a[i][c];
                for j in 0..cols {
                    let v = a[r][j];
                    a[i][j] = a[i][j] - factor * v;
                }
            }
        }
        pivots.push(c);
        r += 1;
        if r == rows {
            break;
        }
    }
    (a, pivots)
}

fn is_singular(m: &[Vec<Quad>]) -> bool {
    row_echelon(m).1.len() < m.len()
}

/// A non-zero kernel vector of a singular matrix with a one-dimensional kernel.
fn kernel_vector(m: &[Vec<Quad>]) -> Result<Vec<Quad>> {
    let (a, pivots) = row_echelon(m);
    let n = m[0].len();
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    if free.len() != 1 {
        return domain(format!("expected a one-dimensional kernel, got {}", free.len()));
    }
    let f = m[0][0].field;
    let mut v = vec![f.zero(); n];
    v[free[0]] = f.one();
    for (r, &c) in pivots.iter().enumerate() {
        v[c] = -a[r][free[0]];
    }
    // Perron vectors are positive; fix the overall sign.
    if v.iter().any(|x| x.signum() == std::cmp::Ordering::Less) {
        for x in &mut v {
            *x = -*x;
        }
    }
    if !v.iter().all(Quad::is_positive) {
        return domain("Perron eigenvector is not positive");
    }
    Ok(v)
}
