//! Finite configurations `(θ_n)` and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{domain, FkError, Result};

/// Atoms `θ_n` for `n = first_index, first_index + 1, …`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Configuration {
    pub atoms: Vec<f64>,
    pub first_index: i64,
    pub provenance: BTreeMap<String, String>,
}

impl Configuration {
    pub fn new(atoms: Vec<f64>) -> Self {
        Configuration { atoms, first_index: 0, provenance: BTreeMap::new() }
    }

    pub fn with_provenance(mut self, key: &str, value: impl Into<String>) -> Self {
        self.provenance.insert(key.to_string(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_monotone(&self) -> bool {
        self.atoms.windows(2).all(|w| w[0] <= w[1])
    }

    /// Number of `n` with `θ_n = θ_{n+1}`.
    pub fn coincidences(&self) -> usize {
        self.atoms.windows(2).filter(|w| w[0] == w[1]).count()
    }

    pub fn first(&self) -> Option<f64> {
        self.atoms.first().copied()
    }

    pub fn last(&self) -> Option<f64> {
        self.atoms.last().copied()
    }

    /// `index,theta` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,theta\n");
        for (i, x) in self.atoms.iter().enumerate() {
            writeln!(out, "{},{}", self.first_index + i as i64, fmt_float(*x)).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut atoms = Vec::new();
        let mut first_index = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("index")) {
                continue;
            }
            let mut cols = line.split(',');
            let (Some(i), Some(x)) = (cols.next(), cols.next()) else {
                return Err(FkError::Parse(format!("line {}: expected index,theta", lineno + 1)));
            };
            let i: i64 = i.trim().parse().map_err(|e| FkError::Parse(format!("line {}: {e}", lineno + 1)))?;
            let x: f64 = x.trim().parse().map_err(|e| FkError::Parse(format!("line {}: {e}", lineno + 1)))?;
            let expected = first_index.map(|f: i64| f + atoms.len() as i64);
            if expected.is_some_and(|e| e != i) {
                return Err(FkError::Parse(format!("line {}: indices must be consecutive", lineno + 1)));
            }
            first_index.get_or_insert(i);
            atoms.push(x);
        }
        if atoms.iter().any(|x| !x.is_finite()) {
            return domain("configuration contains non-finite positions");
        }
        Ok(Configuration { atoms, first_index: first_index.unwrap_or(0), provenance: BTreeMap::new() })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Scientific notation with 17 significant digits; round-trips every `f64`.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}
