//! The area-preserving recurrence on `(θ, p)` whose orbits are the critical configurations.

use std::fmt::Write as _;

use serde::Serialize;

use crate::config::fmt_float;
use crate::energy::EnergyModel;
use crate::error::{domain, Result};
use crate::tower::SupertileLayout;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PhasePoint {
    pub theta: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(theta: f64, p: f64) -> Self {
        PhasePoint { theta, p }
    }
}

/// `p' = p − V'(θ)`, `θ' = θ − (U')⁻¹(p')`.
pub fn step(model: &EnergyModel, point: PhasePoint) -> Result<PhasePoint> {
    let p = point.p - model.v1(point.theta)?;
    Ok(PhasePoint { theta: point.theta - model.interaction.d1_inverse(p), p })
}

/// Inverse of [`step`]: `θ = θ' + (U')⁻¹(p')`, `p = p' + V'(θ)`.
pub fn inverse_step(model: &EnergyModel, point: PhasePoint) -> Result<PhasePoint> {
    let theta = point.theta + model.interaction.d1_inverse(point.p);
    Ok(PhasePoint { theta, p: point.p + model.v1(theta)? })
}

/// `steps + 1` points starting at `start`; stops early with an error when the orbit leaves coverage.
pub fn orbit(model: &EnergyModel, start: PhasePoint, steps: usize) -> Result<Vec<PhasePoint>> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(start);
    let mut cur = start;
    for _ in 0..steps {
        cur = step(model, cur)?;
        out.push(cur);
    }
    Ok(out)
}

/// `p_n = U'(θ_{n−1} − θ_n)` for `n ≥ 1`.
pub fn from_configuration(model: &EnergyModel, config: &[f64]) -> Result<Vec<PhasePoint>> {
    if config.len() < 2 {
        return domain("phase points need at least two atoms");
    }
    Ok(config
        .windows(2)
        .map(|w| PhasePoint { theta: w[1], p: model.interaction.d1(w[0] - w[1]) })
        .collect())
}

/// `|det J − 1|` for the central-difference Jacobian of [`step`] at `point`.
pub fn jacobian_check(model: &EnergyModel, point: PhasePoint, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return domain("finite-difference step must be positive");
    }
    let f = |t: f64, p: f64| step(model, PhasePoint::new(t, p));
    let (tp, tm) = (f(point.theta + h, point.p)?, f(point.theta - h, point.p)?);
    let (pp, pm) = (f(point.theta, point.p + h)?, f(point.theta, point.p - h)?);
    let j11 = (tp.theta - tm.theta) / (2.0 * h);
    let j21 = (tp.p - tm.p) / (2.0 * h);
    let j12 = (pp.theta - pm.theta) / (2.0 * h);
    let j22 = (pp.p - pm.p) / (2.0 * h);
    Ok((j11 * j22 - j12 * j21 - 1.0).abs())
}

/// `n,theta,p,loop_level0,offset` rows; the skeleton columns are empty outside the layout.
pub fn orbit_csv(orbit: &[PhasePoint], layout: Option<&SupertileLayout>, alphabet: &[char]) -> String {
    let mut out = String::from("n,theta,p,loop_level0,offset\n");
    for (n, pt) in orbit.iter().enumerate() {
        let proj = layout.and_then(|l| l.project(pt.theta).ok());
        let (lp, off) = match proj {
            Some(s) => (alphabet[s.loop_index].to_string(), fmt_float(s.offset)),
            None => (String::new(), String::new()),
        };
        writeln!(out, "{n},{},{},{lp},{off}", fmt_float(pt.theta), fmt_float(pt.p)).unwrap();
    }
    out
}
