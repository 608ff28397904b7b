//! Command-line front end: `fkq <command> [flags]`, JSON summary on stdout.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::builder::{approximate_rho, build_for_counts};
use crate::chain::{ChainJson, QuasicrystalChain};
use crate::config::Configuration;
use crate::energy::{EnergyModel, ModelConfig};
use crate::error::{FkError, Result};
use crate::minimizer::{minimize_segment, MinimizeOptions, SegmentProblem};
use crate::order::{certify, check_loop_spread};
use crate::rotation::{bounds_csv, estimate_rotation, tower_bounds};
use crate::substitution::{RuleSpec, SubstitutionRule};
use crate::tower::{build_hierarchy, TowerHierarchy};
use crate::twist::{orbit, orbit_csv, PhasePoint};

/// Everything that determines a run; echoed in the JSON summary.
#[derive(Debug, Parser, Serialize)]
#[command(name = "fkq", version, about = "Frenkel-Kontorova ground states on substitution quasicrystals")]
pub struct RunConfig {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Serialize)]
pub struct CommonArgs {
    /// Preset (fib, crystal, thue-morse), a JSON file, or inline JSON.
    #[arg(long, global = true, default_value = "fib")]
    pub rule: String,
    /// Model config JSON file; defaults depend on the rule.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Merge mirror-image pattern classes (the symmetric key scheme).
    #[arg(long, global = true)]
    pub symmetric: bool,
    /// Use V ≡ 0.
    #[arg(long, global = true)]
    pub flat: bool,
    /// Seed for the perturbed multistart offsets.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Level step k (power of the substitution between levels); default is the primitivity power.
    #[arg(long, global = true)]
    pub step: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Export the chain on a window.
    Chain {
        #[arg(long, allow_hyphen_values = true, default_value = "-50:50")]
        window: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tower heights, measures and the level matrix.
    Towers {
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Minimal segment with fixed endpoints.
    Minimize {
        #[arg(long, allow_hyphen_values = true)]
        left: f64,
        #[arg(long, allow_hyphen_values = true)]
        right: f64,
        /// Number of bonds p (p + 1 atoms).
        #[arg(long)]
        bonds: usize,
        #[arg(long, default_value_t = 8)]
        starts: usize,
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a configuration from counts, or from a target rotation number.
    Construct {
        #[arg(long, value_delimiter = ',', conflicts_with = "rho")]
        counts: Option<Vec<u64>>,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long, default_value_t = 0)]
        refine: usize,
        #[arg(long, allow_hyphen_values = true, default_value = "-200:200")]
        window: String,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 30)]
        max_level: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Diagnostics JSON file.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Slope estimates and tower bounds of a configuration.
    Rotation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "0:3")]
        levels: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counting checks and Euler-Lagrange residuals of a configuration.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Any of borne (translates), turc (loops), el.
        #[arg(long, value_delimiter = ',', default_value = "borne,turc,el")]
        checks: Vec<String>,
        #[arg(long, default_value = "0:3")]
        levels: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Orbits of the twist map.
    Twist {
        #[command(subcommand)]
        action: TwistAction,
    },
}

#[derive(Debug, Subcommand, Serialize)]
pub enum TwistAction {
    Orbit {
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
        theta0: f64,
        #[arg(long, allow_hyphen_values = true, default_value_t = 0.5)]
        p0: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `argv` (without the program name), runs, and returns the process exit code.
pub fn run<I, S>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args = std::iter::once(std::ffi::OsString::from("fkq")).chain(argv.into_iter().map(Into::into));
    let cfg = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            if code == 0 {
                let _ = write!(stdout, "{e}");
            } else {
                let _ = write!(stderr, "{e}");
            }
            return code;
        }
    };
    let result = match std::env::var("FK_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| execute(&cfg)),
            Err(e) => Err(FkError::Domain(format!("thread pool: {e}"))),
        },
        _ => execute(&cfg),
    };
    match result {
        Ok(summary) => {
            let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&summary).expect("serializable summary"));
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            match e {
                FkError::Convergence { .. } => 2,
                _ => 1,
            }
        }
    }
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| FkError::Parse(format!("{what} must look like a:b, got {s:?}")))?;
    let a: f64 = a.trim().parse().map_err(|_| FkError::Parse(format!("bad {what} start {a:?}")))?;
    let b: f64 = b.trim().parse().map_err(|_| FkError::Parse(format!("bad {what} end {b:?}")))?;
    Ok((a, b))
}

fn parse_levels(s: &str) -> Result<std::ops::RangeInclusive<usize>> {
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let a: usize = a.trim().parse().map_err(|_| FkError::Parse(format!("bad levels {s:?}")))?;
    let b: usize = b.trim().parse().map_err(|_| FkError::Parse(format!("bad levels {s:?}")))?;
    if a > b {
        return Err(FkError::Parse(format!("empty level range {s:?}")));
    }
    Ok(a..=b)
}

fn load_rule(spec: &str) -> Result<SubstitutionRule> {
    let t = spec.trim();
    if t.starts_with('{') {
        return SubstitutionRule::from_spec(&serde_json::from_str::<RuleSpec>(t)?);
    }
    let path = Path::new(t);
    if path.extension().is_some_and(|e| e == "json") || path.exists() {
        let text = std::fs::read_to_string(path)?;
        return SubstitutionRule::from_spec(&serde_json::from_str::<RuleSpec>(&text)?);
    }
    SubstitutionRule::preset(t)
}

fn hierarchy(common: &CommonArgs, rule: &SubstitutionRule, depth: usize) -> Result<TowerHierarchy> {
    match common.step {
        Some(k) => TowerHierarchy::with_step(rule, depth.max(1), k),
        None => build_hierarchy(rule, depth.max(1)),
    }
}

fn model(common: &CommonArgs, chain: Arc<QuasicrystalChain>) -> Result<EnergyModel> {
    if let Some(path) = &common.model {
        let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        return EnergyModel::from_config(&cfg, if common.flat { None } else { Some(chain) });
    }
    let m = if common.symmetric { EnergyModel::symmetric_for(chain)? } else { EnergyModel::default_for(chain)? };
    if common.flat {
        return Ok(EnergyModel::flat(m.interaction));
    }
    Ok(m)
}

/// Chain covering `[lo, hi]` and 0, with `margin` to spare on both sides.
fn chain_around(rule: &SubstitutionRule, lo: f64, hi: f64, margin: f64) -> Result<QuasicrystalChain> {
    QuasicrystalChain::build(rule, (lo.min(0.0) - margin, hi.max(0.0) + margin))
}

fn write_out(path: &Option<PathBuf>, text: &str) -> Result<Value> {
    match path {
        Some(p) => {
            std::fs::write(p, text)?;
            Ok(json!(p.display().to_string()))
        }
        None => Ok(Value::Null),
    }
}

fn options(common: &CommonArgs) -> MinimizeOptions {
    MinimizeOptions { seed: common.seed, ..MinimizeOptions::default() }
}

fn execute(cfg: &RunConfig) -> Result<Value> {
    let common = &cfg.common;
    let rule = load_rule(&common.rule)?;
    let run_config = serde_json::to_value(cfg)?;
    let body = match &cfg.command {
        Command::Chain { window, out } => {
            let w = parse_pair(window, "window")?;
            let chain = QuasicrystalChain::build(&rule, w)?;
            let j = chain.to_json();
            let text = serde_json::to_string_pretty(&j)?;
            json!({ "atoms": chain.atoms().len(), "coverage": chain.coverage(), "out": write_out(out, &text)?, "chain": if out.is_none() { serde_json::to_value(&j)? } else { Value::Null } })
        }
        Command::Towers { depth, out } => {
            let h = hierarchy(common, &rule, *depth)?;
            let j = serde_json::to_value(h.to_json())?;
            json!({ "towers": j, "out": write_out(out, &serde_json::to_string_pretty(&j)?)? })
        }
        Command::Minimize { left, right, bonds, starts, max_iter, tol, out } => {
            let margin = 4.0 * rule.lengths_f64().iter().cloned().fold(0.0, f64::max) + 2.0;
            let chain = Arc::new(chain_around(&rule, *left, *right, margin)?);
            let m = model(common, chain)?;
            let problem = SegmentProblem::new(&m, *left, *right, *bonds)?;
            let opts = MinimizeOptions { perturbed_starts: *starts, max_iter: *max_iter, tol: *tol, ..options(common) };
            let res = minimize_segment(&problem, &opts)?;
            let csv = Configuration::new(res.positions.clone()).to_csv();
            json!({
                "energy": res.energy,
                "residual": res.residual,
                "iterations": res.iterations,
                "starts": res.starts_used,
                "converged_starts": res.converged_starts,
                "best_start": res.start,
                "monotone": res.monotone,
                "coincidences": res.coincidences,
                "out": write_out(out, &csv)?,
            })
        }
        Command::Construct { counts, level, refine, window, rho, tol, max_level, out, diagnostics } => {
            let mut w = parse_pair(window, "window")?;
            let base = hierarchy(common, &rule, 1)?;
            let (level, counts, approx) = match (counts, rho) {
                (Some(c), None) => (*level, c.clone(), Value::Null),
                (None, Some(r)) => {
                    let a = approximate_rho(&base, *r, *tol, *max_level)?;
                    (a.level, a.counts.clone(), serde_json::to_value(&a)?)
                }
                _ => return Err(FkError::Parse("construct needs --counts or --rho".into())),
            };
            let h = hierarchy(common, &rule, level + refine)?;
            let top = h.level(level + refine)?.max_height_f64();
            let mut widened = false;
            if w.1 - w.0 < 4.0 * top {
                let c = 0.5 * (w.0 + w.1);
                w = (c - 2.0 * top, c + 2.0 * top);
                widened = true;
            }
            let chain = chain_around(&rule, w.0, w.1, 2.0 * top + 4.0)?;
            let m = model(common, Arc::new(chain.clone()))?;
            let built = build_for_counts(&h, &chain, &m, level, &counts, *refine, w, &options(common))?;
            let diag = serde_json::to_value(&built.diagnostics)?;
            json!({
                "diagnostics_out": write_out(diagnostics, &serde_json::to_string_pretty(&diag)?)?,
                "approximation": approx,
                "level": level,
                "counts": counts,
                "window": [w.0, w.1],
                "window_widened": widened,
                "rho0": built.diagnostics.rho0,
                "diagnostics": diag,
                "out": write_out(out, &built.config.to_csv())?,
            })
        }
        Command::Rotation { config, levels, out } => {
            let c = Configuration::read_csv(config)?;
            let levels = parse_levels(levels)?;
            let h = hierarchy(common, &rule, *levels.end())?;
            let (lo, hi) = span(&c)?;
            let margin = h.level(*levels.end())?.max_height_f64() * 2.0 + 4.0;
            let chain = chain_around(&rule, lo, hi, margin)?;
            let rot = estimate_rotation(&c.atoms)?;
            let mut bounds = Vec::new();
            let mut skipped = Vec::new();
            for l in levels {
                match tower_bounds(&h, &chain, &c.atoms, l) {
                    Ok(b) => bounds.push(b),
                    Err(e) => skipped.push(format!("level {l}: {e}")),
                }
            }
            json!({
                "slope": rot.slope,
                "lsq_slope": rot.lsq_slope,
                "bounds": serde_json::to_value(&bounds)?,
                "skipped": skipped,
                "out": write_out(out, &bounds_csv(&bounds, rot.slope))?,
            })
        }
        Command::Verify { config, checks, levels, out } => {
            let c = Configuration::read_csv(config)?;
            let levels = parse_levels(levels)?;
            let h = hierarchy(common, &rule, *levels.end())?;
            let (lo, hi) = span(&c)?;
            let margin = h.level(*levels.end())?.max_height_f64() * 2.0 + 4.0;
            let chain = Arc::new(chain_around(&rule, lo, hi, margin)?);
            let m = model(common, chain.clone())?;
            let mut report = serde_json::Map::new();
            let mut violations = 0usize;
            for check in checks {
                match check.as_str() {
                    "borne" | "translates" => {
                        let radius = m.range().max(1e-9);
                        let cert = certify(&h, &chain, &c.atoms, radius, 0..=0)?;
                        violations += cert.translate_reports.iter().map(|r| r.violations.len()).sum::<usize>();
                        report.insert("translates".into(), serde_json::to_value(&cert.translate_reports)?);
                    }
                    "turc" | "loops" => {
                        let mut per_level = Vec::new();
                        for l in levels.clone() {
                            match check_loop_spread(&h, &chain, &c.atoms, l) {
                                Ok(r) => {
                                    violations += r.iter().map(|x| x.violations.len()).sum::<usize>();
                                    per_level.push(json!({ "level": l, "loops": r }));
                                }
                                Err(e) => per_level.push(json!({ "level": l, "skipped": e.to_string() })),
                            }
                        }
                        report.insert("loops".into(), Value::Array(per_level));
                    }
                    "el" => {
                        let res = if c.len() >= 3 {
                            let g = m.energy_gradient(&c.atoms)?;
                            let worst = g.iter().enumerate().fold((0.0f64, 0), |acc, (i, x)| if x.abs() > acc.0 { (x.abs(), i + 1) } else { acc });
                            let interior = el_interior(&h, &chain, &c.atoms, &m)?;
                            json!({ "max_residual": worst.0, "worst_index": worst.1, "interior_max_residual": interior })
                        } else {
                            Value::Null
                        };
                        report.insert("el".into(), res);
                    }
                    other => return Err(FkError::Parse(format!("unknown check {other:?}"))),
                }
            }
            let summary = json!({ "violations": violations, "report": Value::Object(report) });
            let written = write_out(out, &serde_json::to_string_pretty(&summary)?)?;
            json!({ "violations": violations, "report": summary["report"], "out": written })
        }
        Command::Twist { action: TwistAction::Orbit { theta0, p0, steps, out } } => {
            let h = hierarchy(common, &rule, 1)?;
            let reach = (*steps as f64 + 1.0) * (p0.abs() + 4.0 * rule.lengths_f64().iter().cloned().fold(0.0, f64::max));
            let margin = 4.0 * rule.lengths_f64().iter().cloned().fold(0.0, f64::max);
            let chain = Arc::new(chain_around(&rule, theta0 - reach.min(1e5), theta0 + reach.min(1e5), margin)?);
            let m = model(common, chain.clone())?;
            let mut pts = vec![PhasePoint::new(*theta0, *p0)];
            let mut stopped = Value::Null;
            match orbit(&m, pts[0], *steps) {
                Ok(o) => pts = o,
                Err(e) => {
                    // keep the points computed before the orbit left the chain
                    let mut cur = pts[0];
                    for _ in 0..*steps {
                        match crate::twist::step(&m, cur) {
                            Ok(nx) => {
                                pts.push(nx);
                                cur = nx;
                            }
                            Err(_) => break,
                        }
                    }
                    stopped = json!(e.to_string());
                }
            }
            let layout = h.layout(&chain, 0)?;
            let csv = orbit_csv(&pts, Some(&layout), rule.alphabet());
            let last = *pts.last().unwrap();
            json!({ "points": pts.len(), "last": last, "stopped": stopped, "out": write_out(out, &csv)? })
        }
    };
    Ok(json!({ "command": command_name(&cfg.command), "run_config": run_config, "result": body }))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Chain { .. } => "chain",
        Command::Towers { .. } => "towers",
        Command::Minimize { .. } => "minimize",
        Command::Construct { .. } => "construct",
        Command::Rotation { .. } => "rotation",
        Command::Verify { .. } => "verify",
        Command::Twist { .. } => "twist",
    }
}

fn span(c: &Configuration) -> Result<(f64, f64)> {
    match (c.atoms.first().copied(), c.atoms.last().copied()) {
        (Some(a), Some(b)) if c.is_monotone() => Ok((a, b)),
        (Some(_), Some(_)) => Err(FkError::Domain("configuration is not non-decreasing".into())),
        _ => Err(FkError::Domain("configuration is empty".into())),
    }
}

/// Largest residual at atoms not sitting on a substrate atom (where the builder pins).
fn el_interior(h: &TowerHierarchy, chain: &QuasicrystalChain, xs: &[f64], m: &EnergyModel) -> Result<f64> {
    let layout = h.layout(chain, 0)?;
    let g = m.energy_gradient(xs)?;
    let mut worst = 0.0f64;
    for (i, r) in g.iter().enumerate() {
        let x = xs[i + 1];
        let k = layout.tiles.partition_point(|t| t.start_f64 < x);
        let boundary = k < layout.tiles.len() && layout.tiles[k].start_f64 == x;
        if !boundary {
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Re-imports a chain file, for callers that pass `--chain` JSON around.
pub fn read_chain(path: &Path) -> Result<QuasicrystalChain> {
    let j: ChainJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    QuasicrystalChain::from_json(&j)
}
