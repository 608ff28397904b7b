//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use fk_quasicrystal::energy::EnergyModel;

pub const PHI: f64 = 1.618_033_988_749_895;

/// `σⁿ(L)` for `L → LS, S → L` via `wₙ = wₙ₋₁ wₙ₋₂`.
pub fn fibonacci_word(n: usize) -> String {
    let (mut prev, mut cur) = (String::from("S"), String::from("L"));
    // σ⁻¹ is not defined on S alone, but `w₋₁ = S` makes the recursion start correctly
    for _ in 0..n {
        let next = format!("{cur}{prev}");
        prev = cur;
        cur = next;
    }
    cur
}

/// Closed-form Fibonacci tower data for level step 2: heights `(φ^{2l+1}, φ^{2l})`,
/// measures `ν_0 / φ^{2l}` with `ν_0 = (φ, 1) / (φ² + 1)`.
pub fn fib_heights(level: usize) -> [f64; 2] {
    [PHI.powi(2 * level as i32 + 1), PHI.powi(2 * level as i32)]
}

pub fn fib_measures(level: usize) -> [f64; 2] {
    let s = PHI * PHI + 1.0;
    let d = PHI.powi(2 * level as i32);
    [PHI / s / d, 1.0 / s / d]
}

/// `H_p` assembled from the model's `U` and `V` evaluations only.
pub fn energy(model: &EnergyModel, x: &[f64]) -> f64 {
    let mut e = 0.0;
    for j in 0..x.len() - 1 {
        e += model.interaction.value(x[j] - x[j + 1]) + model.v(x[j]).unwrap();
    }
    e
}

/// Golden-section minimum of `f` on `[a, b]`.
pub fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..300 {
        if b - a <= tol.max(4.0 * f64::EPSILON * a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Global minimum of `f` on `[a, b]`: dense scan, then golden section around the best sample.
pub fn scan_min(f: impl Fn(f64) -> f64, a: f64, b: f64, samples: usize) -> f64 {
    let h = (b - a) / samples as f64;
    let best = (0..=samples)
        .map(|i| a + i as f64 * h)
        .min_by(|x, y| f(*x).total_cmp(&f(*y)))
        .unwrap();
    golden(&f, (best - h).max(a), (best + h).min(b), 1e-13)
}

/// Global minimizer of a segment with fixed endpoints: dynamic programming over a uniform grid
/// of non-decreasing positions, then cyclic golden-section polishing.
pub fn grid_oracle(model: &EnergyModel, left: f64, right: f64, bonds: usize, grid: usize) -> (f64, Vec<f64>) {
    let mut x = vec![left; bonds + 1];
    x[bonds] = right;
    if bonds >= 2 {
        let lo = left - 1.0;
        let hi = right + 1.0;
        let h = (hi - lo) / grid as f64;
        let pts: Vec<f64> = (0..=grid).map(|i| lo + i as f64 * h).collect();
        let vs: Vec<f64> = pts.iter().map(|&p| model.v(p).unwrap()).collect();
        let u = |a: f64, b: f64| model.interaction.value(a - b);
        // best[g]: minimal energy of atoms 0..=i with atom i at pts[g]
        let mut best: Vec<f64> = pts.iter().map(|&p| if p >= left { u(left, p) } else { f64::INFINITY }).collect();
        let mut back: Vec<Vec<usize>> = Vec::new();
        for _ in 2..bonds {
            let mut next = vec![f64::INFINITY; pts.len()];
            let mut arg = vec![0usize; pts.len()];
            for g in 0..pts.len() {
                for f in 0..=g {
                    let c = best[f] + vs[f] + u(pts[f], pts[g]);
                    if c < next[g] {
                        next[g] = c;
                        arg[g] = f;
                    }
                }
            }
            back.push(arg);
            best = next;
        }
        let (mut g, _) = (0..pts.len())
            .filter(|&g| pts[g] <= right)
            .map(|g| (g, best[g] + vs[g] + u(pts[g], right)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        for i in (1..bonds).rev() {
            x[i] = pts[g];
            if i > 1 {
                g = back[i - 2][g];
            }
        }
        let mut width = 2.0 * h;
        for _ in 0..400 {
            for i in 1..bonds {
                let mut y = x.clone();
                let c = x[i];
                x[i] = golden(
                    |t| {
                        y[i] = t;
                        energy(model, &y)
                    },
                    c - width,
                    c + width,
                    1e-14,
                );
            }
            width = (width * 0.9).max(1e-6);
        }
    }
    (energy(model, &x), x)
}

/// Central differences of `H_p` with respect to the interior atoms.
pub fn fd_gradient(model: &EnergyModel, x: &[f64], h: f64) -> Vec<f64> {
    (1..x.len() - 1)
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (energy(model, &a) - energy(model, &b)) / (2.0 * h)
        })
        .collect()
}
