//! Filtered-error geometry: `e_f = [Lambda^T 1] e`, the auxiliary signal `nu`,
//! and the constants relating the output error energy to the filtered error.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

/// Roots must satisfy `Re < -HURWITZ_MARGIN`.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Multiplier applied to the estimated squared L2 gain.
pub const C1_SAFETY: f64 = 1.5;

/// `(a + b)^2 <= 1.5 a^2 + 3 b^2`: the transient share pairs with [`C1_SAFETY`].
const C2_CROSS_FACTOR: f64 = 3.0;

const PROBES: usize = 16;

/// Roots of `s^m + lambda[m-1] s^(m-1) + ... + lambda[0]`.
pub fn filter_roots(lambda: &[f64]) -> Vec<Complex64> {
    let m = lambda.len();
    match m {
        0 => Vec::new(),
        1 => vec![Complex64::new(-lambda[0], 0.0)],
        _ => {
            let mut companion = DMatrix::<f64>::zeros(m, m);
            for i in 0..m - 1 {
                companion[(i, i + 1)] = 1.0;
            }
            for j in 0..m {
                companion[(m - 1, j)] = -lambda[j];
            }
            companion
                .complex_eigenvalues()
                .iter()
                .map(|c| Complex64::new(c.re, c.im))
                .collect()
        }
    }
}

/// True iff every root lies strictly in the left half-plane (vacuous for `n = 1`).
pub fn check_hurwitz(lambda: &[f64]) -> bool {
    if lambda.iter().any(|v| !v.is_finite()) {
        return false;
    }
    filter_roots(lambda).iter().all(|r| r.re < -HURWITZ_MARGIN)
}

/// Human-readable filter polynomial, e.g. `s^2 + 3 s + 2`.
pub fn polynomial_string(lambda: &[f64]) -> String {
    let m = lambda.len();
    let mut out = match m {
        0 => "1".to_string(),
        1 => "s".to_string(),
        _ => format!("s^{m}"),
    };
    for k in (0..m).rev() {
        let c = lambda[k];
        let sign = if c < 0.0 { '-' } else { '+' };
        let a = c.abs();
        match k {
            0 => out.push_str(&format!(" {sign} {a}")),
            1 => out.push_str(&format!(" {sign} {a} s")),
            _ => out.push_str(&format!(" {sign} {a} s^{k}")),
        }
    }
    out
}

/// `e_f = sum_i lambda_i e_i + e_n`
pub fn filtered_error(e: &[f64], lambda: &[f64]) -> Result<f64> {
    check_len("state error", lambda.len() + 1, e.len())?;
    let n = e.len();
    Ok(lambda.iter().zip(e).map(|(l, v)| l * v).sum::<f64>() + e[n - 1])
}

/// `nu = sum_i lambda_i e_{i+1} - y_d^(n) - de*_f`
pub fn aux_nu(e: &[f64], lambda: &[f64], ydn: f64, de_star: f64) -> Result<f64> {
    check_len("state error", lambda.len() + 1, e.len())?;
    let shifted: f64 = lambda.iter().zip(&e[1..]).map(|(l, v)| l * v).sum();
    Ok(shifted - ydn - de_star)
}

/// Constants with `int_0^t e_1^2 <= c1 int_0^t e_f^2 + c2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConstants {
    pub c1: f64,
    /// `c2` per unit `|e(0)|^2`.
    pub c2_unit: f64,
    /// Peak `|H(jw)|^2` from the frequency sweep.
    pub gain_sq: f64,
    /// Largest output/input energy ratio seen among the noise probes.
    pub probe_ratio: f64,
}

impl FilterConstants {
    pub fn c2(&self, e0: &[f64]) -> f64 {
        self.c2_unit * e0.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Validated filter with its estimated constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSpec {
    pub lambda: Vec<f64>,
    pub constants: FilterConstants,
}

impl FilterSpec {
    pub fn new(lambda: Vec<f64>, horizon: f64, seed: u64) -> Result<Self> {
        let constants = estimate_c1_c2(&lambda, horizon, seed)?;
        Ok(FilterSpec { lambda, constants })
    }
}

fn h_gain_sq(lambda: &[f64], w: f64) -> f64 {
    // H(s) = 1 / p(s)
    let s = Complex64::new(0.0, w);
    let mut p = Complex64::new(1.0, 0.0);
    for k in (0..lambda.len()).rev() {
        p = p * s + lambda[k];
    }
    1.0 / p.norm_sqr()
}

fn peak_gain_sq(lambda: &[f64]) -> f64 {
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..=600).map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / 600.0)))
        .collect();
    let (mut best_i, mut best) = (0, h_gain_sq(lambda, 0.0));
    for (i, &w) in grid.iter().enumerate() {
        let v = h_gain_sq(lambda, w);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    // dense refinement between the neighbouring grid points
    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(grid.len() - 1)];
    for i in 0..=400 {
        let w = lo + (hi - lo) * i as f64 / 400.0;
        best = best.max(h_gain_sq(lambda, w));
    }
    best
}

/// Companion realisation of `H`: `z = (e_1..e_{n-1})`, output `z_1`.
fn filter_rhs(lambda: &[f64], z: &[f64], input: f64, dz: &mut [f64]) {
    let m = lambda.len();
    dz[..m - 1].copy_from_slice(&z[1..m]);
    dz[m - 1] = input - lambda.iter().zip(z).map(|(l, v)| l * v).sum::<f64>();
}

fn simulate_filter(lambda: &[f64], z0: &[f64], inputs: &[f64], dt: f64) -> Vec<f64> {
    let m = lambda.len();
    let mut z = z0.to_vec();
    let mut out = Vec::with_capacity(inputs.len() + 1);
    out.push(z[0]);
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    let mut tmp = vec![0.0; m];
    for &u in inputs {
        filter_rhs(lambda, &z, u, &mut k1);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * dt * k1[i];
        }
        filter_rhs(lambda, &tmp, u, &mut k2);
        for i in 0..m {
            tmp[i] = z[i] + 0.5 * dt * k2[i];
        }
        filter_rhs(lambda, &tmp, u, &mut k3);
        for i in 0..m {
            tmp[i] = z[i] + dt * k3[i];
        }
        filter_rhs(lambda, &tmp, u, &mut k4);
        for i in 0..m {
            z[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(z[0]);
    }
    out
}

fn trapz_product(a: &[f64], b: &[f64], dt: f64) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = (1..n - 1).map(|i| a[i] * b[i]).sum();
    dt * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

/// Estimates `c1` (squared L2 gain of `H` times [`C1_SAFETY`]) and the
/// zero-input transient energy over `[0, horizon]` for a unit initial error.
pub fn estimate_c1_c2(lambda: &[f64], horizon: f64, seed: u64) -> Result<FilterConstants> {
    if lambda.is_empty() {
        return Ok(FilterConstants {
            c1: 1.0,
            c2_unit: 0.0,
            gain_sq: 1.0,
            probe_ratio: 1.0,
        });
    }
    if !check_hurwitz(lambda) {
        return Err(Error::InvalidFilter(format!(
            "{} is not Hurwitz",
            polynomial_string(lambda)
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain("c1/c2 horizon must be positive".into()));
    }
    let m = lambda.len();
    let gain_sq = peak_gain_sq(lambda);

    let fastest = filter_roots(lambda)
        .iter()
        .map(|r| r.norm())
        .fold(1.0f64, f64::max);
    let dt = (0.02 / fastest).min(1e-2);
    let steps = (horizon / dt).ceil() as usize;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zero = vec![0.0; m];
    let mut probe_ratio = 0.0f64;
    for _ in 0..PROBES {
        let mut inputs: Vec<f64> = (0..steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // zero-order-hold input energy, exact for piecewise-constant samples
        let e_in: f64 = inputs.iter().map(|v| v * v).sum::<f64>() * dt;
        let out = simulate_filter(lambda, &zero, &inputs, dt);
        let e_out = trapz_product(&out, &out, dt);
        probe_ratio = probe_ratio.max(e_out / e_in);
        inputs.clear();
    }

    // Observability Gramian over the horizon from unit initial conditions.
    let inputs = vec![0.0; steps];
    let responses: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let mut z0 = vec![0.0; m];
            z0[i] = 1.0;
            simulate_filter(lambda, &z0, &inputs, dt)
        })
        .collect();
    let mut gram = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = trapz_product(&responses[i], &responses[j], dt);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let transient = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, b| a.max(*b));

    Ok(FilterConstants {
        c1: C1_SAFETY * gain_sq.max(probe_ratio),
        c2_unit: C2_CROSS_FACTOR * transient,
        gain_sq,
        probe_ratio,
    })
}
