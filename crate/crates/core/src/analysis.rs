//! Numerical checks of the stability results against simulated traces:
//! quadratures, the bound formulas, the mean-square inequality, windowed
//! energy bounds, Lyapunov reconstruction, and the two auxiliary lemmas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controllers::{ControllerGains, Scheme};
use crate::error::{check_len, Error, Result};
use crate::error_geometry::FilterConstants;
use crate::plant::PlantModel;
use crate::rbf::{fit_ideal_weights, fit_on_points, network_output, IdealFit, RbfNetwork};
use crate::sim::{ClosedLoopSetup, SimTrace};
use crate::trajectory::DesiredTrajectory;

/// Relative slack on every bound comparison.
pub const BOUND_SLACK: f64 = 1.05;
/// Consecutive in-bound samples that count as entering the ultimate set.
pub const ENTRY_RUN: usize = 50;
/// The mean-square inequality is checked from this time on.
pub const MS_START: f64 = 0.1;
/// Windowed checks cover this final fraction of the horizon.
pub const TAIL_FRACTION: f64 = 0.2;

// ---------------------------------------------------------------- quadrature

/// Trapezoid rule over a (possibly non-uniform) grid.
pub fn trapz(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Running trapezoid integral, starting at 0.
pub fn cumtrapz(times: &[f64], values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..times.len().min(values.len()) {
        acc += 0.5 * (times[k] - times[k - 1]) * (values[k] + values[k - 1]);
        out.push(acc);
    }
    out
}

/// Cumulative integral at an arbitrary `t`, treating the integrand as
/// piecewise linear between samples.
fn cum_at(times: &[f64], values: &[f64], cum: &[f64], t: f64) -> f64 {
    let i = times.partition_point(|&s| s <= t).saturating_sub(1);
    if i + 1 >= times.len() {
        return cum[times.len() - 1];
    }
    let d = t - times[i];
    let span = times[i + 1] - times[i];
    cum[i] + d * values[i] + (values[i + 1] - values[i]) * d * d / (2.0 * span)
}

/// Centered differences inside, one-sided at the ends.
pub fn centered_diff(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|k| {
            let (a, b) = if k == 0 {
                (0, 1)
            } else if k == n - 1 {
                (n - 2, n - 1)
            } else {
                (k - 1, k + 1)
            };
            (values[b] - values[a]) / (times[b] - times[a])
        })
        .collect()
}

fn squared(v: &[f64]) -> Vec<f64> {
    v.iter().map(|a| a * a).collect()
}

/// `int_{t - tau}^t v(s) ds` from samples.
pub fn windowed_integral(times: &[f64], values: &[f64], tau: f64, t: f64) -> Result<f64> {
    if t < tau - 1e-12 {
        return Err(Error::Domain(format!("window end {t} precedes tau = {tau}")));
    }
    let cum = cumtrapz(times, values);
    Ok(cum_at(times, values, &cum, t) - cum_at(times, values, &cum, (t - tau).max(0.0)))
}

// ------------------------------------------------------------ bound formulas

/// Which `epsilon(.)` to form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonVariant {
    /// Integral or incremental weights, known Lipschitz bounds.
    B,
    /// Incremental weights and Lipschitz-gain estimation; `l_f`, `l_g` are
    /// the true constants.
    C { l_f: f64, l_g: f64 },
}

/// `B_ef = kappa^{-1/2} (eps_rho + (sigma_f |W_f*|^2 + sigma_g |W_g*|^2)/2
///        + eta eps_f^2 + eta eps_g^2)^{1/2}`
pub fn uub_bound(gains: &ControllerGains, fit_f: &IdealFit, fit_g: &IdealFit) -> f64 {
    (epsilon_bound(gains, fit_f, fit_g, EpsilonVariant::B) / gains.kappa).sqrt()
}

pub fn epsilon_bound(
    gains: &ControllerGains,
    fit_f: &IdealFit,
    fit_g: &IdealFit,
    variant: EpsilonVariant,
) -> f64 {
    let leak = 0.5 * (gains.sigma_f * fit_f.w_norm_sq() + gains.sigma_g * fit_g.w_norm_sq());
    let (ef2, eg2) = (fit_f.eps_bar * fit_f.eps_bar, fit_g.eps_bar * fit_g.eps_bar);
    match variant {
        EpsilonVariant::B => gains.eps_rho + leak + gains.eta * ef2 + gains.eta * eg2,
        EpsilonVariant::C { l_f, l_g } => {
            gains.eps_rho
                + gains.eta_f * ef2
                + gains.eta_g * eg2
                + leak
                + 0.5 * gains.sigma_lf * l_f * l_f
                + 0.5 * gains.sigma_lg * l_g * l_g
        }
    }
}

/// Everything the bound checks need besides the trace.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub scheme: Scheme,
    /// Gains as reported to the checker (may differ from the ones simulated).
    pub gains: ControllerGains,
    pub fit_f: IdealFit,
    pub fit_g: IdealFit,
    pub l_f: f64,
    pub l_g: f64,
    pub c1: f64,
    pub c2: f64,
    pub e_f0: f64,
    pub delta: f64,
    pub horizon: f64,
    pub w_f0: Vec<f64>,
    pub w_g0: Vec<f64>,
    pub l_f0: f64,
    pub l_g0: f64,
}

impl BoundInputs {
    /// Inputs for a zero-initialised run of `setup`; honours `reported_kappa`.
    pub fn from_setup(setup: &ClosedLoopSetup, constants: &FilterConstants) -> Self {
        let mut gains = setup.gains.clone();
        if let Some(k) = setup.scenario.verify.reported_kappa {
            gains.kappa = k;
        }
        let x0 = &setup.scenario.sim.x0;
        let e0: Vec<f64> = x0
            .iter()
            .zip(setup.traj.desired_state(0.0).as_slice())
            .map(|(x, xd)| x - xd)
            .collect();
        let nodes = setup.net.len();
        BoundInputs {
            scheme: setup.scheme(),
            gains,
            fit_f: setup.fit_f.clone(),
            fit_g: setup.fit_g.clone(),
            l_f: setup.plant.lf_true(),
            l_g: setup.plant.lg_true(),
            c1: constants.c1,
            c2: constants.c2(&e0),
            e_f0: setup.plan.e_f0,
            delta: setup.plan.delta,
            horizon: setup.scenario.sim.horizon,
            w_f0: vec![0.0; nodes],
            w_g0: vec![0.0; nodes],
            l_f0: 0.0,
            l_g0: 0.0,
        }
    }

    pub fn epsilon(&self) -> f64 {
        let variant = match self.scheme {
            Scheme::A | Scheme::B => EpsilonVariant::B,
            Scheme::C => EpsilonVariant::C {
                l_f: self.l_f,
                l_g: self.l_g,
            },
        };
        epsilon_bound(&self.gains, &self.fit_f, &self.fit_g, variant)
    }

    /// Ultimate bound on `|e_f|`: `B_ef` for A, `kappa^{-1/2} eps^{1/2}` for B/C.
    pub fn steady_bound(&self) -> f64 {
        (self.epsilon() / self.gains.kappa).sqrt()
    }

    /// Initial-condition weight of the mean-square inequality.
    pub fn varpi0(&self) -> f64 {
        let g = &self.gains;
        let k = g.kappa;
        let tilde_sq = |w0: &[f64], fit: &IdealFit, gamma: &[f64]| -> f64 {
            w0.iter()
                .zip(&fit.w_star)
                .zip(gamma)
                .map(|((a, b), gm)| (a - b) * (a - b) / gm)
                .sum()
        };
        let mut v = (tilde_sq(&self.w_f0, &self.fit_f, &g.gamma_f)
            + tilde_sq(&self.w_g0, &self.fit_g, &g.gamma_g))
            / k
            + 2.0 * self.e_f0 * self.e_f0 * self.delta;
        if self.scheme.is_incremental() {
            v += g.tau / k
                * (self.fit_f.weighted_norm_sq(&g.gamma_f) + self.fit_g.weighted_norm_sq(&g.gamma_g));
        }
        if self.scheme == Scheme::C {
            let lf0 = self.l_f0 - self.l_f;
            let lg0 = self.l_g0 - self.l_g;
            v += lf0 * lf0 / (k * g.gamma_lf)
                + lg0 * lg0 / (k * g.gamma_lg)
                + g.tau * self.l_f * self.l_f / (k * g.gamma_lf)
                + g.tau * self.l_g * self.l_g / (k * g.gamma_lg);
        }
        v
    }
}

// ------------------------------------------------------------ trace metrics

fn e1_of(trace: &SimTrace) -> Result<Vec<f64>> {
    if trace.e.iter().any(|e| e.is_empty()) {
        return Err(Error::TraceFormat("trace has empty error rows".into()));
    }
    Ok(trace.e1())
}

/// `(1/t) int_0^t e_1^2 ds`
pub fn ms_output_error(trace: &SimTrace, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("mean-square time must be positive, got {t}")));
    }
    let end = *trace
        .times
        .last()
        .ok_or_else(|| Error::TraceFormat("empty trace".into()))?;
    if t > end + 1e-12 {
        return Err(Error::Domain(format!("t = {t} is past the trace end {end}")));
    }
    let sq = squared(&e1_of(trace)?);
    let cum = cumtrapz(&trace.times, &sq);
    Ok(cum_at(&trace.times, &sq, &cum, t) / t)
}

/// `int_{t - tau}^t signal^2 ds` for a named trace column.
pub fn windowed_l2(trace: &SimTrace, signal: &str, tau: f64, t: f64) -> Result<f64> {
    let col = trace.column(signal).ok_or_else(|| {
        Error::TraceFormat(format!(
            "unknown column '{signal}'; available: {}",
            trace.column_names(true).join(", ")
        ))
    })?;
    windowed_integral(&trace.times, &squared(&col), tau, t)
}

/// Max `|signal|` over the final `fraction` of the trace.
pub fn tail_max_abs(times: &[f64], values: &[f64], fraction: f64) -> f64 {
    let end = times.last().copied().unwrap_or(0.0);
    let start = end * (1.0 - fraction);
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= start)
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()))
}

/// `V(t) = int_0^t g(x) e~_f de~_f`, with `de~_f` from centered differences.
pub fn lyapunov_v(trace: &SimTrace, plant: &PlantModel) -> Vec<f64> {
    let de = centered_diff(&trace.times, &trace.ef_tilde);
    let integrand: Vec<f64> = (0..trace.len())
        .map(|k| plant.g(&trace.x[k]) * trace.ef_tilde[k] * de[k])
        .collect();
    cumtrapz(&trace.times, &integrand)
}

// ---------------------------------------------------------------- lemmas

fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, panels: usize) -> f64 {
    let m = panels + panels % 2;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Checks `int_0^t g(f(s)) f'(s) ds > 0` at every grid point `t > 0`.
/// `f'` comes from a symmetric difference; each grid interval uses
/// composite Simpson.
pub fn lemma1_oracle<G, F>(g_fn: G, f_fn: F, t_grid: &[f64]) -> Result<bool>
where
    G: Fn(f64) -> f64,
    F: Fn(f64) -> f64,
{
    if t_grid.is_empty() || t_grid[0] != 0.0 {
        return Err(Error::Precondition("grid must start at t = 0".into()));
    }
    if f_fn(0.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!("f(0) = {} is not zero", f_fn(0.0))));
    }
    for w in t_grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Precondition("grid must be strictly increasing".into()));
        }
    }
    for &t in &t_grid[1..] {
        let ft = f_fn(t);
        if !(ft > 0.0) {
            return Err(Error::Precondition(format!("f({t}) = {ft} is not positive")));
        }
        if !(g_fn(ft) > 0.0) {
            return Err(Error::Precondition(format!("g(f({t})) is not positive")));
        }
    }
    let scale = t_grid[t_grid.len() - 1].max(1.0);
    let dh = 1e-6 * scale;
    let fprime = |s: f64| (f_fn(s + dh) - f_fn(s - dh)) / (2.0 * dh);
    let integrand = |s: f64| g_fn(f_fn(s)) * fprime(s);
    let mut acc = 0.0;
    for w in t_grid.windows(2) {
        acc += simpson(integrand, w[0], w[1], 16);
        if !(acc > 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lemma2Verdict {
    /// Max of `s_k` over the second half of the sequence.
    pub tail_sup: f64,
    pub d_bar: f64,
    pub bounded_ok: bool,
    /// `Some` when the vanishing-`d` claim was checked.
    pub vanishes: Option<bool>,
}

impl Lemma2Verdict {
    pub fn pass(&self) -> bool {
        self.bounded_ok && self.vanishes.unwrap_or(true)
    }
}

/// Empirical check of the sequence lemma. The recursion
/// `r_k <= r_{k-1} - s_k + d_k` and `|d_k| <= d_bar` are hypotheses: if the
/// data break them the result is a hypothesis error, not a failed verdict.
pub fn lemma2_check(
    r: &[f64],
    s: &[f64],
    d: &[f64],
    d_bar: f64,
    d_vanishes: bool,
) -> Result<Lemma2Verdict> {
    if r.len() != s.len() || s.len() != d.len() || r.len() < 4 {
        return Err(Error::Hypothesis(
            "r, s, d must have equal length of at least 4".into(),
        ));
    }
    for k in 0..r.len() {
        if !(r[k] > 0.0) || !(s[k] >= 0.0) || !r[k].is_finite() || !s[k].is_finite() {
            return Err(Error::Hypothesis(format!("r or s not positive at k = {k}")));
        }
        if d[k].abs() > d_bar * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::Hypothesis(format!("|d_{k}| = {} exceeds d_bar", d[k].abs())));
        }
    }
    for k in 1..r.len() {
        let rhs = r[k - 1] - s[k] + d[k];
        let tol = 1e-12 * (1.0 + r[k - 1].abs() + s[k].abs() + d[k].abs());
        if r[k] > rhs + tol {
            return Err(Error::Hypothesis(format!(
                "recursion fails at k = {k}: {} > {rhs}",
                r[k]
            )));
        }
    }
    let tail = &s[s.len() / 2..];
    let tail_sup = tail.iter().fold(0.0f64, |m, v| m.max(*v));
    let bounded_ok = tail_sup <= d_bar + 1e-9 + 1e-6 * d_bar;
    let vanishes = d_vanishes.then(|| {
        let peak = s.iter().fold(0.0f64, |m, v| m.max(*v));
        let last = &s[s.len() * 9 / 10..];
        last.iter().fold(0.0f64, |m, v| m.max(*v)) <= (0.05 * peak).max(1e-6)
    });
    Ok(Lemma2Verdict {
        tail_sup,
        d_bar,
        bounded_ok,
        vanishes,
    })
}

/// Randomised positive `(f, g)` pairs with `f(0) = 0`, some non-monotone.
/// Returns how many of `count` pairs gave a positive integral everywhere.
pub fn lemma1_random_suite(count: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for i in 0..count {
        let a = rng.gen_range(0.2..3.0);
        let p = rng.gen_range(1.0..3.0);
        let c = rng.gen_range(0.0..0.95);
        let w = rng.gen_range(0.5..6.0);
        let b = rng.gen_range(0.6..3.0);
        let c2 = rng.gen_range(0.0..0.5) * b;
        let horizon = rng.gen_range(1.0..5.0);
        let grid: Vec<f64> = (0..=400).map(|k| horizon * k as f64 / 400.0).collect();
        let f = move |t: f64| a * t.abs().powf(p) * (1.0 + c * (w * t).sin());
        let ok = if i % 2 == 0 {
            lemma1_oracle(move |y: f64| b + c2 * (3.0 * y).sin(), f, &grid)?
        } else {
            lemma1_oracle(move |y: f64| 1.0 + y * y, f, &grid)?
        };
        passed += usize::from(ok);
    }
    Ok(passed)
}

/// Builds a sequence satisfying the lemma's hypotheses with `s_k = phi(r_k)`
/// for an increasing `phi`, `phi(0) = 0`.
pub fn lemma2_construct(
    len: usize,
    d_bar: f64,
    vanishing: bool,
    rng: &mut impl Rng,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = rng.gen_range(0.2..3.0);
    let p = rng.gen_range(0.5..2.0);
    let phi = move |r: f64| c * r.powf(p);
    let decay: f64 = rng.gen_range(0.8..0.98);
    let mut r = vec![rng.gen_range(0.5..10.0)];
    let mut s = vec![phi(r[0])];
    let mut d = vec![0.0];
    for k in 1..len {
        let amp = if vanishing { d_bar * decay.powi(k as i32) } else { d_bar };
        let prev = r[k - 1];
        let dk = rng.gen_range(-amp.min(0.5 * prev)..=amp);
        let target = prev + dk;
        // largest r with r + phi(r) <= target, then a little slack
        let (mut lo, mut hi) = (0.0, target);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid + phi(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rk = (lo * rng.gen_range(0.9..1.0)).max(f64::MIN_POSITIVE);
        r.push(rk);
        s.push(phi(rk));
        d.push(dk);
    }
    (r, s, d)
}

/// Runs `count` constructed sequences (alternating bounded and vanishing `d`)
/// through [`lemma2_check`]; returns the number that pass.
pub fn lemma2_random_suite(count: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for i in 0..count {
        let d_bar = rng.gen_range(0.01..1.0);
        let vanishing = i % 2 == 1;
        let (r, s, d) = lemma2_construct(400, d_bar, vanishing, &mut rng);
        let v = lemma2_check(&r, &s, &d, d_bar, vanishing)?;
        passed += usize::from(v.pass());
    }
    Ok(passed)
}

// ---------------------------------------------------------- bound report

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub check: String,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl CheckRow {
    /// `rhs / lhs`; above 1 means the inequality holds.
    pub fn margin(&self) -> f64 {
        if self.lhs == 0.0 {
            f64::INFINITY
        } else {
            self.rhs / self.lhs
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub scheme: Scheme,
    /// Ultimate bound on `|e_f|` used by the checks.
    pub b_ef: f64,
    pub eps_total: f64,
    pub varpi0: f64,
    pub c1: f64,
    pub c2: f64,
    pub t_detected: f64,
    pub t1: f64,
    /// `(t, rhs)` of the mean-square inequality.
    pub ms_bound_curve: Vec<(f64, f64)>,
    /// Tightest row per check.
    pub worst: Vec<CheckRow>,
    /// Windowed weight-error energies; reported, not enforced.
    pub info: Vec<CheckRow>,
    pub violations: Vec<CheckRow>,
}

impl BoundReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "scheme {}: {}\n",
            self.scheme,
            if self.pass() { "PASS" } else { "FAIL" }
        ));
        s.push_str(&format!("  ultimate bound on |e_f|   {:.6e}\n", self.b_ef));
        s.push_str(&format!("  epsilon                   {:.6e}\n", self.eps_total));
        s.push_str(&format!("  varpi0                    {:.6e}\n", self.varpi0));
        s.push_str(&format!("  c1, c2                    {:.6e}, {:.6e}\n", self.c1, self.c2));
        s.push_str(&format!(
            "  entry time T, T1          {:.4}, {:.4}\n",
            self.t_detected, self.t1
        ));
        for row in self.worst.iter().chain(&self.info) {
            s.push_str(&format!(
                "  {:<22} t = {:<8.3} lhs = {:.4e} rhs = {:.4e} margin = {:.3}\n",
                row.check,
                row.t,
                row.lhs,
                row.rhs,
                row.margin()
            ));
        }
        s.push_str(&format!("  violations: {}\n", self.violations.len()));
        s
    }
}

struct Collector {
    worst: Vec<CheckRow>,
    violations: Vec<CheckRow>,
}

impl Collector {
    fn record(&mut self, row: CheckRow) {
        match self.worst.iter_mut().find(|w| w.check == row.check) {
            Some(w) if row.margin() < w.margin() => *w = row.clone(),
            Some(_) => {}
            None => self.worst.push(row.clone()),
        }
        if row.lhs > row.rhs {
            self.violations.push(row);
        }
    }
}

/// First index from which `ENTRY_RUN` consecutive samples satisfy
/// `|v| <= level`.
fn entry_index(values: &[f64], level: f64) -> Option<usize> {
    let mut run = 0;
    for (k, v) in values.iter().enumerate() {
        if v.abs() <= level {
            run += 1;
            if run >= ENTRY_RUN.min(values.len()) {
                return Some(k + 1 - run);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Checks the ultimate bound after `T1 = max(T_detected, delta)`, the
/// mean-square inequality from `MS_START` on, and the windowed energy bounds
/// over the final `TAIL_FRACTION` of the horizon.
pub fn check_theorem_bounds(trace: &SimTrace, inputs: &BoundInputs) -> Result<BoundReport> {
    let n = trace.len();
    if n < 2 {
        return Err(Error::TraceFormat("trace needs at least two rows".into()));
    }
    for (name, len) in [
        ("ef", trace.ef.len()),
        ("ef_tilde", trace.ef_tilde.len()),
        ("e", trace.e.len()),
        ("lf_hat", trace.lf_hat.len()),
        ("lg_hat", trace.lg_hat.len()),
    ] {
        if len != n {
            return Err(Error::TraceFormat(format!("column {name} has {len} rows, expected {n}")));
        }
    }
    let times = &trace.times;
    let g = &inputs.gains;
    let bound = inputs.steady_bound();
    let eps = inputs.epsilon();
    let varpi0 = inputs.varpi0();
    let mut col = Collector {
        worst: Vec::new(),
        violations: Vec::new(),
    };

    // (i) ultimate bound
    let level = BOUND_SLACK * bound;
    let t_detected = match entry_index(&trace.ef_tilde, level) {
        Some(k) => times[k],
        None => {
            col.record(CheckRow {
                check: "uub_entry".into(),
                t: times[n - 1],
                lhs: trace.ef_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                rhs: level,
            });
            times[n - 1]
        }
    };
    let t1 = t_detected.max(inputs.delta);
    for k in 0..n {
        if times[k] >= t1 {
            col.record(CheckRow {
                check: "uub".into(),
                t: times[k],
                lhs: trace.ef[k].abs(),
                rhs: level,
            });
        }
    }

    // (ii) mean-square inequality
    let e1sq = squared(&e1_of(trace)?);
    let cum = cumtrapz(times, &e1sq);
    let mut ms_bound_curve = Vec::new();
    let steady = 2.0 * inputs.c1 * bound * bound;
    for k in 0..n {
        let t = times[k];
        if t < MS_START - 1e-12 {
            continue;
        }
        let rhs = (inputs.c1 * varpi0 + inputs.c2) / t + steady;
        ms_bound_curve.push((t, rhs));
        col.record(CheckRow {
            check: "mean_square".into(),
            t,
            lhs: cum[k] / t,
            rhs,
        });
    }

    // (iii) windowed energies over the tail
    let tau = g.tau;
    let end = times[n - 1];
    let tail_start = (end * (1.0 - TAIL_FRACTION)).max(tau);
    let ef_sq = squared(&trace.ef);
    let ef_cum = cumtrapz(times, &ef_sq);
    let windowed = |sq: &[f64], cum: &[f64], t: f64| {
        cum_at(times, sq, cum, t) - cum_at(times, sq, cum, t - tau)
    };
    let lf_sq: Vec<f64> = trace.lf_hat.iter().map(|l| (l - inputs.l_f).powi(2)).collect();
    let lg_sq: Vec<f64> = trace.lg_hat.iter().map(|l| (l - inputs.l_g).powi(2)).collect();
    let (lf_cum, lg_cum) = (cumtrapz(times, &lf_sq), cumtrapz(times, &lg_sq));
    let have_w = trace.w_f.len() == n && trace.w_g.len() == n;
    let wf_sq: Vec<f64> = if have_w {
        trace
            .w_f
            .iter()
            .map(|w| w.iter().zip(&inputs.fit_f.w_star).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    } else {
        Vec::new()
    };
    let wg_sq: Vec<f64> = if have_w {
        trace
            .w_g
            .iter()
            .map(|w| w.iter().zip(&inputs.fit_g.w_star).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect()
    } else {
        Vec::new()
    };
    let (wf_cum, wg_cum) = (cumtrapz(times, &wf_sq), cumtrapz(times, &wg_sq));
    let mut info: Vec<CheckRow> = Vec::new();
    let mut note = |row: CheckRow| match info.iter_mut().find(|w| w.check == row.check) {
        Some(w) if row.margin() < w.margin() => *w = row,
        Some(_) => {}
        None => info.push(row),
    };
    for k in 0..n {
        let t = times[k];
        if t < tail_start {
            continue;
        }
        col.record(CheckRow {
            check: "windowed_ef".into(),
            t,
            lhs: windowed(&ef_sq, &ef_cum, t),
            rhs: BOUND_SLACK * tau * bound * bound,
        });
        if inputs.scheme == Scheme::C {
            col.record(CheckRow {
                check: "windowed_lf_tilde".into(),
                t,
                lhs: windowed(&lf_sq, &lf_cum, t),
                rhs: BOUND_SLACK * 2.0 * tau * eps / g.sigma_lf,
            });
            col.record(CheckRow {
                check: "windowed_lg_tilde".into(),
                t,
                lhs: windowed(&lg_sq, &lg_cum, t),
                rhs: BOUND_SLACK * 2.0 * tau * eps / g.sigma_lg,
            });
        }
        if have_w {
            note(CheckRow {
                check: "windowed_wf_tilde".into(),
                t,
                lhs: windowed(&wf_sq, &wf_cum, t),
                rhs: BOUND_SLACK * 2.0 * tau * eps / g.sigma_f,
            });
            note(CheckRow {
                check: "windowed_wg_tilde".into(),
                t,
                lhs: windowed(&wg_sq, &wg_cum, t),
                rhs: BOUND_SLACK * 2.0 * tau * eps / g.sigma_g,
            });
        }
    }

    Ok(BoundReport {
        scheme: inputs.scheme,
        b_ef: bound,
        eps_total: eps,
        varpi0,
        c1: inputs.c1,
        c2: inputs.c2,
        t_detected,
        t1,
        ms_bound_curve,
        worst: col.worst,
        info,
        violations: col.violations,
    })
}

// ------------------------------------------------------------------ audits

#[derive(Debug, Clone, PartialEq)]
pub struct AuditResult {
    pub name: &'static str,
    pub ok: bool,
    /// Smallest slack seen (negative when the audit fails).
    pub worst: f64,
    pub worst_t: f64,
}

/// `V(t) >= -tol` everywhere and `V(t) > 0` wherever `|e~_f| > 0.01`.
pub fn lyapunov_positivity(trace: &SimTrace, plant: &PlantModel) -> AuditResult {
    let v = lyapunov_v(trace, plant);
    let scale = v.iter().fold(1.0f64, |m, a| m.max(a.abs()));
    let tol = 1e-6 * scale;
    let mut worst = f64::INFINITY;
    let mut worst_t = 0.0;
    let mut ok = true;
    for k in 0..v.len() {
        let need_positive = trace.ef_tilde[k].abs() > 0.01;
        let slack = if need_positive { v[k] } else { v[k] + tol };
        if slack < worst {
            worst = slack;
            worst_t = trace.times[k];
        }
        if v[k] < -tol || (need_positive && !(v[k] > 0.0)) {
            ok = false;
        }
    }
    AuditResult {
        name: "lyapunov_positivity",
        ok,
        worst,
        worst_t,
    }
}

/// Reconstructed `L(t)` (V plus the scheme's estimate-error terms with the
/// fitted `W*`) must not increase across steps where `|e~_f| > 1.05 bound`,
/// up to a 5% relative slack.
pub fn dissipation_audit(trace: &SimTrace, inputs: &BoundInputs, plant: &PlantModel) -> AuditResult {
    let n = trace.len();
    let v = lyapunov_v(trace, plant);
    let g = &inputs.gains;
    let quad = |w: &[f64], star: &[f64], gamma: &[f64]| -> f64 {
        w.iter()
            .zip(star)
            .zip(gamma)
            .map(|((a, b), gm)| (a - b) * (a - b) / gm)
            .sum::<f64>()
    };
    let have_w = trace.w_f.len() == n && trace.w_g.len() == n;
    let est: Vec<f64> = (0..n)
        .map(|k| {
            let mut e = 0.0;
            if have_w {
                e += 0.5 * quad(&trace.w_f[k], &inputs.fit_f.w_star, &g.gamma_f);
                e += 0.5 * quad(&trace.w_g[k], &inputs.fit_g.w_star, &g.gamma_g);
            }
            if inputs.scheme == Scheme::C {
                e += 0.5 * (trace.lf_hat[k] - inputs.l_f).powi(2) / g.gamma_lf;
                e += 0.5 * (trace.lg_hat[k] - inputs.l_g).powi(2) / g.gamma_lg;
            }
            e
        })
        .collect();
    let l: Vec<f64> = if inputs.scheme.is_incremental() {
        let cum = cumtrapz(&trace.times, &est);
        (0..n)
            .map(|k| {
                let t = trace.times[k];
                let lo = (t - g.tau).max(0.0);
                v[k] + cum_at(&trace.times, &est, &cum, t) - cum_at(&trace.times, &est, &cum, lo)
            })
            .collect()
    } else {
        (0..n).map(|k| v[k] + est[k]).collect()
    };
    let level = BOUND_SLACK * inputs.steady_bound();
    let mut ok = true;
    let mut worst = f64::INFINITY;
    let mut worst_t = 0.0;
    for k in 1..n {
        if trace.ef_tilde[k].abs() <= level || trace.ef_tilde[k - 1].abs() <= level {
            continue;
        }
        let allowed = l[k - 1] + 0.05 * l[k - 1].abs() + 1e-9;
        let slack = allowed - l[k];
        if slack < worst {
            worst = slack;
            worst_t = trace.times[k];
        }
        if slack < 0.0 {
            ok = false;
        }
    }
    AuditResult {
        name: "dissipation",
        ok,
        worst,
        worst_t,
    }
}

// ------------------------------------------------ approximation comparison

#[derive(Debug, Clone, PartialEq)]
pub struct BoxComparison {
    pub radius: f64,
    /// Worst residual of a state-input network fitted over the box.
    pub conventional_eps: f64,
    /// Worst residual of the desired-trajectory fit (never reads the box).
    pub da_eps: f64,
}

/// Fits `target` with the same network two ways: along the desired
/// trajectory, and conventionally over each state box `[-r, r]^n` sampled at
/// spacing `sample_step`. Conventional residuals are also measured on the
/// grid offset by half a sample.
pub fn approximation_comparison<F>(
    target: F,
    traj: &DesiredTrajectory,
    net: &RbfNetwork,
    radii: &[f64],
    sample_step: f64,
) -> Result<Vec<BoxComparison>>
where
    F: Fn(&[f64]) -> f64,
{
    if !(sample_step > 0.0 && sample_step.is_finite()) {
        return Err(Error::Config(format!("sample step must be positive, got {sample_step}")));
    }
    let n = traj.order();
    check_len("comparison network input", net.dim(), n)?;
    let mut out = Vec::with_capacity(radii.len());
    let mut s = vec![0.0; net.len()];
    for &radius in radii {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Config(format!("box radius must be positive, got {radius}")));
        }
        let da = fit_ideal_weights(&target, traj, net, traj.horizon() / 1000.0, 1e-8)?;
        let per_axis = (2.0 * radius / sample_step).ceil() as usize + 1;
        let conv = fit_on_points(&target, &box_grid(radius, n, per_axis, 0.0), net, 1e-8)?;
        let mut worst: f64 = conv.eps_bar;
        for p in &box_grid(radius, n, per_axis, 0.5) {
            net.basis_into(p, &mut s)?;
            worst = worst.max((target(p) - network_output(&conv.w_star, &s)?).abs());
        }
        out.push(BoxComparison {
            radius,
            conventional_eps: worst,
            da_eps: da.eps_bar,
        });
    }
    Ok(out)
}

fn box_grid(radius: f64, n: usize, per_axis: usize, offset: f64) -> Vec<Vec<f64>> {
    let m = per_axis.max(2);
    let step = 2.0 * radius / (m - 1) as f64;
    let count = if offset > 0.0 { m - 1 } else { m };
    let axis: Vec<f64> = (0..count)
        .map(|i| -radius + (i as f64 + offset) * step)
        .collect();
    let mut pts: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..n {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbf::IdealFit;

    fn fit(w: Vec<f64>, eps: f64) -> IdealFit {
        IdealFit {
            w_star: w,
            eps_bar: eps,
            residuals: Vec::new(),
            sample_times: Vec::new(),
        }
    }

    fn gains() -> ControllerGains {
        ControllerGains {
            kappa: 4.0,
            eps_rho: 0.04,
            eta: 0.5,
            eta_f: 0.5,
            eta_g: 0.5,
            gamma_f: vec![1.0],
            gamma_g: vec![1.0],
            sigma_f: 0.0,
            sigma_g: 0.0,
            gamma_lf: 1.0,
            gamma_lg: 1.0,
            sigma_lf: 0.0,
            sigma_lg: 0.0,
            tau: 0.5,
        }
    }

    #[test]
    fn uub_examples() {
        let g = gains();
        assert!((uub_bound(&g, &fit(vec![0.0], 0.0), &fit(vec![0.0], 0.0)) - 0.1).abs() < 1e-15);
        let mut g = gains();
        g.kappa = 1.0;
        g.eps_rho = 0.0;
        g.sigma_f = 2.0;
        assert!((uub_bound(&g, &fit(vec![1.0], 0.0), &fit(vec![0.0], 0.0)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epsilon_examples() {
        let g = gains();
        let z = fit(vec![0.0], 0.0);
        assert_eq!(epsilon_bound(&g, &z, &z, EpsilonVariant::B), 0.04);
        let mut g = gains();
        g.eps_rho = 0.0;
        g.sigma_lf = 2.0;
        let v = epsilon_bound(&g, &z, &z, EpsilonVariant::C { l_f: 1.0, l_g: 0.0 });
        assert_eq!(v, 1.0);
    }

    #[test]
    fn quadrature_examples() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 / 100.0).collect();
        assert_eq!(trapz(&t, &vec![0.0; 101]), 0.0);
        let sq: Vec<f64> = t.iter().map(|s| s * s).collect();
        assert!((trapz(&t, &sq) - 1.0 / 3.0).abs() < 2e-5);
        let ones = vec![1.0; 101];
        assert!((windowed_integral(&t, &ones, 0.5, 1.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(windowed_integral(&t, &ones, 0.5, 0.2).is_err());
    }

    #[test]
    fn windowed_sine_energy() {
        let h = 1e-3;
        let t: Vec<f64> = (0..=10_000).map(|k| k as f64 * h).collect();
        let sq: Vec<f64> = t.iter().map(|s| s.sin().powi(2)).collect();
        let two_pi = 2.0 * std::f64::consts::PI;
        for end in [two_pi, 7.5, 9.9] {
            let v = windowed_integral(&t, &sq, two_pi, end).unwrap();
            assert!((v - std::f64::consts::PI).abs() < 1e-5, "{v}");
        }
    }

    #[test]
    fn centered_diff_linear_exact() {
        let t = [0.0, 0.1, 0.3, 0.6];
        let v: Vec<f64> = t.iter().map(|s| 3.0 * s - 1.0).collect();
        for d in centered_diff(&t, &v) {
            assert!((d - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lemma1_examples() {
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        assert!(lemma1_oracle(|_| 1.0, |t| t * t, &grid).unwrap());
        assert!(lemma1_oracle(|y| 2.0 + y.sin(), |t| t * t, &grid).unwrap());
        let inner: Vec<f64> = (0..=199).map(|k| k as f64 * 0.01).collect();
        assert!(lemma1_oracle(|y| 1.0 + y * y, |t| t * (2.0 - t), &inner).unwrap());
        assert!(matches!(
            lemma1_oracle(|_| 1.0, |t| t - 0.5, &grid),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn lemma2_examples() {
        let r0 = 4.0;
        let r: Vec<f64> = (0..200).map(|k| r0 * 0.5f64.powi(k)).collect();
        let s: Vec<f64> = r.clone();
        let d = vec![0.0; 200];
        // r_k = r_{k-1} / 2 = r_{k-1} - s_k
        let v = lemma2_check(&r, &s, &d, 0.0, true).unwrap();
        assert!(v.pass());

        let r: Vec<f64> = (0..60).map(|k| 1.0 + 2f64.powi(-k)).collect();
        let s: Vec<f64> = (0..60)
            .map(|k| if k == 0 { 0.1 } else { r[k - 1] - r[k] + 0.1 })
            .collect();
        let d = vec![0.1; 60];
        let v = lemma2_check(&r, &s, &d, 0.1, false).unwrap();
        assert!(v.pass(), "{v:?}");

        let bad_r = vec![1.0, 2.0, 3.0, 4.0];
        assert!(matches!(
            lemma2_check(&bad_r, &[0.0; 4], &[0.0; 4], 0.0, false),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn random_lemma_suites() {
        assert_eq!(lemma1_random_suite(10, 11).unwrap(), 10);
        assert_eq!(lemma2_random_suite(100, 12).unwrap(), 100);
    }
}
