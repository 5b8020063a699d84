//! Fixed-step RK4 closed loop: plant + reference + filtered error + controller.

use crate::controllers::{
    control_u_da, control_u_da2, incremental_adaptation_step, integral_adaptation_rhs,
    lipschitz_gain_step, robust_gain_rho, smooth_robust_term, varsigma, ControllerGains,
    ControllerState, Scheme,
};
use crate::error::{Error, Result};
use crate::error_geometry::{aux_nu, filtered_error};
use crate::plant::{builtin_plant_with, PlantModel};
use crate::rbf::{fit_ideal_weights, fit_min_bound, grid_network, IdealFit, RbfNetwork};
use crate::scenario::Scenario;
use crate::trajectory::{desired_filtered_error, make_reference, DesiredTrajectory, ErrorTrajectoryPlan};

/// Any state component beyond this magnitude aborts the run.
pub const BLOWUP_THRESHOLD: f64 = 1e9;

/// Classical fourth-order Runge-Kutta step.
pub fn rk4_step<F>(mut deriv: F, state: &[f64], t: f64, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let blowup = || Error::NumericBlowup {
        step: (t / h).round().max(0.0) as usize,
        t,
    };
    let mut eval = |tt: f64, s: &[f64]| -> Result<Vec<f64>> {
        let d = deriv(tt, s)?;
        if d.len() != s.len() {
            return Err(Error::Shape {
                what: "state derivative",
                expected: s.len(),
                got: d.len(),
            });
        }
        if d.iter().all(|v| v.is_finite()) {
            Ok(d)
        } else {
            Err(blowup())
        }
    };
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> {
        state.iter().zip(k).map(|(s, d)| s + a * d).collect()
    };
    let k1 = eval(t, state)?;
    let k2 = eval(t + 0.5 * h, &axpy(0.5 * h, &k1))?;
    let k3 = eval(t + 0.5 * h, &axpy(0.5 * h, &k2))?;
    let k4 = eval(t + h, &axpy(h, &k3))?;
    Ok((0..state.len())
        .map(|i| state[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Everything derived from a validated scenario before the loop starts.
#[derive(Debug, Clone)]
pub struct ClosedLoopSetup {
    pub scenario: Scenario,
    pub plant: PlantModel,
    pub traj: DesiredTrajectory,
    pub net: RbfNetwork,
    pub fit_f: IdealFit,
    pub fit_g: IdealFit,
    /// Ridge used for each fit.
    pub ridge_f: f64,
    pub ridge_g: f64,
    pub gains: ControllerGains,
    pub lambda: Vec<f64>,
    pub plan: ErrorTrajectoryPlan,
    pub lag_steps: usize,
    pub steps: usize,
}

impl ClosedLoopSetup {
    pub fn build(scenario: &Scenario) -> Result<Self> {
        let lag_steps = scenario.validate()?;
        let sim = &scenario.sim;
        let steps_f = sim.horizon / sim.h;
        let steps = steps_f.round() as usize;
        if (steps_f - steps as f64).abs() > 1e-9 * steps_f {
            return Err(Error::Config(format!(
                "horizon {} is not a whole number of steps h = {}",
                sim.horizon, sim.h
            )));
        }
        let plant = builtin_plant_with(&scenario.plant.name, &scenario.plant.params)?;
        let n = plant.order();
        let traj = make_reference(&scenario.reference, n, sim.horizon, sim.h)?;
        let net = grid_network(&traj, scenario.network.per_axis)?;
        let gains = scenario.controller.gains(net.len())?;
        let (eta_f, eta_g) = match scenario.controller.scheme {
            Scheme::C => (gains.eta_f, gains.eta_g),
            Scheme::A | Scheme::B => (gains.eta, gains.eta),
        };
        let step = scenario.network.fit_grid_step;
        let p = &plant;
        let (fit_f, ridge_f) = match scenario.network.ridge {
            Some(r) => (fit_ideal_weights(|xd| p.f(xd), &traj, &net, step, r)?, r),
            None => fit_min_bound(|xd| p.f(xd), &traj, &net, step, gains.sigma_f, eta_f)?,
        };
        let (fit_g, ridge_g) = match scenario.network.ridge {
            Some(r) => (fit_ideal_weights(|xd| p.g(xd), &traj, &net, step, r)?, r),
            None => fit_min_bound(|xd| p.g(xd), &traj, &net, step, gains.sigma_g, eta_g)?,
        };
        let lambda = scenario.filter.lambda.clone();
        let e0: Vec<f64> = sim
            .x0
            .iter()
            .zip(traj.desired_state(0.0).as_slice())
            .map(|(x, xd)| x - xd)
            .collect();
        let plan = ErrorTrajectoryPlan::new(filtered_error(&e0, &lambda)?, sim.delta)?;
        Ok(ClosedLoopSetup {
            scenario: scenario.clone(),
            plant,
            traj,
            net,
            fit_f,
            fit_g,
            ridge_f,
            ridge_g,
            gains,
            lambda,
            plan,
            lag_steps,
            steps,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scenario.controller.scheme
    }

    pub fn h(&self) -> f64 {
        self.scenario.sim.h
    }

    pub fn order(&self) -> usize {
        self.plant.order()
    }
}

/// Per-step log. Weight vectors may be empty for traces read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub scheme: Scheme,
    pub order: usize,
    pub h: f64,
    pub times: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub x_d: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub ef: Vec<f64>,
    pub ef_star: Vec<f64>,
    pub ef_tilde: Vec<f64>,
    pub nu: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<f64>,
    pub w_f: Vec<Vec<f64>>,
    pub w_g: Vec<Vec<f64>>,
    pub wf_norm: Vec<f64>,
    pub wg_norm: Vec<f64>,
    pub lf_hat: Vec<f64>,
    pub lg_hat: Vec<f64>,
    /// `rho` for A/B, `varsigma` for C.
    pub robust_gain: Vec<f64>,
    pub smooth_term: Vec<f64>,
    pub inc_residual: Vec<f64>,
    /// The exact vectors handed to the basis evaluation.
    pub basis_inputs: Vec<Vec<f64>>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

impl SimTrace {
    fn empty(scheme: Scheme, order: usize, h: f64, capacity: usize) -> Self {
        let v = || Vec::with_capacity(capacity);
        let vv = || Vec::with_capacity(capacity);
        SimTrace {
            scheme,
            order,
            h,
            times: v(),
            x: vv(),
            x_d: vv(),
            e: vv(),
            ef: v(),
            ef_star: v(),
            ef_tilde: v(),
            nu: v(),
            u: v(),
            g: v(),
            w_f: vv(),
            w_g: vv(),
            wf_norm: v(),
            wg_norm: v(),
            lf_hat: v(),
            lg_hat: v(),
            robust_gain: v(),
            smooth_term: v(),
            inc_residual: v(),
            basis_inputs: vv(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `e_1` over time.
    pub fn e1(&self) -> Vec<f64> {
        self.e.iter().map(|e| e[0]).collect()
    }

    pub fn column_names(&self, verbose: bool) -> Vec<String> {
        let n = self.order;
        let mut cols = vec!["t".to_string()];
        cols.extend((1..=n).map(|i| format!("x{i}")));
        cols.extend((1..=n).map(|i| format!("xd{i}")));
        cols.extend((1..=n).map(|i| format!("e{i}")));
        for c in [
            "ef", "ef_star", "ef_tilde", "nu", "u", "g", "wf_norm", "wg_norm", "lf_hat", "lg_hat",
            "inc_residual",
        ] {
            cols.push(c.to_string());
        }
        if verbose {
            cols.push("rho_or_varsigma".into());
            cols.push("smooth_term".into());
        }
        cols
    }

    pub fn row(&self, k: usize, verbose: bool) -> Vec<f64> {
        let mut r = vec![self.times[k]];
        r.extend_from_slice(&self.x[k]);
        r.extend_from_slice(&self.x_d[k]);
        r.extend_from_slice(&self.e[k]);
        r.extend_from_slice(&[
            self.ef[k],
            self.ef_star[k],
            self.ef_tilde[k],
            self.nu[k],
            self.u[k],
            self.g[k],
            self.wf_norm[k],
            self.wg_norm[k],
            self.lf_hat[k],
            self.lg_hat[k],
            self.inc_residual[k],
        ]);
        if verbose {
            r.push(self.robust_gain[k]);
            r.push(self.smooth_term[k]);
        }
        r
    }

    /// One named column (any name from `column_names(true)`).
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column_names(true).iter().position(|c| c == name)?;
        Some((0..self.len()).map(|k| self.row(k, true)[idx]).collect())
    }

    /// Rebuilds a trace from named columns (as written by `column_names`).
    /// Weight vectors and basis inputs are not recoverable and stay empty.
    pub fn from_columns(
        scheme: Scheme,
        header: &[String],
        rows: &[Vec<f64>],
    ) -> Result<SimTrace> {
        let find = |name: &str| -> Result<usize> {
            header.iter().position(|c| c == name).ok_or_else(|| {
                Error::TraceFormat(format!(
                    "missing column '{name}'; available: {}",
                    header.join(", ")
                ))
            })
        };
        let order = (1..).take_while(|i| header.iter().any(|c| *c == format!("e{i}"))).count();
        if order == 0 {
            return Err(Error::TraceFormat("trace has no error columns".into()));
        }
        let t_i = find("t")?;
        let xi: Vec<usize> = (1..=order).map(|i| find(&format!("x{i}"))).collect::<Result<_>>()?;
        let xdi: Vec<usize> = (1..=order).map(|i| find(&format!("xd{i}"))).collect::<Result<_>>()?;
        let ei: Vec<usize> = (1..=order).map(|i| find(&format!("e{i}"))).collect::<Result<_>>()?;
        let named = [
            "ef", "ef_star", "ef_tilde", "nu", "u", "g", "wf_norm", "wg_norm", "lf_hat", "lg_hat",
            "inc_residual",
        ]
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<usize>>>()?;
        let optional = |name: &str| header.iter().position(|c| c == name);
        let rg = optional("rho_or_varsigma");
        let sm = optional("smooth_term");
        let h = if rows.len() > 1 { rows[1][t_i] - rows[0][t_i] } else { 0.0 };
        let mut tr = SimTrace::empty(scheme, order, h, rows.len());
        for (k, r) in rows.iter().enumerate() {
            if r.len() != header.len() {
                return Err(Error::TraceFormat(format!(
                    "row {k} has {} fields, header has {}",
                    r.len(),
                    header.len()
                )));
            }
            let pick = |ix: &[usize]| ix.iter().map(|&i| r[i]).collect::<Vec<f64>>();
            tr.times.push(r[t_i]);
            tr.x.push(pick(&xi));
            tr.x_d.push(pick(&xdi));
            tr.e.push(pick(&ei));
            tr.ef.push(r[named[0]]);
            tr.ef_star.push(r[named[1]]);
            tr.ef_tilde.push(r[named[2]]);
            tr.nu.push(r[named[3]]);
            tr.u.push(r[named[4]]);
            tr.g.push(r[named[5]]);
            tr.wf_norm.push(r[named[6]]);
            tr.wg_norm.push(r[named[7]]);
            tr.lf_hat.push(r[named[8]]);
            tr.lg_hat.push(r[named[9]]);
            tr.inc_residual.push(r[named[10]]);
            tr.robust_gain.push(rg.map_or(f64::NAN, |i| r[i]));
            tr.smooth_term.push(sm.map_or(f64::NAN, |i| r[i]));
        }
        Ok(tr)
    }
}

/// A failed run: the cause plus whatever was logged before it.
#[derive(Clone)]
pub struct SimAbort {
    pub error: Error,
    pub partial: Option<Box<SimTrace>>,
}

impl std::fmt::Debug for SimAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimAbort")
            .field("error", &self.error)
            .field("partial_rows", &self.partial.as_ref().map(|p| p.len()))
            .finish()
    }
}

impl std::fmt::Display for SimAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.partial {
            Some(p) => write!(f, "{} (after {} logged steps)", self.error, p.len()),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for SimAbort {}

impl From<Error> for SimAbort {
    fn from(error: Error) -> Self {
        SimAbort { error, partial: None }
    }
}

struct Signals {
    x_d: Vec<f64>,
    e: Vec<f64>,
    e_f: f64,
    e_star: f64,
    e_tilde: f64,
    nu: f64,
    s: Vec<f64>,
    e_norm: f64,
    hbar_f: f64,
    hbar_g: f64,
}

fn signals(setup: &ClosedLoopSetup, t: f64, x: &[f64]) -> Result<Signals> {
    let n = setup.order();
    let xd_state = setup.traj.desired_state(t);
    let x_d = xd_state.as_slice().to_vec();
    let e: Vec<f64> = x.iter().zip(&x_d).map(|(a, b)| a - b).collect();
    let e_f = filtered_error(&e, &setup.lambda)?;
    let (e_star, de_star) = desired_filtered_error(&setup.plan, t);
    let nu = aux_nu(&e, &setup.lambda, setup.traj.deriv(n, t), de_star)?;
    // basis input is the desired state, never x
    let s = setup.net.eval_basis(&xd_state)?;
    Ok(Signals {
        e_norm: norm(&e),
        hbar_f: setup.plant.hbar_f(x, &x_d),
        hbar_g: setup.plant.hbar_g(x, &x_d),
        x_d,
        e,
        e_f,
        e_star,
        e_tilde: e_f - e_star,
        nu,
        s,
    })
}

/// `(u, rho or varsigma, smooth term)`
fn control(
    setup: &ClosedLoopSetup,
    sig: &Signals,
    x: &[f64],
    state: &ControllerState,
) -> Result<(f64, f64, f64)> {
    let gains = &setup.gains;
    match setup.scheme() {
        Scheme::A | Scheme::B => {
            let rho = robust_gain_rho(
                setup.plant.lf_bound(x, &sig.x_d),
                setup.plant.lg_bound(x, &sig.x_d),
                sig.nu,
                sig.e_tilde,
                gains.eta,
            );
            let u = control_u_da(sig.e_tilde, rho, sig.nu, &sig.s, &sig.s, state, gains)?;
            Ok((u, rho, smooth_robust_term(sig.e_tilde, rho, gains.eps_rho)))
        }
        Scheme::C => {
            let vs = varsigma(state, sig.nu, sig.hbar_f, sig.hbar_g);
            let u = control_u_da2(
                sig.e_tilde,
                sig.nu,
                &sig.s,
                &sig.s,
                sig.e_norm,
                sig.hbar_f,
                sig.hbar_g,
                state,
                gains,
            )?;
            Ok((u, vs, smooth_robust_term(sig.e_tilde, vs * sig.e_norm, gains.eps_rho)))
        }
    }
}

fn out_of_range(v: &[f64]) -> bool {
    v.iter().any(|a| !a.is_finite() || a.abs() > BLOWUP_THRESHOLD)
}

/// Validates, builds and runs a scenario.
pub fn run_closed_loop(scenario: &Scenario) -> std::result::Result<SimTrace, SimAbort> {
    let setup = ClosedLoopSetup::build(scenario)?;
    run_setup(&setup)
}

/// Runs a prepared setup over `[0, horizon]`, logging `horizon / h + 1` rows.
///
/// Each step: signals at `t_k`; for B/C the incremental laws fire with
/// `e~_f(t_k)`, then `u` is formed from the fresh estimates and held over the
/// RK4 step. Scheme A integrates `[x, W_f, W_g]` together and re-evaluates `u`
/// at every stage.
pub fn run_setup(setup: &ClosedLoopSetup) -> std::result::Result<SimTrace, SimAbort> {
    let n = setup.order();
    let nodes = setup.net.len();
    let h = setup.h();
    let scheme = setup.scheme();
    let lag = scheme.is_incremental().then_some(setup.lag_steps);
    let mut state = ControllerState::new(nodes, nodes, lag)?;
    let mut x = setup.scenario.sim.x0.clone();
    let mut trace = SimTrace::empty(scheme, n, h, setup.steps + 1);

    let abort = |error: Error, trace: SimTrace| SimAbort {
        error,
        partial: Some(Box::new(trace)),
    };

    for k in 0..=setup.steps {
        let t = k as f64 * h;
        let sig = match signals(setup, t, &x) {
            Ok(s) => s,
            Err(e) => return Err(abort(e, trace)),
        };
        let mut residual = 0.0;
        if scheme.is_incremental() {
            match incremental_adaptation_step(&mut state, &sig.s, &sig.s, sig.e_tilde, sig.nu, &setup.gains) {
                Ok(r) => residual = r,
                Err(e) => return Err(abort(e, trace)),
            }
            if scheme == Scheme::C {
                if let Err(e) = lipschitz_gain_step(
                    &mut state,
                    sig.e_tilde,
                    sig.e_norm,
                    sig.nu,
                    sig.hbar_f,
                    sig.hbar_g,
                    &setup.gains,
                ) {
                    return Err(abort(e, trace));
                }
            }
        }
        let (u, gain, smooth) = match control(setup, &sig, &x, &state) {
            Ok(v) => v,
            Err(e) => return Err(abort(e, trace)),
        };
        let g = setup.plant.g(&x);

        trace.times.push(t);
        trace.x.push(x.clone());
        trace.basis_inputs.push(sig.x_d.clone());
        trace.x_d.push(sig.x_d);
        trace.e.push(sig.e);
        trace.ef.push(sig.e_f);
        trace.ef_star.push(sig.e_star);
        trace.ef_tilde.push(sig.e_tilde);
        trace.nu.push(sig.nu);
        trace.u.push(u);
        trace.g.push(g);
        trace.wf_norm.push(norm(&state.w_f));
        trace.wg_norm.push(norm(&state.w_g));
        trace.w_f.push(state.w_f.clone());
        trace.w_g.push(state.w_g.clone());
        trace.lf_hat.push(state.l_f_hat);
        trace.lg_hat.push(state.l_g_hat);
        trace.robust_gain.push(gain);
        trace.smooth_term.push(smooth);
        trace.inc_residual.push(residual);

        if k == setup.steps {
            break;
        }
        if !(g > 0.0) {
            return Err(abort(Error::GainSign { t, value: g }, trace));
        }

        let stepped = match scheme {
            Scheme::B | Scheme::C => rk4_step(|tt, xx| setup.plant.derivative_at(tt, xx, u), &x, t, h)
                .map(|nx| (nx, None)),
            Scheme::A => {
                let mut z = x.clone();
                z.extend_from_slice(&state.w_f);
                z.extend_from_slice(&state.w_g);
                rk4_step(|tt, zz| augmented_rhs(setup, tt, zz), &z, t, h).map(|nz| {
                    let w_f = nz[n..n + nodes].to_vec();
                    let w_g = nz[n + nodes..].to_vec();
                    (nz[..n].to_vec(), Some((w_f, w_g)))
                })
            }
        };
        match stepped {
            Ok((nx, weights)) => {
                let bad = out_of_range(&nx)
                    || weights
                        .as_ref()
                        .is_some_and(|(a, b)| out_of_range(a) || out_of_range(b));
                if bad {
                    let step = k + 1;
                    return Err(abort(
                        Error::NumericBlowup {
                            step,
                            t: step as f64 * h,
                        },
                        trace,
                    ));
                }
                x = nx;
                if let Some((w_f, w_g)) = weights {
                    state.w_f = w_f;
                    state.w_g = w_g;
                }
            }
            Err(e) => return Err(abort(e, trace)),
        }
    }
    Ok(trace)
}

fn augmented_rhs(setup: &ClosedLoopSetup, t: f64, z: &[f64]) -> Result<Vec<f64>> {
    let n = setup.order();
    let nodes = setup.net.len();
    let x = &z[..n];
    let st = ControllerState::with_initial(
        z[n..n + nodes].to_vec(),
        z[n + nodes..].to_vec(),
        0.0,
        0.0,
        None,
    )?;
    let sig = signals(setup, t, x)?;
    let (u, _, _) = control(setup, &sig, x, &st)?;
    let gains = &setup.gains;
    let mut dz = setup.plant.derivative_at(t, x, u)?;
    dz.extend(integral_adaptation_rhs(&st.w_f, &sig.s, sig.e_tilde, 1.0, &gains.gamma_f, gains.sigma_f)?);
    dz.extend(integral_adaptation_rhs(&st.w_g, &sig.s, sig.e_tilde, sig.nu, &gains.gamma_g, gains.sigma_g)?);
    Ok(dz)
}

/// Checks that every basis evaluation used the desired state at its own time
/// (bitwise), i.e. the networks never saw the plant state.
pub fn da_audit(trace: &SimTrace, traj: &DesiredTrajectory) -> bool {
    trace.basis_inputs.len() == trace.len()
        && trace
            .basis_inputs
            .iter()
            .zip(&trace.times)
            .all(|(b, &t)| b.as_slice() == traj.desired_state(t).as_slice())
}

/// C-style `%.12e`: twelve mantissa digits, signed exponent of at least two digits.
pub fn fmt_sci(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.12e}");
    match s.split_once('e') {
        Some((mant, exp)) => {
            let (sign, digits) = match exp.strip_prefix('-') {
                Some(d) => ('-', d),
                None => ('+', exp),
            };
            format!("{mant}e{sign}{digits:0>2}")
        }
        None => s,
    }
}
