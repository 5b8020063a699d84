//! The three control/adaptation schemes.
//!
//! * A: `u_DA` with integral (sigma-modified gradient) adaptation of the weights.
//! * B: `u_DA` with incremental adaptation,
//!   `(1 + sigma Gamma) W(t) = W(t - tau) + Gamma e~_f S`.
//! * C: `u_DA2` with incremental adaptation of the weights and of the
//!   Lipschitz-gain estimates `l^_f`, `l^_g`.
//!
//! `Gamma` is diagonal throughout, so every `(1 + sigma Gamma)^{-1}` is elementwise.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::error::{check_len, Error, Result};
use crate::rbf::network_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    A,
    B,
    C,
}

impl Scheme {
    pub fn is_incremental(self) -> bool {
        matches!(self, Scheme::B | Scheme::C)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scheme::A => "A",
            Scheme::B => "B",
            Scheme::C => "C",
        };
        f.write_str(s)
    }
}

/// Design parameters shared by all schemes. `eps_rho` plays the role of
/// `eps_varsigma` under scheme C; `eta` is used by A/B, `eta_f`/`eta_g` by C.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerGains {
    pub kappa: f64,
    pub eps_rho: f64,
    pub eta: f64,
    pub eta_f: f64,
    pub eta_g: f64,
    pub gamma_f: Vec<f64>,
    pub gamma_g: Vec<f64>,
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub gamma_lf: f64,
    pub gamma_lg: f64,
    pub sigma_lf: f64,
    pub sigma_lg: f64,
    pub tau: f64,
}

impl ControllerGains {
    /// Checks positivity and that `tau` is a whole number of steps `h`;
    /// returns that number.
    pub fn validate(&self, h: f64) -> Result<usize> {
        let scalars = [
            ("kappa", self.kappa),
            ("eps_rho", self.eps_rho),
            ("eta", self.eta),
            ("eta_f", self.eta_f),
            ("eta_g", self.eta_g),
            ("sigma_f", self.sigma_f),
            ("sigma_g", self.sigma_g),
            ("gamma_lf", self.gamma_lf),
            ("gamma_lg", self.gamma_lg),
            ("sigma_lf", self.sigma_lf),
            ("sigma_lg", self.sigma_lg),
            ("tau", self.tau),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, g) in [("gamma_f", &self.gamma_f), ("gamma_g", &self.gamma_g)] {
            if g.is_empty() || g.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("{name} must be a positive diagonal")));
            }
        }
        tau_steps(self.tau, h)
    }
}

/// `tau / h` as an exact integer, or a config error.
pub fn tau_steps(tau: f64, h: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("step h must be positive, got {h}")));
    }
    let ratio = tau / h;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * m.max(1.0) {
        return Err(Error::Config(format!(
            "tau = {tau} is not a positive integer multiple of h = {h}"
        )));
    }
    Ok(m as usize)
}

/// Fixed-depth history used for the `t - tau` lookups of the incremental laws.
///
/// Holds `m + 1` entries. Before step `k` they are the values at steps
/// `k - 1 - m ..= k - 1`; steps before zero read as the initial value.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine<T> {
    buf: VecDeque<T>,
}

impl<T: Clone> DelayLine<T> {
    pub fn new(initial: T, lag_steps: usize) -> Result<Self> {
        if lag_steps == 0 {
            return Err(Error::Config("delay line needs a lag of at least one step".into()));
        }
        Ok(DelayLine {
            buf: std::iter::repeat_n(initial, lag_steps + 1).collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.buf.len()
    }

    /// Value exactly `m` steps before the entry that will be pushed next.
    pub fn lagged(&self) -> Result<&T> {
        self.buf
            .get(1)
            .ok_or_else(|| Error::Internal("delay line history is empty".into()))
    }

    pub fn push(&mut self, value: T) {
        self.buf.pop_front();
        self.buf.push_back(value);
    }

    pub fn newest(&self) -> Option<&T> {
        self.buf.back()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct History {
    w_f: DelayLine<Vec<f64>>,
    w_g: DelayLine<Vec<f64>>,
    l_f: DelayLine<f64>,
    l_g: DelayLine<f64>,
}

/// Single-owner mutable estimator state for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub w_f: Vec<f64>,
    pub w_g: Vec<f64>,
    pub l_f_hat: f64,
    pub l_g_hat: f64,
    history: Option<History>,
}

impl ControllerState {
    /// Zero-initialised estimates; `lag_steps = Some(m)` enables the delay lines.
    pub fn new(n_f: usize, n_g: usize, lag_steps: Option<usize>) -> Result<Self> {
        Self::with_initial(vec![0.0; n_f], vec![0.0; n_g], 0.0, 0.0, lag_steps)
    }

    pub fn with_initial(
        w_f: Vec<f64>,
        w_g: Vec<f64>,
        l_f_hat: f64,
        l_g_hat: f64,
        lag_steps: Option<usize>,
    ) -> Result<Self> {
        if l_f_hat < 0.0 || l_g_hat < 0.0 {
            return Err(Error::Config("Lipschitz estimates must start non-negative".into()));
        }
        let history = match lag_steps {
            Some(m) => Some(History {
                w_f: DelayLine::new(w_f.clone(), m)?,
                w_g: DelayLine::new(w_g.clone(), m)?,
                l_f: DelayLine::new(l_f_hat, m)?,
                l_g: DelayLine::new(l_g_hat, m)?,
            }),
            None => None,
        };
        Ok(ControllerState {
            w_f,
            w_g,
            l_f_hat,
            l_g_hat,
            history,
        })
    }

    /// Depth of the weight history (`tau/h + 1`), if any.
    pub fn history_depth(&self) -> Option<usize> {
        self.history.as_ref().map(|h| h.w_f.depth())
    }

    pub fn lagged_weights(&self) -> Result<(&[f64], &[f64])> {
        let h = self.history()?;
        Ok((h.w_f.lagged()?, h.w_g.lagged()?))
    }

    pub fn lagged_gains(&self) -> Result<(f64, f64)> {
        let h = self.history()?;
        Ok((*h.l_f.lagged()?, *h.l_g.lagged()?))
    }

    fn history(&self) -> Result<&History> {
        self.history
            .as_ref()
            .ok_or_else(|| Error::Internal("incremental law used without history".into()))
    }
}

/// `rho = l_f + l_g |nu| + |e~_f| (1 + nu^2) / (4 eta)`
pub fn robust_gain_rho(lf_b: f64, lg_b: f64, nu: f64, e_tilde: f64, eta: f64) -> f64 {
    lf_b + lg_b * nu.abs() + e_tilde.abs() * (1.0 + nu * nu) / (4.0 * eta)
}

/// `e rho^2 / sqrt(e^2 rho^2 + eps^2)`, the smooth stand-in for `rho sign(e)`.
pub fn smooth_robust_term(e_tilde: f64, rho: f64, eps: f64) -> f64 {
    let er = e_tilde * rho;
    e_tilde * rho * rho / (er * er + eps * eps).sqrt()
}

/// Scheme A/B control law.
pub fn control_u_da(
    e_tilde: f64,
    rho: f64,
    nu: f64,
    s_f: &[f64],
    s_g: &[f64],
    state: &ControllerState,
    gains: &ControllerGains,
) -> Result<f64> {
    let comp_f = network_output(&state.w_f, s_f)?;
    let comp_g = network_output(&state.w_g, s_g)?;
    Ok(-smooth_robust_term(e_tilde, rho, gains.eps_rho) - gains.kappa * e_tilde - comp_f - comp_g * nu)
}

/// `dW^/dt = Gamma (S e~_f m - sigma W^)` with `m = 1` for `f` and `m = nu` for `g`.
pub fn integral_adaptation_rhs(
    w_hat: &[f64],
    s: &[f64],
    e_tilde: f64,
    nu_or_one: f64,
    gamma: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    check_len("adaptation basis", w_hat.len(), s.len())?;
    check_len("adaptation gain", w_hat.len(), gamma.len())?;
    Ok(w_hat
        .iter()
        .zip(s)
        .zip(gamma)
        .map(|((w, si), g)| g * (si * e_tilde * nu_or_one - sigma * w))
        .collect())
}

fn incremental_update(
    lagged: &[f64],
    s: &[f64],
    drive: f64,
    gamma: &[f64],
    sigma: f64,
) -> (Vec<f64>, f64) {
    let mut out = Vec::with_capacity(lagged.len());
    let mut resid_sq = 0.0;
    for ((wl, si), g) in lagged.iter().zip(s).zip(gamma) {
        let w = (wl + g * drive * si) / (1.0 + sigma * g);
        let r = (1.0 + sigma * g) * w - wl - g * drive * si;
        resid_sq += r * r;
        out.push(w);
    }
    (out, resid_sq.sqrt())
}

/// Applies both incremental weight laws at the current instant and advances
/// the weight history. Returns the larger residual of the defining relation.
pub fn incremental_adaptation_step(
    state: &mut ControllerState,
    s_f: &[f64],
    s_g: &[f64],
    e_tilde: f64,
    nu: f64,
    gains: &ControllerGains,
) -> Result<f64> {
    check_len("incremental f basis", state.w_f.len(), s_f.len())?;
    check_len("incremental g basis", state.w_g.len(), s_g.len())?;
    check_len("gamma_f", state.w_f.len(), gains.gamma_f.len())?;
    check_len("gamma_g", state.w_g.len(), gains.gamma_g.len())?;
    let (wf_lag, wg_lag) = state.lagged_weights()?;
    let (w_f, rf) = incremental_update(wf_lag, s_f, e_tilde, &gains.gamma_f, gains.sigma_f);
    let (w_g, rg) = incremental_update(wg_lag, s_g, e_tilde * nu, &gains.gamma_g, gains.sigma_g);
    let hist = state.history.as_mut().expect("checked by lagged_weights");
    hist.w_f.push(w_f.clone());
    hist.w_g.push(w_g.clone());
    state.w_f = w_f;
    state.w_g = w_g;
    Ok(rf.max(rg))
}

/// Incremental Lipschitz-gain laws; advances the gain history.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_gain_step(
    state: &mut ControllerState,
    e_tilde: f64,
    e_norm: f64,
    nu: f64,
    hbar_f: f64,
    hbar_g: f64,
    gains: &ControllerGains,
) -> Result<(f64, f64)> {
    let (lf_lag, lg_lag) = state.lagged_gains()?;
    let drive = e_tilde.abs() * e_norm;
    let l_f = (lf_lag + gains.gamma_lf * drive * hbar_f) / (1.0 + gains.sigma_lf * gains.gamma_lf);
    let l_g = (lg_lag + gains.gamma_lg * nu.abs() * drive * hbar_g)
        / (1.0 + gains.sigma_lg * gains.gamma_lg);
    let hist = state.history.as_mut().expect("checked by lagged_gains");
    hist.l_f.push(l_f);
    hist.l_g.push(l_g);
    state.l_f_hat = l_f;
    state.l_g_hat = l_g;
    Ok((l_f, l_g))
}

/// `varsigma = l^_f hbar_f + l^_g |nu| hbar_g`
pub fn varsigma(state: &ControllerState, nu: f64, hbar_f: f64, hbar_g: f64) -> f64 {
    state.l_f_hat * hbar_f + state.l_g_hat * nu.abs() * hbar_g
}

/// Scheme C control law.
#[allow(clippy::too_many_arguments)]
pub fn control_u_da2(
    e_tilde: f64,
    nu: f64,
    s_f: &[f64],
    s_g: &[f64],
    e_norm: f64,
    hbar_f: f64,
    hbar_g: f64,
    state: &ControllerState,
    gains: &ControllerGains,
) -> Result<f64> {
    let sig = varsigma(state, nu, hbar_f, hbar_g);
    let comp_f = network_output(&state.w_f, s_f)?;
    let comp_g = network_output(&state.w_g, s_g)?;
    let robust = smooth_robust_term(e_tilde, sig * e_norm, gains.eps_rho);
    let linear = gains.kappa + 1.0 / (4.0 * gains.eta_f) + nu * nu / (4.0 * gains.eta_g);
    Ok(-robust - e_tilde * linear - comp_f - comp_g * nu)
}
