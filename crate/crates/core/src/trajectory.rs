//! Reference trajectories and the desired filtered-error trajectory.
//!
//! A [`DesiredTrajectory`] bundles `y_d` with its first `n` derivatives, all
//! analytic, so the `y_d^(n)` term the controller needs is exact. The
//! [`ErrorTrajectoryPlan`] shapes `e*_f(t) = e_f(0) * zeta(t)`, which starts at
//! the measured filtered error and reaches zero at the settling moment.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// One `amplitude * sin(omega * t + phase)` component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub amplitude: f64,
    pub omega: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Supported reference families. All have closed-form derivatives of any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReferenceSpec {
    /// `offset + sum_i a_i sin(w_i t + phi_i)`
    Sinusoid {
        terms: Vec<SineTerm>,
        #[serde(default)]
        offset: f64,
    },
    /// `sum_k coeffs[k] * t^k`
    Polynomial { coeffs: Vec<f64> },
    Constant { value: f64 },
}

impl ReferenceSpec {
    fn validate(&self) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("reference {what} must be finite")))
            }
        };
        match self {
            ReferenceSpec::Sinusoid { terms, offset } => {
                finite(*offset, "offset")?;
                for term in terms {
                    finite(term.amplitude, "amplitude")?;
                    finite(term.omega, "omega")?;
                    finite(term.phase, "phase")?;
                }
            }
            ReferenceSpec::Polynomial { coeffs } => {
                for c in coeffs {
                    finite(*c, "coefficient")?;
                }
            }
            ReferenceSpec::Constant { value } => finite(*value, "value")?,
        }
        Ok(())
    }

    /// k-th time derivative at `t`.
    pub fn derivative(&self, k: usize, t: f64) -> f64 {
        match self {
            ReferenceSpec::Sinusoid { terms, offset } => {
                let mut acc = if k == 0 { *offset } else { 0.0 };
                for term in terms {
                    let scale = term.amplitude * term.omega.powi(k as i32);
                    acc += scale * (term.omega * t + term.phase + k as f64 * FRAC_PI_2).sin();
                }
                acc
            }
            ReferenceSpec::Polynomial { coeffs } => {
                // d^k/dt^k t^j = j!/(j-k)! t^(j-k)
                let mut acc = 0.0;
                for (j, c) in coeffs.iter().enumerate().skip(k) {
                    let falling: f64 = ((j - k + 1)..=j).map(|v| v as f64).product();
                    acc += c * falling * t.powi((j - k) as i32);
                }
                acc
            }
            ReferenceSpec::Constant { value } => {
                if k == 0 {
                    *value
                } else {
                    0.0
                }
            }
        }
    }
}

/// Network input built from the reference only: `x_d = [y_d, ..., y_d^(n-1)]`.
///
/// Only a [`DesiredTrajectory`] hands these out during simulation, which is
/// how the closed loop keeps the basis evaluation independent of the plant
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct DesiredState(Vec<f64>);

impl DesiredState {
    /// Wraps an arbitrary point of the desired-state space (fitting grids,
    /// tests). The simulator never calls this with plant data.
    pub fn from_point(point: Vec<f64>) -> Self {
        DesiredState(point)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Per-derivative bounds `[min, max]` over the horizon (the compact set Omega_d).
pub type BoundsBox = Vec<(f64, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct DesiredTrajectory {
    order: usize,
    spec: ReferenceSpec,
    horizon: f64,
    omega_d_box: BoundsBox,
}

/// Builds the reference bundle for a plant of order `n` and computes Omega_d
/// by sampling `[0, horizon]` at step `h / 10`.
pub fn make_reference(
    spec: &ReferenceSpec,
    n: usize,
    horizon: f64,
    h: f64,
) -> Result<DesiredTrajectory> {
    if n == 0 {
        return Err(Error::Config("reference order must be at least 1".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) || !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(
            "reference horizon and step must be positive".into(),
        ));
    }
    spec.validate()?;
    let step = h / 10.0;
    let samples = (horizon / step).round() as usize;
    let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); n + 1];
    for k in 0..=samples {
        let t = (k as f64 * step).min(horizon);
        for (i, b) in bounds.iter_mut().enumerate() {
            let v = spec.derivative(i, t);
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }
    Ok(DesiredTrajectory {
        order: n,
        spec: spec.clone(),
        horizon,
        omega_d_box: bounds,
    })
}

impl DesiredTrajectory {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn spec(&self) -> &ReferenceSpec {
        &self.spec
    }

    /// `y_d^(i)(t)` for `i <= n`.
    pub fn deriv(&self, i: usize, t: f64) -> f64 {
        debug_assert!(i <= self.order);
        self.spec.derivative(i, t)
    }

    /// All `n + 1` derivatives at `t`.
    pub fn derivs(&self, t: f64) -> Vec<f64> {
        (0..=self.order).map(|i| self.spec.derivative(i, t)).collect()
    }

    pub fn desired_state(&self, t: f64) -> DesiredState {
        DesiredState((0..self.order).map(|i| self.spec.derivative(i, t)).collect())
    }

    /// `y_d^(n)(t)`
    pub fn top_derivative(&self, t: f64) -> f64 {
        self.spec.derivative(self.order, t)
    }

    /// Omega_d as `n + 1` intervals.
    pub fn omega_d_box(&self) -> &BoundsBox {
        &self.omega_d_box
    }

    /// Bounds of the network-input coordinates only (first `n` derivatives).
    pub fn state_box(&self) -> BoundsBox {
        self.omega_d_box[..self.order].to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaProfile {
    /// `1 - (10u^3 - 15u^4 + 6u^5)`, flat at both ends.
    #[default]
    Quintic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorTrajectoryPlan {
    pub e_f0: f64,
    pub delta: f64,
    pub profile: ZetaProfile,
}

impl ErrorTrajectoryPlan {
    pub fn new(e_f0: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "settling moment must be positive, got {delta}"
            )));
        }
        if !e_f0.is_finite() {
            return Err(Error::InvalidPlan("initial filtered error is not finite".into()));
        }
        Ok(ErrorTrajectoryPlan {
            e_f0,
            delta,
            profile: ZetaProfile::Quintic,
        })
    }
}

/// Smoothing profile: 1 at `t = 0`, 0 for `t >= delta`, non-increasing between.
pub fn zeta(t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidPlan(format!(
            "settling moment must be positive, got {delta}"
        )));
    }
    Ok(zeta_unchecked(t, delta))
}

fn zeta_unchecked(t: f64, delta: f64) -> f64 {
    if t >= delta {
        return 0.0;
    }
    if t <= 0.0 {
        return 1.0;
    }
    let u = t / delta;
    1.0 - u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// `d zeta / dt`
pub fn zeta_rate(t: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidPlan(format!(
            "settling moment must be positive, got {delta}"
        )));
    }
    Ok(zeta_rate_unchecked(t, delta))
}

fn zeta_rate_unchecked(t: f64, delta: f64) -> f64 {
    if t >= delta || t <= 0.0 {
        return 0.0;
    }
    let u = t / delta;
    let w = u * (1.0 - u);
    -30.0 * w * w / delta
}

/// `(e*_f(t), d e*_f / dt)`
pub fn desired_filtered_error(plan: &ErrorTrajectoryPlan, t: f64) -> (f64, f64) {
    if t >= plan.delta {
        // positive zero, whatever the sign of e_f(0)
        return (0.0, 0.0);
    }
    match plan.profile {
        ZetaProfile::Quintic => (
            plan.e_f0 * zeta_unchecked(t, plan.delta),
            plan.e_f0 * zeta_rate_unchecked(t, plan.delta),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(a: f64, w: f64) -> ReferenceSpec {
        ReferenceSpec::Sinusoid {
            terms: vec![SineTerm {
                amplitude: a,
                omega: w,
                phase: 0.0,
            }],
            offset: 0.0,
        }
    }

    #[test]
    fn zeta_endpoints_and_midpoint() {
        assert_eq!(zeta(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(zeta(2.0, 2.0).unwrap(), 0.0);
        assert!((zeta(1.0, 2.0).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(zeta_rate(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(zeta_rate(2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn zeta_rejects_nonpositive_delta() {
        assert!(matches!(zeta(0.5, 0.0), Err(Error::InvalidPlan(_))));
        assert!(matches!(zeta(0.5, -1.0), Err(Error::InvalidPlan(_))));
        assert!(ErrorTrajectoryPlan::new(1.0, 0.0).is_err());
    }

    #[test]
    fn desired_error_examples() {
        let plan = ErrorTrajectoryPlan::new(2.0, 1.0).unwrap();
        assert_eq!(desired_filtered_error(&plan, 0.0), (2.0, 0.0));
        assert_eq!(desired_filtered_error(&plan, 5.0), (0.0, 0.0));
        let zero = ErrorTrajectoryPlan::new(0.0, 1.0).unwrap();
        let (e, de) = desired_filtered_error(&zero, 0.3);
        assert_eq!(e, 0.0);
        assert_eq!(de, 0.0);
    }

    #[test]
    fn past_delta_is_exact_zero() {
        let plan = ErrorTrajectoryPlan::new(-3.7, 0.8).unwrap();
        for k in 0..100 {
            let t = 0.8 + k as f64 * 0.013;
            let (e, de) = desired_filtered_error(&plan, t);
            assert_eq!(e.to_bits(), 0);
            assert_eq!(de.to_bits(), 0);
        }
    }

    #[test]
    fn rate_matches_finite_difference_at_second_order() {
        let plan = ErrorTrajectoryPlan::new(1.5, 1.2).unwrap();
        let max_err = |h: f64| {
            let mut worst = 0.0f64;
            let mut t = h;
            while t < 1.6 {
                let fd = (desired_filtered_error(&plan, t + h).0
                    - desired_filtered_error(&plan, t - h).0)
                    / (2.0 * h);
                worst = worst.max((fd - desired_filtered_error(&plan, t).1).abs());
                t += 0.01;
            }
            worst
        };
        let coarse = max_err(1e-2);
        let fine = max_err(5e-3);
        // Centred differences are O(h^2): halving h cuts the error ~4x.
        assert!(coarse / fine > 3.5, "ratio {}", coarse / fine);
        assert!(fine < 1e-3);
    }

    #[test]
    fn reference_families() {
        let tr = make_reference(&sine(1.0, 2.0), 2, 1.0, 1e-3).unwrap();
        for &t in &[0.0, 0.3, 0.77] {
            let d = tr.derivs(t);
            assert!((d[0] - (2.0 * t).sin()).abs() < 1e-14);
            assert!((d[1] - 2.0 * (2.0 * t).cos()).abs() < 1e-14);
            assert!((d[2] + 4.0 * (2.0 * t).sin()).abs() < 1e-13);
        }

        let c = make_reference(&ReferenceSpec::Constant { value: 3.0 }, 2, 1.0, 1e-3).unwrap();
        assert_eq!(c.derivs(0.4), vec![3.0, 0.0, 0.0]);

        let p = make_reference(
            &ReferenceSpec::Polynomial {
                coeffs: vec![0.0, 0.0, 1.0],
            },
            2,
            1.0,
            1e-3,
        )
        .unwrap();
        let d = p.derivs(1.5);
        assert!((d[0] - 2.25).abs() < 1e-14);
        assert!((d[1] - 3.0).abs() < 1e-14);
        assert!((d[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn derivative_chain_matches_finite_differences() {
        let spec = ReferenceSpec::Sinusoid {
            terms: vec![
                SineTerm {
                    amplitude: 0.7,
                    omega: 1.3,
                    phase: 0.2,
                },
                SineTerm {
                    amplitude: 0.2,
                    omega: 3.1,
                    phase: -1.0,
                },
            ],
            offset: 0.4,
        };
        let tr = make_reference(&spec, 3, 5.0, 1e-2).unwrap();
        let h = 1e-4;
        for k in 1..50 {
            let t = k as f64 * 0.1;
            for i in 0..3 {
                let fd = (tr.deriv(i, t + h) - tr.deriv(i, t - h)) / (2.0 * h);
                assert!((fd - tr.deriv(i + 1, t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn omega_box_contains_samples() {
        let tr = make_reference(&sine(1.0, 2.0), 2, 4.0, 1e-2).unwrap();
        let b = tr.omega_d_box();
        assert_eq!(b.len(), 3);
        for k in 0..4000 {
            let t = k as f64 * 1e-3;
            for (i, v) in tr.derivs(t).into_iter().enumerate() {
                assert!(v >= b[i].0 - 1e-9 && v <= b[i].1 + 1e-9);
            }
        }
        assert!((b[1].1 - 2.0).abs() < 1e-6);
        assert!((b[2].0 + 4.0).abs() < 1e-5);
    }

    #[test]
    fn unsupported_family_is_config_error() {
        let parsed: std::result::Result<ReferenceSpec, _> =
            toml::from_str("kind = \"chirp\"\nrate = 1.0\n");
        assert!(parsed.is_err());
        let bad = ReferenceSpec::Constant { value: f64::NAN };
        assert!(matches!(
            make_reference(&bad, 2, 1.0, 1e-3),
            Err(Error::Config(_))
        ));
    }
}
