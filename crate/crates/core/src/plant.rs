//! SISO plants in controllable canonical form, `g(x) xdot_n = f(x) + u`.
//!
//! None of the benchmark plants come from the literature; they are chosen to
//! be globally Lipschitz so both bounding styles (a known function
//! `l(x, x_d)` and the `l * |x - x_d| * hbar(x, x_d)` form) hold everywhere.
//! The true Lipschitz constants are carried for verification only; the
//! scheme-C controller reads nothing but the `hbar` factors.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlantKind {
    P1,
    P2,
    P3,
}

impl std::str::FromStr for PlantKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P1" | "p1" => Ok(PlantKind::P1),
            "P2" | "p2" => Ok(PlantKind::P2),
            "P3" | "p3" => Ok(PlantKind::P3),
            other => Err(Error::Config(format!(
                "unknown plant '{other}' (expected P1, P2 or P3)"
            ))),
        }
    }
}

/// A benchmark plant with its coefficients resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    kind: PlantKind,
    p: BTreeMap<&'static str, f64>,
}

fn defaults(kind: PlantKind) -> &'static [(&'static str, f64)] {
    match kind {
        // f = f_sin sin(x1) + f_tanh tanh(x2);  g = g_bias + g_cos cos(x1)
        PlantKind::P1 => &[("f_sin", 0.5), ("f_tanh", 0.3), ("g_bias", 2.0), ("g_cos", 1.0)],
        // f = f1 sin(x1) + f2 tanh(x2) + f3 tanh(x3);  g = g_bias + g_cos cos(x1) + g_sin sin(x3)
        PlantKind::P2 => &[
            ("f1", 0.5),
            ("f2", 0.3),
            ("f3", 0.2),
            ("g_bias", 2.0),
            ("g_cos", 0.5),
            ("g_sin", 0.3),
        ],
        // f = f_sin sin(x1) - f_lin x2;  g = g_bias + g_amp sin(x1 x2)
        PlantKind::P3 => &[("f_sin", 0.6), ("f_lin", 0.4), ("g_bias", 1.5), ("g_amp", 0.4)],
    }
}

/// Builtin plant by tag with default coefficients.
pub fn builtin_plant(name: &str) -> Result<PlantModel> {
    builtin_plant_with(name, &BTreeMap::new())
}

/// Builtin plant with coefficient overrides; unknown keys are config errors.
pub fn builtin_plant_with(name: &str, overrides: &BTreeMap<String, f64>) -> Result<PlantModel> {
    let kind: PlantKind = name.parse()?;
    let mut p: BTreeMap<&'static str, f64> = defaults(kind).iter().copied().collect();
    for (key, value) in overrides {
        let slot = p
            .iter_mut()
            .find(|(k, _)| **k == key.as_str())
            .map(|(_, v)| v)
            .ok_or_else(|| {
                Error::Config(format!(
                    "plant {name} has no parameter '{key}' (known: {})",
                    defaults(kind)
                        .iter()
                        .map(|(k, _)| *k)
                        .collect::<Vec<_>>()
                        .join(", ")
                ))
            })?;
        if !value.is_finite() {
            return Err(Error::Config(format!("plant parameter '{key}' is not finite")));
        }
        *slot = *value;
    }
    let model = PlantModel { kind, p };
    model.check_gain_margin()?;
    Ok(model)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl PlantModel {
    pub fn kind(&self) -> PlantKind {
        self.kind
    }

    pub fn param(&self, key: &str) -> f64 {
        self.p[key]
    }

    pub fn order(&self) -> usize {
        match self.kind {
            PlantKind::P1 | PlantKind::P3 => 2,
            PlantKind::P2 => 3,
        }
    }

    fn check_gain_margin(&self) -> Result<()> {
        let margin = match self.kind {
            PlantKind::P1 => self.param("g_bias") - self.param("g_cos").abs(),
            PlantKind::P2 => {
                self.param("g_bias") - self.param("g_cos").abs() - self.param("g_sin").abs()
            }
            PlantKind::P3 => self.param("g_bias") - self.param("g_amp").abs(),
        };
        if margin > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "plant {:?} parameters allow g(x) <= 0 (margin {margin})",
                self.kind
            )))
        }
    }

    /// Drift `f(x)`.
    pub fn f(&self, x: &[f64]) -> f64 {
        match self.kind {
            PlantKind::P1 => self.param("f_sin") * x[0].sin() + self.param("f_tanh") * x[1].tanh(),
            PlantKind::P2 => {
                self.param("f1") * x[0].sin()
                    + self.param("f2") * x[1].tanh()
                    + self.param("f3") * x[2].tanh()
            }
            PlantKind::P3 => self.param("f_sin") * x[0].sin() - self.param("f_lin") * x[1],
        }
    }

    /// Input gain `g(x)`.
    pub fn g(&self, x: &[f64]) -> f64 {
        match self.kind {
            PlantKind::P1 => self.param("g_bias") + self.param("g_cos") * x[0].cos(),
            PlantKind::P2 => {
                self.param("g_bias")
                    + self.param("g_cos") * x[0].cos()
                    + self.param("g_sin") * x[2].sin()
            }
            PlantKind::P3 => self.param("g_bias") + self.param("g_amp") * (x[0] * x[1]).sin(),
        }
    }

    /// Lipschitz constant of `f` (held out from the controllers).
    pub fn lf_true(&self) -> f64 {
        match self.kind {
            PlantKind::P1 => self.param("f_sin").abs() + self.param("f_tanh").abs(),
            PlantKind::P2 => {
                self.param("f1").abs() + self.param("f2").abs() + self.param("f3").abs()
            }
            PlantKind::P3 => self.param("f_sin").abs() + self.param("f_lin").abs(),
        }
    }

    /// Lipschitz constant of `g` relative to `hbar_g` (held out from the controllers).
    pub fn lg_true(&self) -> f64 {
        match self.kind {
            PlantKind::P1 => self.param("g_cos").abs(),
            PlantKind::P2 => self.param("g_cos").abs() + self.param("g_sin").abs(),
            PlantKind::P3 => self.param("g_amp").abs(),
        }
    }

    pub fn hbar_f(&self, _x: &[f64], _x_d: &[f64]) -> f64 {
        1.0
    }

    pub fn hbar_g(&self, x: &[f64], x_d: &[f64]) -> f64 {
        match self.kind {
            PlantKind::P1 | PlantKind::P2 => 1.0,
            // x1 x2 - y1 y2 = x1 (x2 - y2) + y2 (x1 - y1), then Cauchy-Schwarz
            PlantKind::P3 => (x[0] * x[0] + x_d[1] * x_d[1]).sqrt(),
        }
    }

    /// Known bound `l_f(x, x_d) >= |f(x) - f(x_d)|`, zero on the diagonal.
    pub fn lf_bound(&self, x: &[f64], x_d: &[f64]) -> f64 {
        self.lf_true() * dist(x, x_d) * self.hbar_f(x, x_d)
    }

    /// Known bound `l_g(x, x_d) >= |g(x) - g(x_d)|`, zero on the diagonal.
    pub fn lg_bound(&self, x: &[f64], x_d: &[f64]) -> f64 {
        self.lg_true() * dist(x, x_d) * self.hbar_g(x, x_d)
    }

    /// State derivative at time `t`; a non-positive gain aborts with the time.
    pub fn derivative_at(&self, t: f64, x: &[f64], u: f64) -> Result<Vec<f64>> {
        let n = self.order();
        check_len("plant state", n, x.len())?;
        let g = self.g(x);
        if !(g > 0.0) {
            return Err(Error::GainSign { t, value: g });
        }
        let mut dx = Vec::with_capacity(n);
        dx.extend_from_slice(&x[1..]);
        dx.push((self.f(x) + u) / g);
        Ok(dx)
    }
}

/// `xdot_i = x_{i+1}`, `xdot_n = (f(x) + u) / g(x)`.
pub fn plant_derivative(model: &PlantModel, x: &[f64], u: f64) -> Result<Vec<f64>> {
    model.derivative_at(f64::NAN, x, u)
}
