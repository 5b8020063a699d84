//! Scenario configuration (TOML) and whole-scenario validation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::controllers::{ControllerGains, Scheme};
use crate::error::{Error, Result};
use crate::error_geometry::{check_hurwitz, polynomial_string};
use crate::plant::builtin_plant_with;
use crate::trajectory::ReferenceSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub plant: PlantConfig,
    pub reference: ReferenceSpec,
    pub filter: FilterConfig,
    pub controller: ControllerConfig,
    pub network: NetworkConfig,
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "VerifyConfig::is_default")]
    pub verify: VerifyConfig,
    #[serde(default, skip_serializing_if = "OutputConfig::is_default")]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub lambda: Vec<f64>,
}

/// A diagonal gain given either as one scalar or as the full diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DiagGain {
    Scalar(f64),
    Diagonal(Vec<f64>),
}

impl DiagGain {
    pub fn expand(&self, n: usize, what: &str) -> Result<Vec<f64>> {
        match self {
            DiagGain::Scalar(v) => Ok(vec![*v; n]),
            DiagGain::Diagonal(d) if d.len() == n => Ok(d.clone()),
            DiagGain::Diagonal(d) => Err(Error::Config(format!(
                "{what} has {} entries but the network has {n} nodes",
                d.len()
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub scheme: Scheme,
    pub kappa: f64,
    pub eps_rho: f64,
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_g: Option<f64>,
    pub gamma_f: DiagGain,
    pub gamma_g: DiagGain,
    pub sigma_f: f64,
    pub sigma_g: f64,
    #[serde(default = "one")]
    pub gamma_lf: f64,
    #[serde(default = "one")]
    pub gamma_lg: f64,
    #[serde(default = "hundredth")]
    pub sigma_lf: f64,
    #[serde(default = "hundredth")]
    pub sigma_lg: f64,
    pub tau: f64,
}

fn one() -> f64 {
    1.0
}

fn hundredth() -> f64 {
    0.01
}

impl ControllerConfig {
    pub fn gains(&self, nodes: usize) -> Result<ControllerGains> {
        Ok(self.with_diagonals(
            self.gamma_f.expand(nodes, "gamma_f")?,
            self.gamma_g.expand(nodes, "gamma_g")?,
        ))
    }

    fn with_diagonals(&self, gamma_f: Vec<f64>, gamma_g: Vec<f64>) -> ControllerGains {
        ControllerGains {
            kappa: self.kappa,
            eps_rho: self.eps_rho,
            eta: self.eta,
            eta_f: self.eta_f.unwrap_or(self.eta),
            eta_g: self.eta_g.unwrap_or(self.eta),
            gamma_f,
            gamma_g,
            sigma_f: self.sigma_f,
            sigma_g: self.sigma_g,
            gamma_lf: self.gamma_lf,
            gamma_lg: self.gamma_lg,
            sigma_lf: self.sigma_lf,
            sigma_lg: self.sigma_lg,
            tau: self.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub per_axis: usize,
    /// Fixed ridge for the ideal-weight fits; when absent the ridge is
    /// chosen to minimise each network's share of the ultimate bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default = "default_fit_step")]
    pub fit_grid_step: f64,
}

fn default_fit_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
}

fn default_h() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    10.0
}

/// Verification-only settings. `reported_kappa` replaces the `kappa` used in
/// the bound formulas (not in the controller); it exists to show the checker
/// rejects a wrong bound.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_kappa: Option<f64>,
}

impl VerifyConfig {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

impl OutputConfig {
    fn is_default(&self) -> bool {
        *self == Self::default()
    }
}

/// Scalars that a sweep may vary.
pub const SWEEP_AXES: &[&str] = &[
    "kappa", "eps_rho", "eta", "gamma", "sigma", "tau", "per_axis", "h", "delta", "ridge",
];

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Number of grid nodes per network.
    pub fn planned_nodes(&self, order: usize) -> usize {
        self.network.per_axis.pow(order as u32)
    }

    /// Whole-scenario checks that need no simulation; returns `tau / h`.
    pub fn validate(&self) -> Result<usize> {
        let plant = builtin_plant_with(&self.plant.name, &self.plant.params)?;
        let n = plant.order();
        if self.filter.lambda.len() != n - 1 {
            return Err(Error::Config(format!(
                "plant {} has order {n}, so lambda needs {} entries, got {}",
                self.plant.name,
                n - 1,
                self.filter.lambda.len()
            )));
        }
        if !check_hurwitz(&self.filter.lambda) {
            return Err(Error::InvalidFilter(format!(
                "{} is not Hurwitz",
                polynomial_string(&self.filter.lambda)
            )));
        }
        if self.sim.x0.len() != n || self.sim.x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "x0 must hold {n} finite values, got {:?}",
                self.sim.x0
            )));
        }
        if !(self.sim.h > 0.0 && self.sim.h.is_finite()) {
            return Err(Error::Config(format!("h must be positive, got {}", self.sim.h)));
        }
        if !(self.sim.horizon > self.sim.h && self.sim.horizon.is_finite()) {
            return Err(Error::Config(format!(
                "horizon must exceed h, got {}",
                self.sim.horizon
            )));
        }
        if !(self.sim.delta > 0.0 && self.sim.delta < self.sim.horizon) {
            return Err(Error::Config(format!(
                "delta must lie in (0, horizon), got {}",
                self.sim.delta
            )));
        }
        if self.network.per_axis < 2 {
            return Err(Error::Config("per_axis must be at least 2".into()));
        }
        if self.network.ridge.is_some_and(|r| !(r >= 0.0)) || !(self.network.fit_grid_step > 0.0) {
            return Err(Error::Config("ridge must be >= 0 and fit_grid_step > 0".into()));
        }
        if let Some(k) = self.verify.reported_kappa {
            if !(k > 0.0) {
                return Err(Error::Config("reported_kappa must be positive".into()));
            }
        }
        // diagonal lengths are checked against the node count at build time
        self.controller
            .with_diagonals(
                diag_values(&self.controller.gamma_f),
                diag_values(&self.controller.gamma_g),
            )
            .validate(self.sim.h)
    }

    /// Sets a sweep axis to `value`.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<Scenario> {
        let mut s = self.clone();
        let c = &mut s.controller;
        match axis {
            "kappa" => c.kappa = value,
            "eps_rho" => c.eps_rho = value,
            "eta" => {
                c.eta = value;
                c.eta_f = None;
                c.eta_g = None;
            }
            "gamma" => {
                c.gamma_f = DiagGain::Scalar(value);
                c.gamma_g = DiagGain::Scalar(value);
            }
            "sigma" => {
                c.sigma_f = value;
                c.sigma_g = value;
            }
            "tau" => c.tau = value,
            "per_axis" => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(Error::Config(format!("per_axis must be a whole number, got {value}")));
                }
                s.network.per_axis = value as usize;
                c.gamma_f = DiagGain::Scalar(first_diag(&c.gamma_f));
                c.gamma_g = DiagGain::Scalar(first_diag(&c.gamma_g));
            }
            "h" => s.sim.h = value,
            "delta" => s.sim.delta = value,
            "ridge" => s.network.ridge = Some(value),
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep axis '{other}'; expected one of {}",
                    SWEEP_AXES.join(", ")
                )))
            }
        }
        Ok(s)
    }
}

fn diag_values(g: &DiagGain) -> Vec<f64> {
    match g {
        DiagGain::Scalar(v) => vec![*v],
        DiagGain::Diagonal(d) => d.clone(),
    }
}

fn first_diag(g: &DiagGain) -> f64 {
    match g {
        DiagGain::Scalar(v) => *v,
        DiagGain::Diagonal(d) => d.first().copied().unwrap_or(1.0),
    }
}
