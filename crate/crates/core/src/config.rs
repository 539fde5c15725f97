//! JSON scenario configuration.
//!
//! Parsing distinguishes three failure classes: malformed JSON, schema
//! violations (wrong types, unknown fields, inconsistent sizes, non-positive
//! mesh or time parameters) and violations of the model and data assumptions
//! (`1 < p ≤ 2`, `α > 0`, `0 < u̲ ≤ u0, u∂ ≤ ū`). Invalid values are never
//! clamped.
//!
//! ```json
//! {
//!   "model": { "beta": { "family": "power", "kappa": 1.0, "gamma": 2.0 }, "p": 1.5 },
//!   "bounds": { "lower": 0.5, "upper": 2.0 },
//!   "cells": 64, "alpha": 1.0, "horizon": 5.0, "step": 0.001,
//!   "initial": { "kind": "constant", "value": 1.0 },
//!   "boundary": { "left": { "kind": "constant", "value": 1.0 },
//!                 "right": { "kind": "constant", "value": 2.0 } }
//! }
//! ```
//!
//! Omitted `bounds` are taken as the range of the initial and boundary data.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{BetaFamily, Bounds, ConstitutiveModel};
use crate::experiments::{CheckOptions, ConvergenceOptions, RelaxationOptions, TrackingOptions};
use crate::grid::{Grid, NodalVector};
use crate::newton::SolverOptions;
use crate::schedule::{BoundarySchedule, EndpointSchedule};
use crate::stepper::Scenario;

pub const DATA_ASSUMPTION: &str = "0 < u̲ ≤ u0, u∂ ≤ ū";
pub const FLUX_ASSUMPTION: &str = "1 < p ≤ 2";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    #[serde(default = "default_length")]
    pub length: f64,
    pub cells: usize,
    pub alpha: f64,
    pub horizon: f64,
    pub step: f64,
    pub initial: InitialData,
    pub boundary: BoundarySchedule,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub experiment: ExperimentConfig,
}

fn default_length() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub beta: BetaFamily,
    pub p: f64,
}

/// Initial state `u0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// One value per node, `cells + 1` in total.
    Nodal { values: Vec<f64> },
    /// Linear interpolation of `(x[i], u[i])`; `x` increases from 0 to `length`.
    PiecewiseLinear { x: Vec<f64>, u: Vec<f64> },
}

impl InitialData {
    fn values(&self) -> &[f64] {
        match self {
            Self::Constant { value } => std::slice::from_ref(value),
            Self::Nodal { values } => values,
            Self::PiecewiseLinear { u, .. } => u,
        }
    }

    /// Nodal values on `grid`. Assumes a config that passed the schema checks.
    pub fn sample(&self, grid: &Grid) -> NodalVector {
        match self {
            Self::Constant { value } => NodalVector::constant(grid.node_count(), *value),
            Self::Nodal { values } => NodalVector(values.clone()),
            Self::PiecewiseLinear { x, u } => grid.interpolate(|p| {
                let j = x.partition_point(|&xi| xi <= p).clamp(1, x.len() - 1);
                let theta = (p - x[j - 1]) / (x[j] - x[j - 1]);
                (1.0 - theta) * u[j - 1] + theta * u[j]
            }),
        }
    }
}

/// Options of the experiment subcommands.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub relaxation: RelaxationOptions,
    /// Mesh-uniformity study of the relaxation rate, run by `decay` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_study: Option<RateStudyConfig>,
    pub tracking: TrackingOptions,
    pub convergence: ConvergenceConfig,
    pub check: CheckOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateStudyConfig {
    pub cells: Vec<usize>,
    pub max_rel_spread: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub levels: usize,
    pub min_order: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            min_order: ConvergenceOptions::default().min_order,
        }
    }
}

impl ConvergenceConfig {
    pub fn options(&self) -> ConvergenceOptions {
        ConvergenceOptions {
            min_order: self.min_order,
        }
    }
}

/// One rejected field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed JSON: {0}")]
    Malformed(String),
    #[error("config schema violation:\n{}", join(.0))]
    Schema(Vec<Violation>),
    #[error("model or data assumption violated:\n{}", join(.0))]
    Assumption(Vec<Violation>),
}

impl ConfigError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            Self::Schema(v) | Self::Assumption(v) => v,
            _ => &[],
        }
    }
}

pub fn parse_config_str(text: &str) -> Result<Config, ConfigError> {
    let config: Config = serde_json::from_str(text).map_err(|e| {
        if e.is_data() {
            ConfigError::Schema(vec![Violation::new("document", e.to_string())])
        } else {
            ConfigError::Malformed(e.to_string())
        }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config_file(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config_str(&text)
}

fn finite_positive(v: &mut Vec<Violation>, field: &str, x: f64) {
    if !(x.is_finite() && x > 0.0) {
        v.push(Violation::new(field, format!("must be finite and > 0, got {x}")));
    }
}

fn fraction(v: &mut Vec<Violation>, field: &str, x: f64) {
    if !(0.0..1.0).contains(&x) {
        v.push(Violation::new(field, format!("must lie in [0, 1), got {x}")));
    }
}

fn endpoint_values(e: &EndpointSchedule) -> Vec<(&'static str, f64)> {
    match *e {
        EndpointSchedule::Constant { value } => vec![("value", value)],
        EndpointSchedule::Step { before, after, at } => vec![("before", before), ("after", after), ("at", at)],
        EndpointSchedule::Sinusoid {
            base,
            amplitude,
            omega,
        } => vec![("base", base), ("amplitude", amplitude), ("omega", omega)],
    }
}

impl Config {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema checks, then model and data assumptions.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let schema = self.schema_violations();
        if !schema.is_empty() {
            return Err(ConfigError::Schema(schema));
        }
        let assumptions = self.assumption_violations();
        if !assumptions.is_empty() {
            return Err(ConfigError::Assumption(assumptions));
        }
        Ok(())
    }

    fn schema_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        finite_positive(&mut v, "length", self.length);
        if self.cells == 0 {
            v.push(Violation::new("cells", "need at least one cell"));
        }
        finite_positive(&mut v, "step", self.step);
        if !(self.horizon.is_finite() && self.horizon >= self.step) {
            v.push(Violation::new(
                "horizon",
                format!("must be finite and ≥ step {}, got {}", self.step, self.horizon),
            ));
        }
        for x in [self.model.p, self.alpha] {
            if !x.is_finite() {
                v.push(Violation::new("model", format!("non-finite parameter {x}")));
            }
        }
        match &self.initial {
            InitialData::Constant { .. } => {}
            InitialData::Nodal { values } => {
                if values.len() != self.cells + 1 {
                    v.push(Violation::new(
                        "initial.values",
                        format!("expected cells + 1 = {} values, got {}", self.cells + 1, values.len()),
                    ));
                }
            }
            InitialData::PiecewiseLinear { x, u } => {
                if x.len() < 2 || x.len() != u.len() {
                    v.push(Violation::new(
                        "initial",
                        format!("need matching x and u with ≥ 2 entries, got {} and {}", x.len(), u.len()),
                    ));
                } else if x[0] != 0.0 || x[x.len() - 1] != self.length || x.windows(2).any(|w| !(w[1] > w[0])) {
                    v.push(Violation::new(
                        "initial.x",
                        format!("must increase strictly from 0 to length {}", self.length),
                    ));
                }
            }
        }
        if self.initial.values().iter().any(|x| !x.is_finite()) {
            v.push(Violation::new("initial", "non-finite value"));
        }
        for (side, e) in [("left", &self.boundary.left), ("right", &self.boundary.right)] {
            for (name, x) in endpoint_values(e) {
                if !x.is_finite() {
                    v.push(Violation::new(format!("boundary.{side}.{name}"), format!("must be finite, got {x}")));
                }
            }
        }
        let s = &self.solver;
        finite_positive(&mut v, "solver.newton_tol", s.newton_tol);
        if s.newton_max_iter == 0 {
            v.push(Violation::new("solver.newton_max_iter", "must be ≥ 1"));
        }
        if !(s.eps_reg.is_finite() && s.eps_reg >= 0.0) {
            v.push(Violation::new("solver.eps_reg", format!("must be finite and ≥ 0, got {}", s.eps_reg)));
        }
        let e = &self.experiment;
        fraction(&mut v, "experiment.relaxation.burn_in_fraction", e.relaxation.burn_in_fraction);
        finite_positive(&mut v, "experiment.relaxation.floor_ratio", e.relaxation.floor_ratio);
        if !(0.0..=1.0).contains(&e.relaxation.min_r_squared) {
            v.push(Violation::new("experiment.relaxation.min_r_squared", "must lie in [0, 1]"));
        }
        if let Some(tol) = e.relaxation.steady_tolerance {
            finite_positive(&mut v, "experiment.relaxation.steady_tolerance", tol);
        }
        if !(e.relaxation.monotone_rel_tol >= 0.0) {
            v.push(Violation::new("experiment.relaxation.monotone_rel_tol", "must be ≥ 0"));
        }
        if !(e.relaxation.t0.is_finite() && e.relaxation.t0 >= 0.0 && e.relaxation.t0 < self.horizon) {
            v.push(Violation::new("experiment.relaxation.t0", "must lie in [0, horizon)"));
        }
        if let Some(rs) = &e.rate_study {
            if rs.cells.len() < 2 || rs.cells.contains(&0) {
                v.push(Violation::new("experiment.rate_study.cells", "need at least two positive cell counts"));
            }
            finite_positive(&mut v, "experiment.rate_study.max_rel_spread", rs.max_rel_spread);
        }
        finite_positive(&mut v, "experiment.tracking.relaxation_horizon", e.tracking.relaxation_horizon);
        let cal = e.tracking.calibration_fraction;
        if !(cal > 0.0 && cal <= 1.0) {
            v.push(Violation::new("experiment.tracking.calibration_fraction", "must lie in (0, 1]"));
        }
        fraction(&mut v, "experiment.tracking.late_fraction", e.tracking.late_fraction);
        if !(e.tracking.envelope_rel_tol >= 0.0) {
            v.push(Violation::new("experiment.tracking.envelope_rel_tol", "must be ≥ 0"));
        }
        if e.convergence.levels < 3 {
            v.push(Violation::new("experiment.convergence.levels", "need at least 3"));
        }
        if !e.convergence.min_order.is_finite() {
            v.push(Violation::new("experiment.convergence.min_order", "must be finite"));
        }
        v
    }

    fn assumption_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let p = self.model.p;
        if !(p > 1.0 && p <= 2.0) {
            v.push(Violation::new("model.p", format!("p = {p} violates \"{FLUX_ASSUMPTION}\"")));
        }
        if let BetaFamily::Power { kappa, gamma } = self.model.beta {
            if !(kappa.is_finite() && kappa > 0.0) {
                v.push(Violation::new("model.beta.kappa", format!("κ = {kappa} violates \"κ > 0\"")));
            }
            if !(gamma.is_finite() && gamma >= 1.0) {
                v.push(Violation::new("model.beta.gamma", format!("γ = {gamma} violates \"γ ≥ 1\"")));
            }
        }
        if !(self.alpha > 0.0) {
            v.push(Violation::new("alpha", format!("α = {} violates \"α > 0\"", self.alpha)));
        }
        let (lower, upper) = match self.bounds {
            Some(b) => {
                if !(b.lower > 0.0) {
                    v.push(Violation::new(
                        "bounds.lower",
                        format!("u̲ = {} violates \"{DATA_ASSUMPTION}\"", b.lower),
                    ));
                }
                if !(b.upper >= b.lower) {
                    v.push(Violation::new(
                        "bounds.upper",
                        format!("ū = {} < u̲ = {} violates \"{DATA_ASSUMPTION}\"", b.upper, b.lower),
                    ));
                }
                (b.lower.max(f64::MIN_POSITIVE), b.upper)
            }
            None => (f64::MIN_POSITIVE, f64::INFINITY),
        };
        let inside = |x: f64| lower <= x && x <= upper;
        let describe = || match self.bounds {
            Some(b) => format!("outside [u̲, ū] = [{}, {}]", b.lower, b.upper),
            None => "not > 0".to_string(),
        };
        if let Some(x) = self.initial.values().iter().copied().find(|&x| !inside(x)) {
            v.push(Violation::new(
                "initial",
                format!("value {x} {}; violates \"{DATA_ASSUMPTION}\"", describe()),
            ));
        }
        for (side, e) in [("left", &self.boundary.left), ("right", &self.boundary.right)] {
            let (lo, hi) = e.range(self.horizon);
            for x in [lo, hi] {
                if !inside(x) {
                    v.push(Violation::new(
                        format!("boundary.{side}"),
                        format!(
                            "value {x} reached on [0, T] {}; violates \"{DATA_ASSUMPTION}\", uniformly in t",
                            describe()
                        ),
                    ));
                    break;
                }
            }
        }
        v
    }

    /// Bounds as configured, or the range of the initial and boundary data.
    pub fn effective_bounds(&self) -> Bounds {
        self.bounds.unwrap_or_else(|| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &x in self.initial.values() {
                lo = lo.min(x);
                hi = hi.max(x);
            }
            for e in [&self.boundary.left, &self.boundary.right] {
                let (a, b) = e.range(self.horizon);
                lo = lo.min(a);
                hi = hi.max(b);
            }
            Bounds { lower: lo, upper: hi }
        })
    }

    pub fn model(&self) -> ConstitutiveModel {
        ConstitutiveModel {
            beta: self.model.beta,
            p: self.model.p,
            bounds: self.effective_bounds(),
        }
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.length, self.cells).expect("validated grid")
    }

    pub fn scenario(&self) -> Result<Scenario, ConfigError> {
        self.validate()?;
        let grid = self.grid();
        let initial = self.initial.sample(&grid);
        Scenario::new(
            grid,
            self.model(),
            self.alpha,
            self.horizon,
            self.step,
            initial,
            self.boundary,
            self.solver,
        )
        .map_err(|e| ConfigError::Assumption(vec![Violation::new("scenario", e.to_string())]))
    }
}
