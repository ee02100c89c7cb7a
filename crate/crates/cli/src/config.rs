//! Run configuration: a single TOML file selecting a built-in problem, the
//! grid, tolerances, and per-command blocks. Top-level `delta` and the grid
//! horizon are injected into the problem parameters, so one file pins the
//! whole run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use mvsde_core::forward::{PicardMode, TimeGrid};
use mvsde_core::problems::{builtin, ProblemSpec};
use mvsde_core::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_horizon: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
    #[serde(default = "default_bsde_tol")]
    pub bsde_tol: f64,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
}

fn default_picard_tol() -> f64 {
    1e-8
}
fn default_bsde_tol() -> f64 {
    1e-8
}
fn default_grad_tol() -> f64 {
    1e-3
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            picard_tol: default_picard_tol(),
            bsde_tol: default_bsde_tol(),
            grad_tol: default_grad_tol(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PicardModeConfig {
    #[default]
    Full,
    LawOnly,
}

impl From<PicardModeConfig> for PicardMode {
    fn from(mode: PicardModeConfig) -> Self {
        match mode {
            PicardModeConfig::Full => PicardMode::Full,
            PicardModeConfig::LawOnly => PicardMode::LawOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Constant initial control value.
    #[serde(default)]
    pub u_init: f64,
}

fn default_max_outer() -> usize {
    50
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { max_outer: default_max_outer(), u_init: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Ensemble pairs for the forward contraction probe.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Random probe count for pointwise derivative checks.
    #[serde(default = "default_probes")]
    pub probes: usize,
    /// Seeds for checks repeated across noise realizations.
    #[serde(default = "default_seeds")]
    pub seeds: u64,
}

fn default_pairs() -> usize {
    20
}
fn default_probes() -> usize {
    100
}
fn default_seeds() -> u64 {
    3
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { pairs: default_pairs(), probes: default_probes(), seeds: default_seeds() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    /// Anticipation lag δ; must be an integer multiple of t_horizon/steps.
    #[serde(default)]
    pub delta: f64,
    pub particles: usize,
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub picard_mode: PicardModeConfig,
    #[serde(default = "default_basis_degree")]
    pub basis_degree: usize,
    #[serde(default)]
    pub optimize: OptimizeConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
}

fn default_basis_degree() -> usize {
    2
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let config: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.particles < 2 {
            return Err("particles must be at least 2".into());
        }
        let t = &self.tolerances;
        if !(t.picard_tol > 0.0 && t.bsde_tol > 0.0 && t.grad_tol > 0.0) {
            return Err("all tolerances must be positive".into());
        }
        self.time_grid().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.t_horizon, self.grid.steps, self.delta)
    }

    /// Builds the problem with the top-level horizon and delta injected into
    /// the builtin's parameter map (they override duplicates).
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut params = self.problem.params.clone();
        params.insert("T".to_string(), self.grid.t_horizon);
        params.insert("delta".to_string(), self.delta);
        builtin(&self.problem.name, &params)
    }
}
