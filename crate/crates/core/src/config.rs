//! JSON scenario files.
//!
//! Optional keys fall back to the crate defaults; every fallback is recorded
//! so the run manifest can list it. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::*;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRecord {
    pub degree: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub type_id: Option<u32>,
    pub weight: f64,
    pub lambda: f64,
    pub delta: f64,
    #[serde(rename = "beta_E")]
    pub beta_e: f64,
    #[serde(rename = "gamma_E", default, skip_serializing_if = "Option::is_none")]
    pub gamma_e: Option<f64>,
    #[serde(rename = "beta_L")]
    pub beta_l: f64,
    #[serde(rename = "gamma_L", default, skip_serializing_if = "Option::is_none")]
    pub gamma_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub infection_cost: f64,
    pub target_qoi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_enabled: Option<bool>,
}

/// On-disk layout of a scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub classes: Vec<ClassRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: ScenarioConfig,
    /// Keys that were absent and took their default, e.g. `classes[2].nu`.
    pub defaults_applied: Vec<String>,
}

fn or_default<T: Copy>(value: Option<T>, default: T, key: impl FnOnce() -> String, applied: &mut Vec<String>) -> T {
    value.unwrap_or_else(|| {
        applied.push(key());
        default
    })
}

impl ScenarioFile {
    /// Fully materialized file for `config`: every optional key present.
    pub fn from_config(config: &ScenarioConfig) -> Self {
        let classes = config
            .network
            .classes
            .iter()
            .zip(&config.network.weights)
            .map(|(c, &weight)| ClassRecord {
                degree: c.degree,
                type_id: Some(c.type_id),
                weight,
                lambda: c.lambda,
                delta: c.delta,
                beta_e: c.beta_e,
                gamma_e: Some(c.gamma_e),
                beta_l: c.beta_l,
                gamma_l: Some(c.gamma_l),
                nu: Some(c.nu),
                infection_cost: c.infection_cost,
                target_qoi: c.target_qoi,
                kappa: Some(c.kappa),
                scaling_enabled: Some(c.scaling_enabled),
            })
            .collect();
        ScenarioFile {
            horizon: config.grid.horizon,
            n_steps: Some(config.grid.n_steps),
            tolerance: Some(config.tolerance),
            max_iterations: Some(config.max_iterations),
            damping: Some(config.damping),
            initial_alpha: Some(config.initial_alpha),
            seed: Some(config.seed),
            output_dir: Some(config.output_dir.clone()),
            classes,
        }
    }

    /// Applies defaults and validates.
    pub fn resolve(self) -> Result<LoadedConfig> {
        let mut applied = Vec::new();
        let mut classes = Vec::with_capacity(self.classes.len());
        let mut weights = Vec::with_capacity(self.classes.len());
        for (idx, r) in self.classes.into_iter().enumerate() {
            let key = |name: &str| format!("classes[{idx}].{name}");
            weights.push(r.weight);
            classes.push(NodeClassParams {
                degree: r.degree,
                type_id: or_default(r.type_id, 0, || key("type_id"), &mut applied),
                lambda: r.lambda,
                delta: r.delta,
                beta_e: r.beta_e,
                gamma_e: or_default(r.gamma_e, 1.0 - r.beta_e, || key("gamma_E"), &mut applied),
                beta_l: r.beta_l,
                gamma_l: or_default(r.gamma_l, 1.0 - r.beta_l, || key("gamma_L"), &mut applied),
                nu: or_default(r.nu, DEFAULT_NU, || key("nu"), &mut applied),
                infection_cost: r.infection_cost,
                target_qoi: r.target_qoi,
                kappa: or_default(r.kappa, DEFAULT_KAPPA, || key("kappa"), &mut applied),
                scaling_enabled: or_default(r.scaling_enabled, true, || key("scaling_enabled"), &mut applied),
            });
        }
        let n_steps = or_default(self.n_steps, DEFAULT_N_STEPS, || "n_steps".into(), &mut applied);
        let network = NetworkModel { classes, weights, mean_degree: 0.0 };
        let config = ScenarioConfig {
            network,
            grid: TimeGrid::new(self.horizon, n_steps),
            tolerance: or_default(self.tolerance, DEFAULT_TOLERANCE, || "tolerance".into(), &mut applied),
            max_iterations: or_default(self.max_iterations, DEFAULT_MAX_ITERATIONS, || "max_iterations".into(), &mut applied),
            damping: or_default(self.damping, DEFAULT_DAMPING, || "damping".into(), &mut applied),
            initial_alpha: or_default(self.initial_alpha, DEFAULT_INITIAL_ALPHA, || "initial_alpha".into(), &mut applied),
            seed: or_default(self.seed, DEFAULT_SEED, || "seed".into(), &mut applied),
            output_dir: self.output_dir.unwrap_or_else(|| {
                applied.push("output_dir".into());
                PathBuf::from("out")
            }),
        };
        Ok(LoadedConfig { config: validate(config)?, defaults_applied: applied })
    }
}

pub fn parse_config(text: &str) -> Result<LoadedConfig> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    file.resolve()
}

pub fn load_config(path: impl AsRef<Path>) -> Result<LoadedConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn config_to_json(config: &ScenarioConfig) -> String {
    let mut s = serde_json::to_string_pretty(&ScenarioFile::from_config(config)).expect("scenario serializes");
    s.push('\n');
    s
}
