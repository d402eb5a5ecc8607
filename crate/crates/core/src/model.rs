//! Domain types: per-class node parameters, the class population, the time
//! grid and the solver configuration, plus the reference scenario.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for `beta + gamma == 1` and for the weight normalization.
pub const PROBABILITY_SUM_TOL: f64 = 1e-12;

pub const DEFAULT_NU: f64 = 0.5;
pub const DEFAULT_KAPPA: f64 = 1.0;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;
pub const DEFAULT_N_STEPS: usize = 900;
pub const DEFAULT_DAMPING: f64 = 1.0;
pub const DEFAULT_INITIAL_ALPHA: f64 = 0.5;
pub const DEFAULT_SEED: u64 = 42;

/// Parameters of one node class, i.e. one (degree, type) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeClassParams {
    pub degree: u32,
    pub type_id: u32,
    /// Attacker injection rate.
    pub lambda: f64,
    /// Probability of staying in a processing state (E or L) per unit time.
    pub delta: f64,
    #[serde(rename = "beta_E")]
    pub beta_e: f64,
    #[serde(rename = "gamma_E")]
    pub gamma_e: f64,
    #[serde(rename = "beta_L")]
    pub beta_l: f64,
    #[serde(rename = "gamma_L")]
    pub gamma_l: f64,
    /// Curing rate: rate at which infected nodes discard stale misinformation.
    pub nu: f64,
    pub infection_cost: f64,
    pub target_qoi: f64,
    /// Normalization of the processing-delay penalty `kappa * delta`.
    pub kappa: f64,
    /// Shift the QoI (and its target) by `degree + 2` so the state-S running
    /// cost is strongly convex in the acceptance probability.
    pub scaling_enabled: bool,
}

impl NodeClassParams {
    pub fn k(&self) -> f64 {
        f64::from(self.degree)
    }

    /// QoI shift `S_k`; zero when scaling is disabled.
    pub fn qoi_shift(&self) -> f64 {
        if self.scaling_enabled {
            self.k() + 2.0
        } else {
            0.0
        }
    }

    /// Target QoI after the scaling shift.
    pub fn shifted_target(&self) -> f64 {
        self.target_qoi + self.qoi_shift()
    }

    /// Total leave rate of a processing state, `1 - delta`.
    pub fn processing_rate(&self) -> f64 {
        1.0 - self.delta
    }

    fn violations(&self, out: &mut Vec<String>) {
        let tag = format!("class (k={}, type={})", self.degree, self.type_id);
        if self.degree < 1 {
            out.push(format!("{tag}: degree must be >= 1"));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("delta", self.delta),
            ("beta_E", self.beta_e),
            ("gamma_E", self.gamma_e),
            ("beta_L", self.beta_l),
            ("gamma_L", self.gamma_l),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(format!("{tag}: {name} = {v} outside [0, 1]"));
            }
        }
        if self.delta >= 1.0 {
            out.push(format!("{tag}: delta must be < 1"));
        }
        let se = self.beta_e + self.gamma_e;
        if (se - 1.0).abs() > PROBABILITY_SUM_TOL {
            out.push(format!("{tag}: beta_E + gamma_E = {se} (must be 1)"));
        }
        let sl = self.beta_l + self.gamma_l;
        if (sl - 1.0).abs() > PROBABILITY_SUM_TOL {
            out.push(format!("{tag}: beta_L + gamma_L = {sl} (must be 1)"));
        }
        for (name, v) in [
            ("nu", self.nu),
            ("infection_cost", self.infection_cost),
            ("kappa", self.kappa),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("{tag}: {name} = {v} must be finite and >= 0"));
            }
        }
        if !self.target_qoi.is_finite() {
            out.push(format!("{tag}: target_qoi must be finite"));
        }
    }
}

/// The class population: per-class parameters and weights `pi_ik = P(k) p_k(i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub classes: Vec<NodeClassParams>,
    pub weights: Vec<f64>,
    /// `<k> = sum_k k P(k)`; refreshed by [`NetworkModel::refresh`].
    pub mean_degree: f64,
}

impl NetworkModel {
    /// Builds a model and validates it.
    pub fn new(classes: Vec<NodeClassParams>, weights: Vec<f64>) -> Result<Self> {
        let mut net = NetworkModel { classes, weights, mean_degree: 0.0 };
        net.refresh();
        let mut errs = Vec::new();
        net.violations(&mut errs);
        if errs.is_empty() {
            Ok(net)
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.classes.iter().map(|c| c.degree).max().unwrap_or(0)
    }

    /// Recomputes the cached mean degree.
    pub fn refresh(&mut self) {
        self.mean_degree = self
            .classes
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| c.k() * w)
            .sum();
    }

    /// Index of the class with the given degree and type.
    pub fn class_index(&self, degree: u32, type_id: u32) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c.degree == degree && c.type_id == type_id)
    }

    /// Index of the first class with the given degree.
    pub fn degree_index(&self, degree: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.degree == degree)
    }

    fn violations(&self, out: &mut Vec<String>) {
        if self.classes.is_empty() {
            out.push("network has no classes".into());
        }
        if self.classes.len() != self.weights.len() {
            out.push(format!(
                "{} classes but {} weights",
                self.classes.len(),
                self.weights.len()
            ));
        }
        for c in &self.classes {
            c.violations(out);
        }
        for (i, w) in self.weights.iter().enumerate() {
            if !(*w >= 0.0 && w.is_finite()) {
                out.push(format!("weight {i} = {w} must be finite and >= 0"));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
            out.push(format!("weights sum {sum}"));
        }
        let mut seen = HashSet::new();
        for c in &self.classes {
            if !seen.insert((c.degree, c.type_id)) {
                out.push(format!("duplicate class (k={}, type={})", c.degree, c.type_id));
            }
        }
        if self.mean_degree.is_nan() || self.mean_degree <= 0.0 {
            out.push("mean degree must be > 0".into());
        }
    }
}

/// Uniform grid `t_j = j * dt`, `j = 0..=n_steps`, over `[0, horizon]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Self {
        TimeGrid { horizon, n_steps }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points()).map(|j| self.t(j))
    }

    /// Same grid with twice as many steps.
    pub fn refined(&self) -> Self {
        TimeGrid { horizon: self.horizon, n_steps: self.n_steps * 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub network: NetworkModel,
    pub grid: TimeGrid,
    /// Sup-norm stopping tolerance of the fixed-point iteration.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Relaxation `theta` in `alpha <- theta * alpha_new + (1 - theta) * alpha_old`.
    pub damping: f64,
    /// Constant initial policy guess.
    pub initial_alpha: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn with_defaults(network: NetworkModel, grid: TimeGrid) -> Self {
        ScenarioConfig {
            network,
            grid,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            damping: DEFAULT_DAMPING,
            initial_alpha: DEFAULT_INITIAL_ALPHA,
            seed: DEFAULT_SEED,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Applies `f` to every class (e.g. to override `nu` everywhere).
    pub fn map_classes(mut self, f: impl Fn(&mut NodeClassParams)) -> Self {
        self.network.classes.iter_mut().for_each(f);
        self
    }
}

/// Validates every invariant and populates cached fields. Fails with the
/// complete list of violations.
pub fn validate(mut config: ScenarioConfig) -> Result<ScenarioConfig> {
    config.network.refresh();
    let mut errs = Vec::new();
    config.network.violations(&mut errs);
    let g = &config.grid;
    if !(g.horizon > 0.0 && g.horizon.is_finite()) {
        errs.push(format!("horizon = {} must be > 0", g.horizon));
    }
    if g.n_steps == 0 {
        errs.push("n_steps must be >= 1".into());
    }
    if !(config.tolerance > 0.0) {
        errs.push(format!("tolerance = {} must be > 0", config.tolerance));
    }
    if config.max_iterations < 1 {
        errs.push("max_iterations must be >= 1".into());
    }
    if !(config.damping > 0.0 && config.damping <= 1.0) {
        errs.push(format!("damping = {} outside (0, 1]", config.damping));
    }
    if !(0.0..=1.0).contains(&config.initial_alpha) {
        errs.push(format!("initial_alpha = {} outside [0, 1]", config.initial_alpha));
    }
    if errs.is_empty() {
        Ok(config)
    } else {
        Err(Error::InvalidConfig(errs))
    }
}

/// Four-tier hierarchical network: sensors (k=1), cluster heads (k=10, 15)
/// and sinks (k=20), one device type per degree, horizon 0.9 s.
pub fn reference_scenario() -> ScenarioConfig {
    const DEGREES: [u32; 4] = [1, 10, 15, 20];
    const WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
    const COSTS: [f64; 4] = [1.0, 10.0, 20.0, 30.0];
    const DELTAS: [f64; 4] = [0.0, 0.4, 0.3, 0.3];
    const BETA_E: [f64; 4] = [0.5, 0.3, 0.2, 0.1];
    const BETA_L: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

    let classes = (0..4)
        .map(|i| NodeClassParams {
            degree: DEGREES[i],
            type_id: 0,
            lambda: 0.2,
            delta: DELTAS[i],
            beta_e: BETA_E[i],
            gamma_e: 1.0 - BETA_E[i],
            beta_l: BETA_L[i],
            gamma_l: 1.0 - BETA_L[i],
            nu: DEFAULT_NU,
            infection_cost: COSTS[i],
            target_qoi: f64::from(DEGREES[i]),
            kappa: DEFAULT_KAPPA,
            scaling_enabled: true,
        })
        .collect();
    let network = NetworkModel::new(classes, WEIGHTS.to_vec())
        .expect("reference scenario is valid");
    ScenarioConfig::with_defaults(network, TimeGrid::new(0.9, DEFAULT_N_STEPS))
}

/// A single-class network, handy for tests and small experiments.
pub fn single_class(params: NodeClassParams, grid: TimeGrid) -> Result<ScenarioConfig> {
    let network = NetworkModel::new(vec![params], vec![1.0])?;
    validate(ScenarioConfig::with_defaults(network, grid))
}
