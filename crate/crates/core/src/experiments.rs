//! Curing-rate calibration and one-parameter sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate, ScenarioConfig};
use crate::output::SweepRow;
use crate::solver::{baseline_evaluation, solve_mfe, EquilibriumSolution, PolicyOutcome};

/// Search interval for the shared curing rate.
pub const NU_SEARCH_MAX: f64 = 5.0;
/// Largest acceptable per-class calibration error.
pub const CALIBRATION_MAX_ERROR: f64 = 0.1;
const GOLDEN_TOL: f64 = 1e-6;

/// Infected fraction at the horizon under the always-accept baseline.
pub fn baseline_infection_at_end(config: &ScenarioConfig) -> Result<Vec<f64>> {
    let b = baseline_evaluation(config)?;
    Ok((0..config.network.len()).map(|c| b.infected_at_end(c)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub nu: f64,
    /// `m_I(T) - target` per class at the calibrated `nu`.
    pub errors: Vec<f64>,
    pub sse: f64,
}

impl Calibration {
    pub fn worst_error(&self) -> f64 {
        self.errors.iter().fold(0.0, |a, e| a.max(e.abs()))
    }
}

fn with_nu(config: &ScenarioConfig, nu: f64) -> ScenarioConfig {
    config.clone().map_classes(|c| c.nu = nu)
}

/// Shared curing rate in `(0, NU_SEARCH_MAX]` minimizing the squared error
/// between the baseline infected fractions at `T` and `targets`, by
/// golden-section search.
///
/// Fails with [`Error::CalibrationFailed`] (carrying the best fit) when some
/// class misses its target by more than [`CALIBRATION_MAX_ERROR`].
pub fn calibrate_nu(config: &ScenarioConfig, targets: &[f64]) -> Result<Calibration> {
    let mut problems = Vec::new();
    if targets.len() != config.network.len() {
        problems.push(format!("{} targets for {} classes", targets.len(), config.network.len()));
    }
    for (i, t) in targets.iter().enumerate() {
        if !(*t > 0.0 && *t < 1.0) {
            problems.push(format!("target {i} = {t} outside (0, 1)"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidConfig(problems));
    }

    let errors_at = |nu: f64| -> Result<Vec<f64>> {
        let infected = baseline_infection_at_end(&with_nu(config, nu))?;
        Ok(infected.iter().zip(targets).map(|(m, t)| m - t).collect())
    };
    let sse_at = |nu: f64| -> Result<f64> { Ok(errors_at(nu)?.iter().map(|e| e * e).sum()) };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, NU_SEARCH_MAX);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let (mut f1, mut f2) = (sse_at(x1)?, sse_at(x2)?);
    while b - a > GOLDEN_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = sse_at(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = sse_at(x2)?;
        }
    }
    let nu = 0.5 * (a + b);
    let errors = errors_at(nu)?;
    let cal = Calibration { nu, sse: errors.iter().map(|e| e * e).sum(), errors };
    if cal.worst_error() > CALIBRATION_MAX_ERROR {
        return Err(Error::CalibrationFailed { nu, worst_error: cal.worst_error(), errors: cal.errors });
    }
    Ok(cal)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "beta_E")]
    BetaE,
    #[serde(rename = "delta")]
    Delta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::BetaE => "beta_E",
            SweepParam::Delta => "delta",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "beta_E" => Ok(SweepParam::BetaE),
            "delta" => Ok(SweepParam::Delta),
            other => Err(format!("unknown sweep parameter '{other}' (expected beta_E or delta)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub config: ScenarioConfig,
    pub solution: EquilibriumSolution,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub param: SweepParam,
    pub degree: u32,
    pub points: Vec<SweepPoint>,
}

impl SweepOutcome {
    /// One row per (value, class).
    pub fn rows(&self) -> Vec<SweepRow> {
        self.points
            .iter()
            .flat_map(|p| {
                let net = &p.config.network;
                let outcome = PolicyOutcome::of_solution(&p.solution, net);
                let theta = p.solution.aggregates.last_theta();
                net.classes
                    .iter()
                    .enumerate()
                    .map(|(c, class)| SweepRow {
                        value: p.value,
                        degree: class.degree,
                        type_id: class.type_id,
                        theta_at_t: theta,
                        qoi_at_t: outcome.qoi_at_end(c),
                        alpha_at_t: *p.solution.policy.alpha[c].last().expect("non-empty policy"),
                        converged: p.solution.converged,
                        iterations: p.solution.iterations_used,
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.solution.aggregates.last_theta()).collect()
    }
}

/// Solves the equilibrium once per value of `param` on every class of degree
/// `degree` (`gamma_E` follows `1 - beta_E`). Non-converged points keep their
/// best iterate and are flagged.
pub fn run_sweep(config: &ScenarioConfig, param: SweepParam, degree: u32, values: &[f64]) -> Result<SweepOutcome> {
    if !config.network.classes.iter().any(|c| c.degree == degree) {
        return Err(Error::InvalidConfig(vec![format!("no class with degree {degree}")]));
    }
    let points = values
        .par_iter()
        .map(|&value| {
            let cfg = validate(config.clone().map_classes(|c| {
                if c.degree == degree {
                    match param {
                        SweepParam::BetaE => {
                            c.beta_e = value;
                            c.gamma_e = 1.0 - value;
                        }
                        SweepParam::Delta => c.delta = value,
                    }
                }
            }))?;
            let solution = match solve_mfe(&cfg) {
                Ok(s) => s,
                Err(Error::NotConverged(nc)) => nc.best,
                Err(e) => return Err(e),
            };
            Ok(SweepPoint { value, config: cfg, solution })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutcome { param, degree, points })
}
