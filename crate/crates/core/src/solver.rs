//! Forward-backward sweep for the mean-field equilibrium, the always-accept
//! baseline and comparison metrics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_forward_from, AggregatePath, MeanFieldTrajectory, Occupancy, ALL_SUSCEPTIBLE, I, S,
};
use crate::error::{Error, NotConverged, Result};
use crate::hjb::{integrate_backward, ControlPolicy, ValueTrajectory};
use crate::model::{NetworkModel, ScenarioConfig};
use crate::qoi::qoi_coefficients;

/// Damping used when the undamped iteration fails.
pub const RESTART_DAMPING: f64 = 0.5;

/// Baseline quantities below this are treated as zero by the summary ratios.
pub const DIVISION_GUARD: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub policy: ControlPolicy,
    pub trajectory: MeanFieldTrajectory,
    pub aggregates: AggregatePath,
    pub values: ValueTrajectory,
    pub iterations_used: usize,
    /// Fixed-point residual `sup |alpha - BR(alpha)|` of the returned policy.
    pub final_residual: f64,
    /// Sup-norm change between the last two successive policies.
    pub final_step: f64,
    pub converged: bool,
    pub damping: f64,
    pub residual_history: Vec<f64>,
}

impl EquilibriumSolution {
    /// Unscaled expected QoI of each class along the solution.
    pub fn qoi_paths(&self, net: &NetworkModel) -> Vec<Vec<f64>> {
        qoi_paths(&self.policy, &self.aggregates, net)
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveOptions {
    /// Overrides `config.damping`.
    pub damping: Option<f64>,
    /// Overrides the constant `config.initial_alpha` guess.
    pub initial_policy: Option<ControlPolicy>,
    /// Initial occupancies; all-susceptible when absent.
    pub initial_state: Option<Vec<Occupancy>>,
    /// Disables the automatic damped restart.
    pub no_restart: bool,
}

struct Sweep {
    trajectory: MeanFieldTrajectory,
    aggregates: AggregatePath,
    values: ValueTrajectory,
    response: ControlPolicy,
}

fn sweep(policy: &ControlPolicy, config: &ScenarioConfig, initial: &[Occupancy]) -> Result<Sweep> {
    let (trajectory, aggregates) = integrate_forward_from(policy, &config.network, &config.grid, initial)?;
    let (values, response) = integrate_backward(&aggregates, &config.network, &config.grid)?;
    Ok(Sweep { trajectory, aggregates, values, response })
}

/// Computes the mean-field equilibrium. An undamped run that fails to
/// converge is retried once with [`RESTART_DAMPING`].
pub fn solve_mfe(config: &ScenarioConfig) -> Result<EquilibriumSolution> {
    solve_mfe_with(config, &SolveOptions::default())
}

pub fn solve_mfe_with(config: &ScenarioConfig, opts: &SolveOptions) -> Result<EquilibriumSolution> {
    let damping = opts.damping.unwrap_or(config.damping);
    match iterate(config, opts, damping) {
        Err(Error::NotConverged(first)) if !opts.no_restart && damping > RESTART_DAMPING => {
            match iterate(config, opts, RESTART_DAMPING) {
                Err(Error::NotConverged(second)) => {
                    let best = if second.final_residual <= first.final_residual { second } else { first };
                    Err(Error::NotConverged(best))
                }
                other => other,
            }
        }
        other => other,
    }
}

fn iterate(config: &ScenarioConfig, opts: &SolveOptions, damping: f64) -> Result<EquilibriumSolution> {
    let n = config.network.len();
    let initial = opts
        .initial_state
        .clone()
        .unwrap_or_else(|| vec![ALL_SUSCEPTIBLE; n]);
    let mut policy = opts
        .initial_policy
        .clone()
        .unwrap_or_else(|| ControlPolicy::constant(config.grid, n, config.initial_alpha));

    let mut history = Vec::new();
    let mut best: Option<EquilibriumSolution> = None;
    let mut last_step = f64::INFINITY;

    for iter in 1..=config.max_iterations {
        let s = sweep(&policy, config, &initial)?;
        let residual = s.response.sup_distance(&policy);
        history.push(residual);
        let next = policy.relax_towards(&s.response, damping);
        let step = next.sup_distance(&policy);

        if best.as_ref().is_none_or(|b| residual < b.final_residual) {
            best = Some(EquilibriumSolution {
                policy: policy.clone(),
                trajectory: s.trajectory,
                aggregates: s.aggregates,
                values: s.values,
                iterations_used: iter,
                final_residual: residual,
                final_step: last_step,
                converged: false,
                damping,
                residual_history: Vec::new(),
            });
        }
        if residual <= config.tolerance {
            break;
        }
        last_step = step;
        policy = next;
    }

    let mut best = best.expect("max_iterations >= 1");
    best.converged = best.final_residual <= config.tolerance;
    best.iterations_used = history.len();
    best.residual_history = history.clone();
    if best.converged {
        Ok(best)
    } else {
        Err(Error::NotConverged(Box::new(NotConverged { best, residual_history: history })))
    }
}

/// `sup |alpha - BR(alpha)|` where `BR` is one forward plus one backward
/// sweep.
pub fn equilibrium_residual(candidate: &ControlPolicy, config: &ScenarioConfig) -> Result<f64> {
    let initial = vec![ALL_SUSCEPTIBLE; config.network.len()];
    Ok(sweep(candidate, config, &initial)?.response.sup_distance(candidate))
}

/// Consecutive horizons: each interval starts from the final occupancies of
/// the previous solve.
pub fn solve_chained(config: &ScenarioConfig, intervals: usize) -> Result<Vec<EquilibriumSolution>> {
    let mut out: Vec<EquilibriumSolution> = Vec::with_capacity(intervals);
    for _ in 0..intervals {
        let initial_state = out.last().map(|prev| prev.trajectory.last().to_vec());
        let opts = SolveOptions { initial_state, ..SolveOptions::default() };
        out.push(solve_mfe_with(config, &opts)?);
    }
    Ok(out)
}

/// Unscaled expected QoI `E_alpha[Q]` per class along a policy.
pub fn qoi_paths(policy: &ControlPolicy, aggregates: &AggregatePath, net: &NetworkModel) -> Vec<Vec<f64>> {
    net.classes
        .iter()
        .zip(&policy.alpha)
        .map(|(class, alpha)| {
            alpha
                .iter()
                .zip(aggregates.theta.iter().zip(&aggregates.eta))
                .map(|(a, (th, eta))| qoi_coefficients(class, *th, *eta, false).expected(*a))
                .collect()
        })
        .collect()
}

/// Population cost per class: `int m_S (E[Q] - Q_T)^2 + m_I c dt` with the
/// unscaled QoI, by the trapezoid rule.
pub fn cumulative_costs(
    trajectory: &MeanFieldTrajectory,
    qoi: &[Vec<f64>],
    net: &NetworkModel,
) -> Vec<f64> {
    let dt = trajectory.grid.dt();
    net.classes
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let rate: Vec<f64> = trajectory
                .states
                .iter()
                .zip(&qoi[c])
                .map(|(s, q)| {
                    let gap = q - class.target_qoi;
                    s[c][S] * gap * gap + s[c][I] * class.infection_cost
                })
                .collect();
            rate.windows(2).map(|w| 0.5 * dt * (w[0] + w[1])).sum()
        })
        .collect()
}

/// Trajectory, aggregates, QoI and accumulated cost of a fixed policy.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyOutcome {
    pub trajectory: MeanFieldTrajectory,
    pub aggregates: AggregatePath,
    /// `qoi[c][j]`, unscaled.
    pub qoi: Vec<Vec<f64>>,
    pub cumulative_cost: Vec<f64>,
}

impl PolicyOutcome {
    pub fn evaluate(policy: &ControlPolicy, config: &ScenarioConfig) -> Result<Self> {
        let initial = vec![ALL_SUSCEPTIBLE; config.network.len()];
        let (trajectory, aggregates) = integrate_forward_from(policy, &config.network, &config.grid, &initial)?;
        Ok(Self::from_parts(policy, trajectory, aggregates, &config.network))
    }

    fn from_parts(
        policy: &ControlPolicy,
        trajectory: MeanFieldTrajectory,
        aggregates: AggregatePath,
        net: &NetworkModel,
    ) -> Self {
        let qoi = qoi_paths(policy, &aggregates, net);
        let cumulative_cost = cumulative_costs(&trajectory, &qoi, net);
        PolicyOutcome { trajectory, aggregates, qoi, cumulative_cost }
    }

    pub fn of_solution(sol: &EquilibriumSolution, net: &NetworkModel) -> Self {
        Self::from_parts(&sol.policy, sol.trajectory.clone(), sol.aggregates.clone(), net)
    }

    pub fn infected_at_end(&self, class: usize) -> f64 {
        self.trajectory.last()[class][I]
    }

    pub fn qoi_at_end(&self, class: usize) -> f64 {
        *self.qoi[class].last().expect("non-empty path")
    }
}

/// Always-accept policy `alpha = 1`.
pub fn baseline_evaluation(config: &ScenarioConfig) -> Result<PolicyOutcome> {
    let policy = ControlPolicy::constant(config.grid, config.network.len(), 1.0);
    PolicyOutcome::evaluate(&policy, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub degree: u32,
    pub type_id: u32,
    pub infected_mfe: f64,
    pub infected_baseline: f64,
    /// `100 (1 - m_I^mfe / m_I^base)` at `T`; `None` when the baseline is zero.
    pub infection_reduction_pct: Option<f64>,
    pub qoi_mfe: f64,
    pub qoi_baseline: f64,
    /// `qoi_mfe / qoi_baseline` at `T`; `None` when the baseline is zero.
    pub qoi_ratio: Option<f64>,
    pub cost_mfe: f64,
    pub cost_baseline: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub classes: Vec<ClassSummary>,
    pub theta_mfe: f64,
    pub theta_baseline: f64,
    pub theta_reduction_pct: Option<f64>,
}

fn reduction_pct(new: f64, base: f64) -> Option<f64> {
    (base.abs() >= DIVISION_GUARD).then(|| 100.0 * (1.0 - new / base))
}

/// Compares an equilibrium outcome with a baseline outcome at the horizon.
pub fn summary_metrics(mfe: &PolicyOutcome, baseline: &PolicyOutcome, net: &NetworkModel) -> SummaryMetrics {
    let classes = net
        .classes
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let (im, ib) = (mfe.infected_at_end(c), baseline.infected_at_end(c));
            let (qm, qb) = (mfe.qoi_at_end(c), baseline.qoi_at_end(c));
            ClassSummary {
                degree: class.degree,
                type_id: class.type_id,
                infected_mfe: im,
                infected_baseline: ib,
                infection_reduction_pct: reduction_pct(im, ib),
                qoi_mfe: qm,
                qoi_baseline: qb,
                qoi_ratio: (qb.abs() >= DIVISION_GUARD).then(|| qm / qb),
                cost_mfe: mfe.cumulative_cost[c],
                cost_baseline: baseline.cumulative_cost[c],
            }
        })
        .collect();
    let (tm, tb) = (mfe.aggregates.last_theta(), baseline.aggregates.last_theta());
    SummaryMetrics {
        classes,
        theta_mfe: tm,
        theta_baseline: tb,
        theta_reduction_pct: reduction_pct(tm, tb),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_scenario, validate};

    fn no_attacker() -> ScenarioConfig {
        validate(reference_scenario()).unwrap().map_classes(|c| c.lambda = 0.0)
    }

    #[test]
    fn no_attacker_equilibrium() {
        let cfg = no_attacker();
        let sol = solve_mfe(&cfg).unwrap();
        assert!(sol.converged);
        assert!(sol.aggregates.theta.iter().all(|&t| t == 0.0));
        assert!(sol.trajectory.states.iter().flatten().all(|m| m[I] == 0.0));
        assert!(equilibrium_residual(&sol.policy, &cfg).unwrap() <= cfg.tolerance);
    }

    #[test]
    fn no_attacker_baseline() {
        let base = baseline_evaluation(&no_attacker()).unwrap();
        assert!(base.trajectory.states.iter().flatten().all(|m| m[I] == 0.0));
    }

    #[test]
    fn self_comparison_is_neutral() {
        let cfg = validate(reference_scenario()).unwrap();
        let base = baseline_evaluation(&cfg).unwrap();
        let m = summary_metrics(&base, &base, &cfg.network);
        for c in &m.classes {
            assert_eq!(c.infection_reduction_pct, Some(0.0));
            assert_eq!(c.qoi_ratio, Some(1.0));
        }
        assert_eq!(m.theta_reduction_pct, Some(0.0));
    }

    #[test]
    fn zero_baseline_is_undefined() {
        let cfg = no_attacker();
        let base = baseline_evaluation(&cfg).unwrap();
        let m = summary_metrics(&base, &base, &cfg.network);
        assert!(m.classes.iter().all(|c| c.infection_reduction_pct.is_none()));
        assert!(m.theta_reduction_pct.is_none());
    }

    #[test]
    fn baseline_qoi_at_start() {
        let cfg = validate(reference_scenario()).unwrap();
        let base = baseline_evaluation(&cfg).unwrap();
        // L V^T + F^M at theta = 0, eta = 1: 0.8 * 16 + (15 - 0.2 - 12) = 15.6
        assert!((base.qoi[2][0] - 15.6).abs() < 1e-12);
        assert!((base.qoi[3][0] - 20.6).abs() < 1e-12);
    }

    #[test]
    fn max_iterations_exhausted() {
        let mut cfg = validate(reference_scenario()).unwrap();
        cfg.max_iterations = 1;
        cfg.tolerance = 1e-300;
        match solve_mfe(&cfg) {
            Err(Error::NotConverged(nc)) => {
                assert!(!nc.converged);
                assert_eq!(nc.residual_history.len(), 1);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
