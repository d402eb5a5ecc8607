//! Backward Hamilton-Jacobi value equations and the best-response map.

use serde::{Deserialize, Serialize};

use crate::dynamics::{clean_probability, infection_pressure, AggregatePath, Compartment, E, I, L, S};
use crate::error::{Error, Result};
use crate::model::{NetworkModel, NodeClassParams, TimeGrid};
use crate::qoi::expected_qoi_coefficients;

/// Below this `|a1|` the state-S Hamiltonian is treated as linear in the
/// control.
pub const CONVEXITY_EPS: f64 = 1e-8;

/// Cost-to-go `(u_S, u_E, u_L, u_I)` of one class.
pub type ValueState = [f64; 4];

/// Value functions on the grid; `values[j][c]` is class `c` at `t_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueTrajectory {
    pub grid: TimeGrid,
    pub values: Vec<Vec<ValueState>>,
}

/// Acceptance probabilities on the grid; `alpha[c][j]` is class `c` at
/// `t_j`. The forward sweep holds `alpha[c][j]` constant on `[t_j, t_{j+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub grid: TimeGrid,
    pub alpha: Vec<Vec<f64>>,
}

impl ControlPolicy {
    pub fn constant(grid: TimeGrid, classes: usize, value: f64) -> Self {
        ControlPolicy { grid, alpha: vec![vec![value; grid.n_points()]; classes] }
    }

    /// Largest pointwise difference over classes and grid points.
    pub fn sup_distance(&self, other: &ControlPolicy) -> f64 {
        self.alpha
            .iter()
            .flatten()
            .zip(other.alpha.iter().flatten())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    /// `theta * new + (1 - theta) * self`.
    pub fn relax_towards(&self, new: &ControlPolicy, theta: f64) -> ControlPolicy {
        let alpha = self
            .alpha
            .iter()
            .zip(&new.alpha)
            .map(|(old, new)| {
                old.iter().zip(new).map(|(o, n)| theta * n + (1.0 - theta) * o).collect()
            })
            .collect();
        ControlPolicy { grid: self.grid, alpha }
    }

    pub fn is_in_range(&self) -> bool {
        self.alpha.iter().flatten().all(|a| (0.0..=1.0).contains(a))
    }
}

/// Value differences `u_j - u_S` seen from the susceptible state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValueDifferences {
    pub exposed: f64,
    pub latent: f64,
    pub infected: f64,
}

impl ValueDifferences {
    pub fn from_values(u: &ValueState) -> Self {
        ValueDifferences {
            exposed: u[E] - u[S],
            latent: u[L] - u[S],
            infected: u[I] - u[S],
        }
    }
}

/// The state-S Hamiltonian evaluated at a given control (no minimization).
pub fn susceptible_hamiltonian_at(
    alpha: f64,
    diffs: &ValueDifferences,
    class: &NodeClassParams,
    theta: f64,
    eta: f64,
) -> f64 {
    let r = infection_pressure(class, theta);
    let l = clean_probability(class, theta);
    let q = expected_qoi_coefficients(class, theta, eta);
    let gap = q.expected(alpha) - class.shifted_target();
    gap * gap
        + (1.0 - alpha) * r * diffs.exposed
        + (1.0 - alpha) * l * diffs.latent
        + alpha * r * diffs.infected
}

/// Closed-form minimizer of the state-S Hamiltonian over `[0, 1]`.
///
/// Fails with [`Error::DegenerateQuadratic`] when `|a1| < CONVEXITY_EPS`;
/// callers should then use [`linear_best_response`].
pub fn best_response(diffs: &ValueDifferences, class: &NodeClassParams, theta: f64, eta: f64) -> Result<f64> {
    let q = expected_qoi_coefficients(class, theta, eta);
    if q.a1.abs() < CONVEXITY_EPS {
        return Err(Error::DegenerateQuadratic { a1: q.a1 });
    }
    let r = infection_pressure(class, theta);
    let l = clean_probability(class, theta);
    let g = (r * diffs.exposed + l * diffs.latent - r * diffs.infected
        + 2.0 * q.a1 * (class.shifted_target() - q.a2))
        / (2.0 * q.a1 * q.a1);
    Ok(g.clamp(0.0, 1.0))
}

/// Bang-bang minimizer when the quadratic term vanishes. Ties go to 0.
pub fn linear_best_response(diffs: &ValueDifferences, class: &NodeClassParams, theta: f64) -> f64 {
    let r = infection_pressure(class, theta);
    let l = clean_probability(class, theta);
    let slope = r * diffs.infected - r * diffs.exposed - l * diffs.latent;
    if slope >= 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Best response with the degenerate fallback applied.
pub fn optimal_acceptance(diffs: &ValueDifferences, class: &NodeClassParams, theta: f64, eta: f64) -> f64 {
    best_response(diffs, class, theta, eta).unwrap_or_else(|_| linear_best_response(diffs, class, theta))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    /// Minimizing control; only state S has a non-empty action set.
    pub alpha: Option<f64>,
}

/// Minimized Hamiltonian of `state`: running cost plus rate-weighted value
/// differences.
pub fn hamiltonian(state: Compartment, u: &ValueState, class: &NodeClassParams, theta: f64, eta: f64) -> HamiltonianValue {
    let leave = class.processing_rate();
    match state {
        Compartment::S => {
            let diffs = ValueDifferences::from_values(u);
            let alpha = optimal_acceptance(&diffs, class, theta, eta);
            HamiltonianValue {
                value: susceptible_hamiltonian_at(alpha, &diffs, class, theta, eta),
                alpha: Some(alpha),
            }
        }
        Compartment::E => HamiltonianValue {
            value: leave * class.beta_e * (u[I] - u[E]) + leave * class.gamma_e * (u[S] - u[E]),
            alpha: None,
        },
        Compartment::L => HamiltonianValue { value: leave * (u[S] - u[L]), alpha: None },
        Compartment::I => HamiltonianValue {
            value: class.infection_cost + class.nu * (u[S] - u[I]),
            alpha: None,
        },
    }
}

/// `-du/dt` for all four states of one class, plus the S-state control.
fn value_rhs(u: &ValueState, class: &NodeClassParams, theta: f64, eta: f64) -> (ValueState, f64) {
    let hs = hamiltonian(Compartment::S, u, class, theta, eta);
    let rhs = [
        hs.value,
        hamiltonian(Compartment::E, u, class, theta, eta).value,
        hamiltonian(Compartment::L, u, class, theta, eta).value,
        hamiltonian(Compartment::I, u, class, theta, eta).value,
    ];
    (rhs, hs.alpha.unwrap_or(0.0))
}

/// Integrates the value equations backward from `u(T) = 0` with RK4,
/// interpolating the aggregates linearly between grid points, and records
/// the minimizing control at each grid point.
pub fn integrate_backward(
    aggregates: &AggregatePath,
    net: &NetworkModel,
    grid: &TimeGrid,
) -> Result<(ValueTrajectory, ControlPolicy)> {
    let np = grid.n_points();
    if aggregates.theta.len() != np || aggregates.eta.len() != np {
        return Err(Error::GridMismatch(format!(
            "aggregates have {} points, grid has {np}",
            aggregates.theta.len()
        )));
    }
    let dt = grid.dt();
    let n = net.len();
    let mut values = vec![vec![[0.0; 4]; n]; np];
    let mut alpha = vec![vec![0.0; np]; n];

    for (c, class) in net.classes.iter().enumerate() {
        let mut u: ValueState = [0.0; 4];
        for j in (0..grid.n_steps).rev() {
            let (th_hi, eta_hi) = (aggregates.theta[j + 1], aggregates.eta[j + 1]);
            let (th_mid, eta_mid) = aggregates.midpoint(j);
            let (th_lo, eta_lo) = (aggregates.theta[j], aggregates.eta[j]);

            let (k1, a_hi) = value_rhs(&u, class, th_hi, eta_hi);
            if j + 1 == grid.n_steps {
                alpha[c][j + 1] = a_hi;
            }
            let u2: ValueState = std::array::from_fn(|q| u[q] + 0.5 * dt * k1[q]);
            let (k2, _) = value_rhs(&u2, class, th_mid, eta_mid);
            let u3: ValueState = std::array::from_fn(|q| u[q] + 0.5 * dt * k2[q]);
            let (k3, _) = value_rhs(&u3, class, th_mid, eta_mid);
            let u4: ValueState = std::array::from_fn(|q| u[q] + dt * k3[q]);
            let (k4, _) = value_rhs(&u4, class, th_lo, eta_lo);
            u = std::array::from_fn(|q| u[q] + dt / 6.0 * (k1[q] + 2.0 * k2[q] + 2.0 * k3[q] + k4[q]));

            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::IntegrationDiverged {
                    time: grid.t(j),
                    detail: format!("non-finite value function for class {c}"),
                });
            }
            values[j][c] = u;
            let diffs = ValueDifferences::from_values(&u);
            alpha[c][j] = optimal_acceptance(&diffs, class, th_lo, eta_lo);
        }
    }
    Ok((ValueTrajectory { grid: *grid, values }, ControlPolicy { grid: *grid, alpha }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{single_class, TimeGrid};

    fn class(k: u32) -> NodeClassParams {
        NodeClassParams {
            degree: k,
            type_id: 0,
            lambda: 0.2,
            delta: 0.3,
            beta_e: 0.1,
            gamma_e: 0.9,
            beta_l: 0.8,
            gamma_l: 0.2,
            nu: 0.5,
            infection_cost: 30.0,
            target_qoi: f64::from(k),
            kappa: 1.0,
            scaling_enabled: true,
        }
    }

    #[test]
    fn boundary_stationary_point() {
        let mut c = class(6);
        let (theta, eta) = (0.1, 0.5);
        let q = expected_qoi_coefficients(&c, theta, eta);
        c.target_qoi = q.a2 - c.qoi_shift();
        let d = ValueDifferences::from_values(&[2.0; 4]);
        assert_eq!(best_response(&d, &c, theta, eta).unwrap(), 0.0);
    }

    #[test]
    fn formula_interior_point() {
        // Build a class whose a1 is exactly 1 is awkward; check the formula
        // against the quadratic's vertex instead.
        let c = class(3);
        let (theta, eta) = (0.05, 0.8);
        let q = expected_qoi_coefficients(&c, theta, eta);
        let d = ValueDifferences { exposed: 0.0, latent: 0.0, infected: 0.0 };
        let vertex = (c.shifted_target() - q.a2) / q.a1;
        let a = best_response(&d, &c, theta, eta).unwrap();
        assert!((a - vertex.clamp(0.0, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_quadratic_detected() {
        let mut c = class(4);
        c.beta_e = 1.0;
        c.gamma_e = 0.0;
        c.beta_l = 1.0;
        c.gamma_l = 0.0;
        c.delta = 0.0;
        c.scaling_enabled = false;
        let d = ValueDifferences::from_values(&[0.0; 4]);
        assert!(matches!(best_response(&d, &c, 0.1, 0.5), Err(Error::DegenerateQuadratic { .. })));
    }

    #[test]
    fn linear_fallback_cases() {
        let c = class(4);
        let costly_infection = ValueDifferences { exposed: 0.0, latent: 0.0, infected: 100.0 };
        assert_eq!(linear_best_response(&costly_infection, &c, 0.1), 0.0);
        let costly_processing = ValueDifferences { exposed: 50.0, latent: 50.0, infected: 0.0 };
        assert_eq!(linear_best_response(&costly_processing, &c, 0.1), 1.0);
        let tie = ValueDifferences { exposed: 0.0, latent: 0.0, infected: 0.0 };
        assert_eq!(linear_best_response(&tie, &c, 0.1), 0.0);
    }

    #[test]
    fn fixed_rate_hamiltonians() {
        let c = class(10);
        let u = [1.0, 2.5, 4.0, 7.0];
        let hl = hamiltonian(Compartment::L, &u, &c, 0.2, 0.3);
        assert!((hl.value - 0.7 * (1.0 - 4.0)).abs() < 1e-15);
        assert!(hl.alpha.is_none());
        let hi = hamiltonian(Compartment::I, &u, &c, 0.2, 0.3);
        assert!((hi.value - (30.0 + 0.5 * (1.0 - 7.0))).abs() < 1e-15);
        let he = hamiltonian(Compartment::E, &u, &c, 0.2, 0.3);
        assert!((he.value - (0.7 * 0.1 * 4.5 + 0.7 * 0.9 * (-1.5))).abs() < 1e-15);
    }

    #[test]
    fn equal_values_leave_only_running_cost() {
        let c = class(10);
        let u = [3.0; 4];
        let h = hamiltonian(Compartment::S, &u, &c, 0.2, 0.3);
        let a = h.alpha.unwrap();
        let rc = crate::qoi::running_cost(Compartment::S, a, &c, 0.2, 0.3);
        assert!((h.value - rc).abs() < 1e-12);
    }

    #[test]
    fn zero_cost_game_has_zero_value() {
        let mut c = class(1);
        c.infection_cost = 0.0;
        c.beta_e = 1.0;
        c.gamma_e = 0.0;
        c.beta_l = 1.0;
        c.gamma_l = 0.0;
        c.delta = 0.0;
        c.scaling_enabled = false;
        c.lambda = 0.0;
        // With nobody infected and no attacker: theta = 0, eta = 1, L = 1, and
        // the expected QoI is k + 1 for any control; hitting that target
        // makes every running cost vanish.
        c.target_qoi = 2.0;
        let grid = TimeGrid::new(0.5, 50);
        let cfg = single_class(c, grid).unwrap();
        let agg = AggregatePath { theta: vec![0.0; 51], eta: vec![1.0; 51] };
        let (v, _) = integrate_backward(&agg, &cfg.network, &grid).unwrap();
        assert!(v.values.iter().flatten().flatten().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn infected_value_without_curing_is_linear() {
        let mut c = class(5);
        c.nu = 0.0;
        let grid = TimeGrid::new(0.9, 90);
        let cfg = single_class(c, grid).unwrap();
        let agg = AggregatePath { theta: vec![0.05; 91], eta: vec![0.6; 91] };
        let (v, policy) = integrate_backward(&agg, &cfg.network, &grid).unwrap();
        for (j, t) in grid.times().enumerate() {
            assert!((v.values[j][0][I] - 30.0 * (0.9 - t)).abs() < 1e-10);
        }
        assert_eq!(v.values[90][0], [0.0; 4]);
        assert!(policy.is_in_range());
    }
}
