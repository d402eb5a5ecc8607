//! Quality-of-information model and per-state running costs.
//!
//! A susceptible node that accepts immediately gets the true-information QoI
//! `k eta + 1` with probability `L` and the misinformation QoI otherwise.
//! A doubting node later accepts true information with probability `beta_L`
//! and misinformation with probability `beta_E`, paying the delay penalty
//! `kappa delta` in both cases; a rejection yields zero QoI. The resulting
//! expected QoI is affine in the acceptance probability:
//! `E_a[Q] = a1 * a + a2`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{clean_probability, Compartment};
use crate::model::NodeClassParams;

/// Expected misinformation QoI weighted by the probability of receiving
/// misinformation: `F = k eta - k theta - lambda - (1 - lambda) k eta`, so
/// that the conditional QoI is `F / (1 - L)`.
pub fn misinformation_qoi(class: &NodeClassParams, theta: f64, eta: f64) -> f64 {
    let k = class.k();
    k * eta - k * theta - class.lambda - (1.0 - class.lambda) * k * eta
}

/// Expected QoI of accepted true information, `k eta + 1`.
pub fn true_info_qoi(class: &NodeClassParams, eta: f64) -> f64 {
    class.k() * eta + 1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub scaled: bool,
}

impl QoiCoefficients {
    pub fn expected(&self, alpha: f64) -> f64 {
        self.a1 * alpha + self.a2
    }
}

/// Coefficients of the expected QoI, shifted when the class has scaling
/// enabled.
pub fn expected_qoi_coefficients(class: &NodeClassParams, theta: f64, eta: f64) -> QoiCoefficients {
    qoi_coefficients(class, theta, eta, class.scaling_enabled)
}

/// Coefficients with explicit control over the scaling shift (reporting
/// always uses the unshifted QoI).
pub fn qoi_coefficients(class: &NodeClassParams, theta: f64, eta: f64, scaled: bool) -> QoiCoefficients {
    let shift = if scaled { class.k() + 2.0 } else { 0.0 };
    let l = clean_probability(class, theta);
    let vt = true_info_qoi(class, eta);
    let fm = misinformation_qoi(class, theta, eta);
    let delay = class.kappa * class.delta;

    let accept_now = l * (vt + shift) + fm + shift * (1.0 - l);
    let a2 = l * class.beta_l * (vt + shift - delay)
        + class.beta_e * (fm + shift * (1.0 - l) - delay * (1.0 - l));
    QoiCoefficients { a1: accept_now - a2, a2, scaled }
}

/// Running cost of a node in state `state`. Only state S depends on the
/// control: `(E_a[Q] - Q_T')^2`.
pub fn running_cost(state: Compartment, alpha: f64, class: &NodeClassParams, theta: f64, eta: f64) -> f64 {
    match state {
        Compartment::S => {
            let q = expected_qoi_coefficients(class, theta, eta);
            let gap = q.expected(alpha) - class.shifted_target();
            gap * gap
        }
        Compartment::E | Compartment::L => 0.0,
        Compartment::I => class.infection_cost,
    }
}

/// Slope `a1` of the scaled expected QoI, i.e. the square root of half the
/// curvature of the state-S running cost.
pub fn convexity_margin(class: &NodeClassParams, theta: f64, eta: f64) -> f64 {
    qoi_coefficients(class, theta, eta, true).a1
}

/// Closed-form lower bound on [`convexity_margin`] claimed for
/// `beta_L >= beta_E`: `(1 - beta_L)(2k - 1) + beta_E delta`.
pub fn claimed_convexity_bound(class: &NodeClassParams) -> f64 {
    (1.0 - class.beta_l) * (2.0 * class.k() - 1.0) + class.beta_e * class.delta
}
