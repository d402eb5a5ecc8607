//! Brute-force reference computations and random instance generators used
//! by the reproduction harness to cross-check the closed forms.

use rand::Rng;

use crate::hjb::{susceptible_hamiltonian_at, ValueDifferences};
use crate::model::{NetworkModel, NodeClassParams};

/// `P(n1, n2)` of the multinomial link split with probabilities
/// `(theta, eta, 1 - theta - eta)` over `k` links.
fn multinomial(k: u32, n1: u32, n2: u32, theta: f64, eta: f64) -> f64 {
    let rest = (1.0 - theta - eta).max(0.0);
    let mut coef = 1.0;
    // k! / (n1! n2! (k - n1 - n2)!) as a product of binomials
    for i in 0..n1 {
        coef *= f64::from(k - i) / f64::from(i + 1);
    }
    for i in 0..n2 {
        coef *= f64::from(k - n1 - i) / f64::from(i + 1);
    }
    coef * theta.powi(n1 as i32) * eta.powi(n2 as i32) * rest.powi((k - n1 - n2) as i32)
}

/// Expected QoI of a susceptible node accepting with probability `alpha`,
/// summed outcome by outcome over the multinomial link distribution and the
/// accept-now / accept-after-processing / reject branches.
pub fn enumerate_expected_qoi(class: &NodeClassParams, theta: f64, eta: f64, alpha: f64, scaled: bool) -> f64 {
    let k = class.degree;
    let lam = class.lambda;
    let shift = if scaled { class.k() + 2.0 } else { 0.0 };
    let delay = class.kappa * class.delta;

    let mut clean = 0.0; // P(no injection and no infected link)
    let mut v_true = 0.0;
    let mut f_mis = 0.0;
    for n1 in 0..=k {
        for n2 in 0..=(k - n1) {
            let p = multinomial(k, n1, n2, theta, eta);
            let (a, b) = (f64::from(n1), f64::from(n2));
            if n1 == 0 {
                clean += (1.0 - lam) * p;
            }
            v_true += p * (b + 1.0);
            f_mis += p * (lam * (b - a - 1.0) + (1.0 - lam) * (b - a) - (1.0 - lam) * b);
        }
    }
    let mis = 1.0 - clean;

    let accept_now = clean * (v_true + shift) + f_mis + shift * mis;
    let after_latent = clean * class.beta_l * (v_true + shift - delay);
    let after_exposed = class.beta_e * (f_mis + (shift - delay) * mis);
    alpha * accept_now + (1.0 - alpha) * (after_latent + after_exposed)
}

/// Minimizer of the state-S Hamiltonian over `points` equispaced controls
/// in `[0, 1]` (first minimum wins).
pub fn grid_best_response(
    diffs: &ValueDifferences,
    class: &NodeClassParams,
    theta: f64,
    eta: f64,
    points: usize,
) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points {
        let a = i as f64 / (points - 1) as f64;
        let h = susceptible_hamiltonian_at(a, diffs, class, theta, eta);
        if h < best.0 {
            best = (h, a);
        }
    }
    best.1
}

/// A random valid class with degree in `1..=max_degree`.
pub fn random_class<R: Rng>(rng: &mut R, max_degree: u32) -> NodeClassParams {
    let beta_e: f64 = rng.random();
    let beta_l: f64 = rng.random();
    let degree = rng.random_range(1..=max_degree);
    NodeClassParams {
        degree,
        type_id: 0,
        lambda: rng.random(),
        delta: rng.random_range(0.0..0.95),
        beta_e,
        gamma_e: 1.0 - beta_e,
        beta_l,
        gamma_l: 1.0 - beta_l,
        nu: rng.random_range(0.0..2.0),
        infection_cost: rng.random_range(0.0..30.0),
        target_qoi: rng.random_range(0.0..=f64::from(degree) + 2.0),
        kappa: rng.random_range(0.0..5.0),
        scaling_enabled: rng.random_bool(0.5),
    }
}

/// A random network of 1 to 5 classes with distinct degrees.
pub fn random_network<R: Rng>(rng: &mut R, max_degree: u32) -> NetworkModel {
    let n = rng.random_range(1..=5usize.min(max_degree as usize));
    let mut classes: Vec<NodeClassParams> = Vec::with_capacity(n);
    while classes.len() < n {
        let c = random_class(rng, max_degree);
        if classes.iter().all(|o| o.degree != c.degree) {
            classes.push(c);
        }
    }
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let head: f64 = weights[1..].iter().sum();
    weights[0] = 1.0 - head;
    NetworkModel::new(classes, weights).expect("generated network is valid")
}

/// Random point with `theta, eta >= 0` and `theta + eta <= 1`.
pub fn random_link_state<R: Rng>(rng: &mut R) -> (f64, f64) {
    let theta: f64 = rng.random();
    let eta = rng.random_range(0.0..=1.0 - theta);
    (theta, eta)
}
