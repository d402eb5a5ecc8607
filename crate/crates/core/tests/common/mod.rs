//! Reference computations written independently of the library, shared by
//! the integration tests.

#![allow(dead_code)]

use misinfo_mfg::model::{NetworkModel, NodeClassParams, ScenarioConfig, TimeGrid};
use rand::Rng;

/// Expected QoI of a susceptible node accepting with probability `alpha`,
/// by walking all `3^k` link configurations and both attacker outcomes.
///
/// Links point to an infected node (prob. `theta`), a susceptible node
/// (`eta`) or a processing node (the rest). Misinformation arrives when the
/// attacker injects (payoff `n2 - n1 - 1`) or, failing that, through an
/// infected link (payoff `-n1`). True information arrives otherwise; its
/// payoff `n2 + 1` is averaged over all link configurations, i.e. it counts
/// susceptible neighbours independently of the infection event.
pub fn enumerate_qoi(class: &NodeClassParams, theta: f64, eta: f64, alpha: f64, scaled: bool) -> f64 {
    let k = class.degree;
    assert!(k <= 10, "enumeration is exponential in the degree");
    let rest = 1.0 - theta - eta;
    let mut outcomes = Vec::with_capacity(3usize.pow(k));
    for code in 0..3u32.pow(k) {
        let (mut infected, mut susceptible, mut p) = (0u32, 0u32, 1.0);
        let mut c = code;
        for _ in 0..k {
            match c % 3 {
                0 => {
                    infected += 1;
                    p *= theta;
                }
                1 => {
                    susceptible += 1;
                    p *= eta;
                }
                _ => p *= rest,
            }
            c /= 3;
        }
        outcomes.push((infected, susceptible, p));
    }
    combine(class, alpha, scaled, &outcomes)
}

/// Same expectation as [`enumerate_qoi`] grouped by link counts
/// `(n1 infected, n2 susceptible)` with multinomial weights; usable up to
/// degree 20.
pub fn multinomial_qoi(class: &NodeClassParams, theta: f64, eta: f64, alpha: f64, scaled: bool) -> f64 {
    let k = class.degree;
    let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
    let rest = 1.0 - theta - eta;
    let mut outcomes = Vec::new();
    for n1 in 0..=k {
        for n2 in 0..=k - n1 {
            let w = fact(k) / (fact(n1) * fact(n2) * fact(k - n1 - n2))
                * theta.powi(n1 as i32)
                * eta.powi(n2 as i32)
                * rest.powi((k - n1 - n2) as i32);
            outcomes.push((n1, n2, w));
        }
    }
    combine(class, alpha, scaled, &outcomes)
}

/// Expected QoI over weighted link outcomes `(n1, n2, probability)`.
fn combine(class: &NodeClassParams, alpha: f64, scaled: bool, outcomes: &[(u32, u32, f64)]) -> f64 {
    let shift = if scaled { f64::from(class.degree) + 2.0 } else { 0.0 };
    let delay = class.kappa * class.delta;
    // accept now, or after processing with probability `beta`
    let accept = |v: f64, beta: f64| alpha * (v + shift) + (1.0 - alpha) * beta * (v + shift - delay);
    let lam = class.lambda;
    let (mut p_true, mut v_true, mut total) = (0.0, 0.0, 0.0);
    for &(n1, n2, p) in outcomes {
        let (a, b) = (f64::from(n1), f64::from(n2));
        v_true += p * (b + 1.0);
        total += p * lam * accept(b - a - 1.0, class.beta_e);
        if n1 == 0 {
            p_true += p * (1.0 - lam);
        } else {
            total += p * (1.0 - lam) * accept(-a, class.beta_e);
        }
    }
    total + p_true * accept(v_true, class.beta_l)
}

pub fn pressure(class: &NodeClassParams, theta: f64) -> f64 {
    class.lambda + f64::from(class.degree) * theta
}

pub fn clean(class: &NodeClassParams, theta: f64) -> f64 {
    (1.0 - class.lambda) * (1.0 - theta).powi(class.degree as i32)
}

/// Expected QoI at `alpha` from the closed forms of the true-information
/// and misinformation payoffs (no enumeration; any degree).
pub fn closed_qoi(class: &NodeClassParams, theta: f64, eta: f64, alpha: f64, scaled: bool) -> f64 {
    let k = f64::from(class.degree);
    let s = if scaled { k + 2.0 } else { 0.0 };
    let l = clean(class, theta);
    let v_true = k * eta + 1.0;
    let f_mis = class.lambda * k * eta - k * theta - class.lambda;
    let delay = class.kappa * class.delta;
    let now = l * (v_true + s) + f_mis + s * (1.0 - l);
    let later = l * class.beta_l * (v_true + s - delay) + class.beta_e * (f_mis + (s - delay) * (1.0 - l));
    alpha * now + (1.0 - alpha) * later
}

/// State-S Hamiltonian at a fixed control; `du = (u_E - u_S, u_L - u_S, u_I - u_S)`.
pub fn hamiltonian_s(class: &NodeClassParams, theta: f64, eta: f64, du: [f64; 3], alpha: f64) -> f64 {
    let scaled = class.scaling_enabled;
    let target = class.target_qoi + if scaled { f64::from(class.degree) + 2.0 } else { 0.0 };
    let gap = closed_qoi(class, theta, eta, alpha, scaled) - target;
    let (r, l) = (pressure(class, theta), clean(class, theta));
    gap * gap + (1.0 - alpha) * (r * du[0] + l * du[1]) + alpha * r * du[2]
}

/// Minimizer over `points` equispaced controls; the first minimum wins.
pub fn grid_argmin(points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..points {
        let a = i as f64 / (points - 1) as f64;
        let v = f(a);
        if v < best.0 {
            best = (v, a);
        }
    }
    best.1
}

/// Kolmogorov right-hand side from the transition list of the SELI chain.
pub fn transition_rhs(class: &NodeClassParams, m: [f64; 4], alpha: f64, theta: f64) -> [f64; 4] {
    let (r, l) = (pressure(class, theta), clean(class, theta));
    let leave = 1.0 - class.delta;
    // (from, to, rate)
    let flows = [
        (0, 1, (1.0 - alpha) * r),
        (0, 2, (1.0 - alpha) * l),
        (0, 3, alpha * r),
        (1, 3, leave * class.beta_e),
        (1, 0, leave * class.gamma_e),
        (2, 0, leave * (class.beta_l + class.gamma_l)),
        (3, 0, class.nu),
    ];
    let mut d = [0.0; 4];
    for (from, to, rate) in flows {
        d[from] -= rate * m[from];
        d[to] += rate * m[from];
    }
    d
}

pub fn class_with(degree: u32, lambda: f64, delta: f64, beta_e: f64, beta_l: f64, nu: f64) -> NodeClassParams {
    NodeClassParams {
        degree,
        type_id: 0,
        lambda,
        delta,
        beta_e,
        gamma_e: 1.0 - beta_e,
        beta_l,
        gamma_l: 1.0 - beta_l,
        nu,
        infection_cost: 1.0,
        target_qoi: f64::from(degree),
        kappa: 1.0,
        scaling_enabled: true,
    }
}

/// Random class drawn independently of the library generators.
pub fn sample_class<R: Rng>(rng: &mut R, degree: u32) -> NodeClassParams {
    let mut c = class_with(
        degree,
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..0.9),
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..=1.0),
        rng.random_range(0.0..3.0),
    );
    c.infection_cost = rng.random_range(0.0..40.0);
    c.target_qoi = rng.random_range(0.0..f64::from(degree) + 3.0);
    c.kappa = rng.random_range(0.0..4.0);
    c.scaling_enabled = rng.random_bool(0.5);
    c
}

pub fn sample_link_state<R: Rng>(rng: &mut R) -> (f64, f64) {
    let a: f64 = rng.random();
    let b: f64 = rng.random();
    // uniform on the simplex corner {theta, eta >= 0, theta + eta <= 1}
    if a + b <= 1.0 {
        (a, b)
    } else {
        (1.0 - a, 1.0 - b)
    }
}

/// Random valid scenario with 1 to 4 classes of distinct degrees and a step
/// fine enough for the forward sweep.
pub fn sample_scenario<R: Rng>(rng: &mut R) -> ScenarioConfig {
    let n = rng.random_range(1..=4usize);
    let mut degrees: Vec<u32> = Vec::new();
    while degrees.len() < n {
        let d = rng.random_range(1..=20);
        if !degrees.contains(&d) {
            degrees.push(d);
        }
    }
    let classes: Vec<NodeClassParams> = degrees.iter().map(|&d| sample_class(rng, d)).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    let mut weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
    weights[0] = 1.0 - weights[1..].iter().sum::<f64>();
    let network = NetworkModel::new(classes, weights).expect("sampled network is valid");
    let horizon = rng.random_range(0.2..1.5);
    let max_degree = f64::from(*degrees.iter().max().unwrap());
    let n_steps = ((horizon * (max_degree + 4.0) / 0.05).ceil() as usize).max(40);
    misinfo_mfg::model::validate(ScenarioConfig::with_defaults(network, TimeGrid::new(horizon, n_steps)))
        .expect("sampled scenario is valid")
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

pub fn sup_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
