//! Coupling aggregates and the forward Kolmogorov equations of the SELI
//! population.
//!
//! Per class the occupancies `(m_S, m_E, m_L, m_I)` follow the transition
//! rates
//!
//! ```text
//! S -> E   (1 - a) R(theta)        E -> I   (1 - delta) beta_E
//! S -> L   (1 - a) L(theta)        E -> S   (1 - delta) gamma_E
//! S -> I   a R(theta)              L -> S   (1 - delta)
//!                                  I -> S   nu
//! ```
//!
//! with `R = lambda + k theta` and `L = (1 - lambda)(1 - theta)^k`. The
//! coupling `theta` is recomputed from the stage state at every Runge-Kutta
//! stage; the policy is interpolated linearly between grid points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hjb::ControlPolicy;
use crate::model::{NetworkModel, NodeClassParams, TimeGrid};

/// Index into an occupancy or value 4-vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Compartment {
    S = 0,
    E = 1,
    L = 2,
    I = 3,
}

impl Compartment {
    pub const ALL: [Compartment; 4] = [Compartment::S, Compartment::E, Compartment::L, Compartment::I];

    pub fn label(self) -> &'static str {
        match self {
            Compartment::S => "S",
            Compartment::E => "E",
            Compartment::L => "L",
            Compartment::I => "I",
        }
    }
}

pub const S: usize = Compartment::S as usize;
pub const E: usize = Compartment::E as usize;
pub const L: usize = Compartment::L as usize;
pub const I: usize = Compartment::I as usize;

/// Occupancy fractions `(m_S, m_E, m_L, m_I)` of one class.
pub type Occupancy = [f64; 4];

/// Everybody susceptible.
pub const ALL_SUSCEPTIBLE: Occupancy = [1.0, 0.0, 0.0, 0.0];

/// Excursions beyond `[0, 1]` smaller than this are treated as roundoff
/// and clamped; larger ones abort the integration.
pub const CLAMP_SLACK: f64 = 1e-6;

/// Probability that a uniformly chosen link points to an infected node.
pub fn link_infection_probability(state: &[Occupancy], net: &NetworkModel) -> f64 {
    degree_weighted(state, net, I)
}

/// Probability that a uniformly chosen link points to a susceptible node.
pub fn link_susceptible_probability(state: &[Occupancy], net: &NetworkModel) -> f64 {
    degree_weighted(state, net, S)
}

// Summed in class order so repeated evaluations are bitwise reproducible.
fn degree_weighted(state: &[Occupancy], net: &NetworkModel, idx: usize) -> f64 {
    let mut acc = 0.0;
    for ((m, c), w) in state.iter().zip(&net.classes).zip(&net.weights) {
        acc += c.k() * w * m[idx];
    }
    acc / net.mean_degree
}

/// Total rate `R = lambda + k theta` at which misinformation reaches a node.
pub fn infection_pressure(class: &NodeClassParams, theta: f64) -> f64 {
    class.lambda + class.k() * theta
}

/// Probability `(1 - lambda)(1 - theta)^k` that a node receives no
/// misinformation.
pub fn clean_probability(class: &NodeClassParams, theta: f64) -> f64 {
    (1.0 - class.lambda) * (1.0 - theta).powi(class.degree as i32)
}

/// Time derivative of one class's occupancies under acceptance probability
/// `alpha` and link infection probability `theta`.
pub fn kolmogorov_rhs(class: &NodeClassParams, m: &Occupancy, alpha: f64, theta: f64) -> Occupancy {
    let r = infection_pressure(class, theta);
    let l = clean_probability(class, theta);
    let doubt = 1.0 - alpha;
    let leave = class.processing_rate();

    let s_to_e = doubt * r * m[S];
    let s_to_l = doubt * l * m[S];
    let s_to_i = alpha * r * m[S];
    let e_to_i = leave * class.beta_e * m[E];
    let e_to_s = leave * class.gamma_e * m[E];
    let l_to_s = leave * (class.beta_l + class.gamma_l) * m[L];
    let i_to_s = class.nu * m[I];

    [
        e_to_s + l_to_s + i_to_s - s_to_e - s_to_l - s_to_i,
        s_to_e - e_to_i - e_to_s,
        s_to_l - l_to_s,
        s_to_i + e_to_i - i_to_s,
    ]
}

/// Occupancy curves of every class over the grid; `states[j][c]` is class
/// `c` at `t_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<Occupancy>>,
}

impl MeanFieldTrajectory {
    pub fn at(&self, j: usize, class: usize) -> &Occupancy {
        &self.states[j][class]
    }

    pub fn last(&self) -> &[Occupancy] {
        self.states.last().expect("trajectory is never empty")
    }

    /// Path of one compartment of one class.
    pub fn series(&self, class: usize, comp: Compartment) -> Vec<f64> {
        self.states.iter().map(|s| s[class][comp as usize]).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

/// Coupling fields `theta(t_j)` and `eta(t_j)` on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatePath {
    pub theta: Vec<f64>,
    pub eta: Vec<f64>,
}

impl AggregatePath {
    pub fn from_trajectory(traj: &MeanFieldTrajectory, net: &NetworkModel) -> Self {
        AggregatePath {
            theta: traj.states.iter().map(|s| link_infection_probability(s, net)).collect(),
            eta: traj.states.iter().map(|s| link_susceptible_probability(s, net)).collect(),
        }
    }

    /// Aggregates halfway between grid points `j` and `j + 1`.
    pub fn midpoint(&self, j: usize) -> (f64, f64) {
        (
            0.5 * (self.theta[j] + self.theta[j + 1]),
            0.5 * (self.eta[j] + self.eta[j + 1]),
        )
    }

    pub fn last_theta(&self) -> f64 {
        *self.theta.last().expect("aggregate path is never empty")
    }
}

/// Forward sweep from the all-susceptible initial condition.
pub fn integrate_forward(
    policy: &ControlPolicy,
    net: &NetworkModel,
    grid: &TimeGrid,
) -> Result<(MeanFieldTrajectory, AggregatePath)> {
    let initial = vec![ALL_SUSCEPTIBLE; net.len()];
    integrate_forward_from(policy, net, grid, &initial)
}

/// Forward sweep from an arbitrary initial occupancy (chained intervals).
pub fn integrate_forward_from(
    policy: &ControlPolicy,
    net: &NetworkModel,
    grid: &TimeGrid,
    initial: &[Occupancy],
) -> Result<(MeanFieldTrajectory, AggregatePath)> {
    let (traj, _) = run_forward(policy, net, grid, initial, None)?;
    let agg = AggregatePath::from_trajectory(&traj, net);
    Ok((traj, agg))
}

/// A single tagged player of class `class` playing its own acceptance path
/// against the population.
pub struct ReferencePlayer<'a> {
    pub class: usize,
    pub alpha: &'a [f64],
}

/// Integrates the population together with one reference player. The
/// player is advanced with the same stage aggregates and the same
/// right-hand side as the population, so playing the class policy
/// reproduces the class occupancy exactly.
pub fn integrate_with_reference(
    policy: &ControlPolicy,
    net: &NetworkModel,
    grid: &TimeGrid,
    player: ReferencePlayer<'_>,
) -> Result<(MeanFieldTrajectory, Vec<Occupancy>)> {
    let initial = vec![ALL_SUSCEPTIBLE; net.len()];
    let (traj, reference) = run_forward(policy, net, grid, &initial, Some(player))?;
    Ok((traj, reference.expect("reference requested")))
}

fn check_policy(policy: &ControlPolicy, net: &NetworkModel, grid: &TimeGrid) -> Result<()> {
    if policy.grid != *grid {
        return Err(Error::GridMismatch(format!(
            "policy grid {:?} vs integration grid {:?}",
            policy.grid, grid
        )));
    }
    if policy.alpha.len() != net.len() {
        return Err(Error::GridMismatch(format!(
            "policy has {} classes, network has {}",
            policy.alpha.len(),
            net.len()
        )));
    }
    Ok(())
}

fn add_scaled(base: &[Occupancy], dir: &[Occupancy], h: f64, out: &mut [Occupancy]) {
    for ((o, b), d) in out.iter_mut().zip(base).zip(dir) {
        for q in 0..4 {
            o[q] = b[q] + h * d[q];
        }
    }
}

fn population_rhs(net: &NetworkModel, state: &[Occupancy], alphas: &[f64], out: &mut [Occupancy]) -> f64 {
    let theta = link_infection_probability(state, net);
    for (((o, c), m), a) in out.iter_mut().zip(&net.classes).zip(state).zip(alphas) {
        *o = kolmogorov_rhs(c, m, *a, theta);
    }
    theta
}

fn settle(m: &mut Occupancy, time: f64, what: &str) -> Result<()> {
    for v in m.iter_mut() {
        if !v.is_finite() || *v < -CLAMP_SLACK || *v > 1.0 + CLAMP_SLACK {
            return Err(Error::IntegrationDiverged {
                time,
                detail: format!("{what} occupancy {v} left [0, 1]; reduce dt"),
            });
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(())
}

fn run_forward(
    policy: &ControlPolicy,
    net: &NetworkModel,
    grid: &TimeGrid,
    initial: &[Occupancy],
    player: Option<ReferencePlayer<'_>>,
) -> Result<(MeanFieldTrajectory, Option<Vec<Occupancy>>)> {
    check_policy(policy, net, grid)?;
    if initial.len() != net.len() {
        return Err(Error::GridMismatch(format!(
            "initial state has {} classes, network has {}",
            initial.len(),
            net.len()
        )));
    }
    let n = net.len();
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.n_points());
    states.push(initial.to_vec());

    let mut reference = player.as_ref().map(|p| {
        let mut path = Vec::with_capacity(grid.n_points());
        path.push(initial[p.class]);
        path
    });

    let mut k: [Vec<Occupancy>; 4] = std::array::from_fn(|_| vec![[0.0; 4]; n]);
    let mut stage = vec![[0.0; 4]; n];
    let mut a_start = vec![0.0; n];
    let mut a_mid = vec![0.0; n];
    let mut a_end = vec![0.0; n];

    for j in 0..grid.n_steps {
        for (c, path) in policy.alpha.iter().enumerate() {
            a_start[c] = path[j];
            a_end[c] = path[j + 1];
            a_mid[c] = 0.5 * (path[j] + path[j + 1]);
        }
        let m = &states[j];
        let th1 = population_rhs(net, m, &a_start, &mut k[0]);
        add_scaled(m, &k[0], 0.5 * dt, &mut stage);
        let th2 = population_rhs(net, &stage, &a_mid, &mut k[1]);
        add_scaled(m, &k[1], 0.5 * dt, &mut stage);
        let th3 = population_rhs(net, &stage, &a_mid, &mut k[2]);
        add_scaled(m, &k[2], dt, &mut stage);
        let th4 = population_rhs(net, &stage, &a_end, &mut k[3]);

        let time = grid.t(j + 1);
        let mut next = vec![[0.0; 4]; n];
        for c in 0..n {
            for q in 0..4 {
                next[c][q] = m[c][q]
                    + dt / 6.0 * (k[0][c][q] + 2.0 * k[1][c][q] + 2.0 * k[2][c][q] + k[3][c][q]);
            }
            settle(&mut next[c], time, "population")?;
        }

        if let (Some(p), Some(path)) = (player.as_ref(), reference.as_mut()) {
            let class = &net.classes[p.class];
            let (a0, a1) = (p.alpha[j], p.alpha[j + 1]);
            let am = 0.5 * (a0 + a1);
            let x = path[j];
            let f = |y: &Occupancy, a: f64, th: f64| kolmogorov_rhs(class, y, a, th);
            let step = |y: &Occupancy, d: &Occupancy, h: f64| -> Occupancy {
                std::array::from_fn(|q| y[q] + h * d[q])
            };
            let x1 = f(&x, a0, th1);
            let x2 = f(&step(&x, &x1, 0.5 * dt), am, th2);
            let x3 = f(&step(&x, &x2, 0.5 * dt), am, th3);
            let x4 = f(&step(&x, &x3, dt), a1, th4);
            let mut xn: Occupancy =
                std::array::from_fn(|q| x[q] + dt / 6.0 * (x1[q] + 2.0 * x2[q] + 2.0 * x3[q] + x4[q]));
            settle(&mut xn, time, "reference player")?;
            path.push(xn);
        }

        states.push(next);
    }

    Ok((MeanFieldTrajectory { grid: *grid, states }, reference))
}
