//! Finite-population stochastic simulation under a fixed policy and the
//! empirical deviation from the mean-field limit.
//!
//! Every background node of class `(i, k)` plays the supplied acceptance
//! path. Time advances on the solver grid; over `[t, t + dt)` each node
//! leaves its state with probability `rate * dt`, with rates evaluated at
//! the empirical link infection probability of the current counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{clean_probability, infection_pressure, integrate_forward, MeanFieldTrajectory, E, I, L, S};
use crate::error::{Error, Result};
use crate::hjb::ControlPolicy;
use crate::model::{NetworkModel, ScenarioConfig, TimeGrid};

/// `dt * max exit rate` must stay below this.
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

/// Per-class node counts `(n_S, n_E, n_L, n_I)`.
pub type Counts = [u32; 4];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopulationCounts {
    pub counts: Vec<Counts>,
    pub totals: Vec<u32>,
}

impl PopulationCounts {
    pub fn all_susceptible(totals: &[u32]) -> Self {
        PopulationCounts {
            counts: totals.iter().map(|&n| [n, 0, 0, 0]).collect(),
            totals: totals.to_vec(),
        }
    }

    pub fn is_conserved(&self) -> bool {
        self.counts
            .iter()
            .zip(&self.totals)
            .all(|(c, &n)| c.iter().sum::<u32>() == n)
    }
}

/// Largest-remainder apportionment of `n` nodes by class weight.
pub fn allocate_population(net: &NetworkModel, n: u32) -> Result<Vec<u32>> {
    if (n as usize) < net.len() {
        return Err(Error::InvalidPopulation(format!(
            "N = {n} is smaller than the number of classes ({})",
            net.len()
        )));
    }
    let quotas: Vec<f64> = net.weights.iter().map(|w| w * f64::from(n)).collect();
    let mut alloc: Vec<u32> = quotas.iter().map(|q| q.floor() as u32).collect();
    let assigned: u32 = alloc.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    // stable sort: ties keep class order
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra)
    });
    for &c in order.iter().take(n.saturating_sub(assigned) as usize) {
        alloc[c] += 1;
    }
    if let Some(c) = alloc.iter().position(|&x| x == 0) {
        return Err(Error::InvalidPopulation(format!(
            "class {c} (k={}) receives no nodes for N = {n}",
            net.classes[c].degree
        )));
    }
    Ok(alloc)
}

/// Degree-weighted empirical link probabilities `(theta_N, eta_N)`:
/// `theta_N = sum k n_I / sum k N_ik`.
pub fn empirical_aggregates(counts: &PopulationCounts, net: &NetworkModel) -> (f64, f64) {
    let mut links = 0.0;
    let mut infected = 0.0;
    let mut susceptible = 0.0;
    for ((c, &total), class) in counts.counts.iter().zip(&counts.totals).zip(&net.classes) {
        let k = class.k();
        links += k * f64::from(total);
        infected += k * f64::from(c[I]);
        susceptible += k * f64::from(c[S]);
    }
    (infected / links, susceptible / links)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FiniteSimResult {
    pub grid: TimeGrid,
    pub seed: u64,
    pub totals: Vec<u32>,
    /// `counts[r][j][c]`: replica `r`, grid point `j`, class `c`.
    pub counts: Vec<Vec<Vec<Counts>>>,
    /// Replica-averaged `theta_N(t_j)`.
    pub theta: Vec<f64>,
    /// Replica-averaged `eta_N(t_j)`.
    pub eta: Vec<f64>,
}

impl FiniteSimResult {
    pub fn replicas(&self) -> usize {
        self.counts.len()
    }

    pub fn population(&self) -> u32 {
        self.totals.iter().sum()
    }
}

/// Upper bound on the per-step exit probability of any node.
pub fn max_step_probability(net: &NetworkModel, dt: f64) -> f64 {
    net.classes
        .iter()
        .map(|c| (c.lambda + c.k() + 1.0).max(c.processing_rate()).max(c.nu))
        .fold(0.0, f64::max)
        * dt
}

/// Runs `replicas` independent realizations of an `n`-node population.
/// Replica `r` draws from its own ChaCha stream `(seed, r)`, so results do
/// not depend on scheduling.
pub fn simulate(
    config: &ScenarioConfig,
    policy: &ControlPolicy,
    n: u32,
    replicas: usize,
    seed: u64,
) -> Result<FiniteSimResult> {
    let net = &config.network;
    let grid = config.grid;
    if policy.grid != grid || policy.alpha.len() != net.len() {
        return Err(Error::GridMismatch("policy does not match the scenario grid".into()));
    }
    let product = max_step_probability(net, grid.dt());
    if product >= MAX_STEP_PROBABILITY {
        return Err(Error::StepTooLarge { product });
    }
    let totals = allocate_population(net, n)?;

    let runs: Vec<(Vec<Vec<Counts>>, Vec<(f64, f64)>)> = (0..replicas)
        .into_par_iter()
        .map(|r| run_replica(net, policy, &grid, &totals, seed, r as u64))
        .collect();

    let np = grid.n_points();
    let mut theta = vec![0.0; np];
    let mut eta = vec![0.0; np];
    for (_, agg) in &runs {
        for (j, (th, et)) in agg.iter().enumerate() {
            theta[j] += th;
            eta[j] += et;
        }
    }
    let scale = 1.0 / replicas.max(1) as f64;
    theta.iter_mut().chain(eta.iter_mut()).for_each(|v| *v *= scale);

    Ok(FiniteSimResult {
        grid,
        seed,
        totals,
        counts: runs.into_iter().map(|(c, _)| c).collect(),
        theta,
        eta,
    })
}

fn run_replica(
    net: &NetworkModel,
    policy: &ControlPolicy,
    grid: &TimeGrid,
    totals: &[u32],
    seed: u64,
    replica: u64,
) -> (Vec<Vec<Counts>>, Vec<(f64, f64)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    let dt = grid.dt();

    let mut pop = PopulationCounts::all_susceptible(totals);
    let mut path = Vec::with_capacity(grid.n_points());
    let mut aggregates = Vec::with_capacity(grid.n_points());
    path.push(pop.counts.clone());
    aggregates.push(empirical_aggregates(&pop, net));

    for j in 0..grid.n_steps {
        let (theta, _) = aggregates[j];
        let mut next = pop.counts.clone();
        for (c, class) in net.classes.iter().enumerate() {
            let alpha = policy.alpha[c][j];
            let r = infection_pressure(class, theta);
            let l = clean_probability(class, theta);
            let leave = class.processing_rate();
            let cur = pop.counts[c];

            // S: accept -> I, doubt misinformation -> E, doubt true info -> L
            let [to_i, to_e, to_l] = draw_branches(
                &mut rng,
                cur[S],
                [alpha * r * dt, (1.0 - alpha) * r * dt, (1.0 - alpha) * l * dt],
            );
            // E: accept -> I, reject -> S
            let [e_to_i, e_to_s, _] = draw_branches(
                &mut rng,
                cur[E],
                [leave * class.beta_e * dt, leave * class.gamma_e * dt, 0.0],
            );
            let [l_to_s, _, _] = draw_branches(
                &mut rng,
                cur[L],
                [leave * (class.beta_l + class.gamma_l) * dt, 0.0, 0.0],
            );
            let [i_to_s, _, _] = draw_branches(&mut rng, cur[I], [class.nu * dt, 0.0, 0.0]);

            next[c] = [
                cur[S] - to_i - to_e - to_l + e_to_s + l_to_s + i_to_s,
                cur[E] + to_e - e_to_i - e_to_s,
                cur[L] + to_l - l_to_s,
                cur[I] + to_i + e_to_i - i_to_s,
            ];
        }
        pop.counts = next;
        assert!(pop.is_conserved(), "node counts not conserved at step {j}");
        aggregates.push(empirical_aggregates(&pop, net));
        path.push(pop.counts.clone());
    }
    (path, aggregates)
}

/// One uniform per node, mapped onto the exit branches in order with the
/// remaining mass meaning "stay".
fn draw_branches<R: Rng>(rng: &mut R, nodes: u32, probs: [f64; 3]) -> [u32; 3] {
    let c1 = probs[0];
    let c2 = c1 + probs[1];
    let c3 = c2 + probs[2];
    let mut out = [0u32; 3];
    if c3 <= 0.0 {
        return out;
    }
    for _ in 0..nodes {
        let u: f64 = rng.random();
        if u < c1 {
            out[0] += 1;
        } else if u < c2 {
            out[1] += 1;
        } else if u < c3 {
            out[2] += 1;
        }
    }
    out
}

/// Replica average of `||n_ik / N_ik - m_ik||_inf^2`, summed over classes,
/// at every grid point.
pub fn mean_field_deviation(result: &FiniteSimResult, mf: &MeanFieldTrajectory) -> Result<Vec<f64>> {
    if result.grid != mf.grid {
        return Err(Error::GridMismatch(format!(
            "simulation grid {:?} vs mean-field grid {:?}",
            result.grid, mf.grid
        )));
    }
    if result.totals.len() != mf.num_classes() {
        return Err(Error::GridMismatch(format!(
            "simulation has {} classes, mean field has {}",
            result.totals.len(),
            mf.num_classes()
        )));
    }
    let np = result.grid.n_points();
    let mut dev = vec![0.0; np];
    for replica in &result.counts {
        for (j, counts) in replica.iter().enumerate() {
            for (c, (n, &total)) in counts.iter().zip(&result.totals).enumerate() {
                let m = mf.at(j, c);
                let sup = (0..4)
                    .map(|q| (f64::from(n[q]) / f64::from(total) - m[q]).abs())
                    .fold(0.0, f64::max);
                dev[j] += sup * sup;
            }
        }
    }
    let scale = 1.0 / result.replicas().max(1) as f64;
    dev.iter_mut().for_each(|v| *v *= scale);
    Ok(dev)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: u32,
    /// `sup_t V_N(t)`.
    pub sup_deviation: f64,
    /// `sup_t |theta_N(t) - theta(t)|`.
    pub sup_theta_gap: f64,
    /// Mean-field `theta(T)`.
    pub theta_final: f64,
}

/// Deviation statistics for each population size, ordered by `n`.
pub fn convergence_study(
    config: &ScenarioConfig,
    policy: &ControlPolicy,
    n_list: &[u32],
    replicas: usize,
    seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    let (mf, agg) = integrate_forward(policy, &config.network, &config.grid)?;
    let mut sizes = n_list.to_vec();
    sizes.sort_unstable();
    sizes
        .into_iter()
        .map(|n| {
            let sim = simulate(config, policy, n, replicas, seed)?;
            let dev = mean_field_deviation(&sim, &mf)?;
            let gap = sim
                .theta
                .iter()
                .zip(&agg.theta)
                .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs()));
            Ok(ConvergenceRow {
                n,
                sup_deviation: dev.iter().copied().fold(0.0, f64::max),
                sup_theta_gap: gap,
                theta_final: agg.last_theta(),
            })
        })
        .collect()
}
