//! Policy evaluation: the truncated Markov chain a policy induces, its
//! stationary distribution, and a seeded slot-level simulator.
//!
//! The truncated-chain value only counts ages up to `m`, so for policies that
//! let ages escape the grid it underestimates the true average age. The
//! simulator tracks untruncated ages and reports how often they leave the
//! grid, so the two numbers can be compared.

use nalgebra::{DMatrix, DVector};
use petgraph::algo::kosaraju_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{Action, OutageTable, SystemConfig, Weights};
use crate::error::{Error, Result};
use crate::mdp::{reward, states, successors, AoIState, Row};
use crate::policies::{Policy, PolicyTable};

/// Row-stochastic sparse chain. Chains induced by a policy live on the `m × m`
/// age grid and remember `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    m: Option<u32>,
    rows: Vec<Row>,
}

impl MarkovChain {
    /// A chain not tied to the age grid.
    pub fn from_rows(rows: Vec<Row>) -> Result<Self> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-12 || row.iter().any(|&(t, p)| t as usize >= n || p < 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "row {i} is not a probability distribution"
                )));
            }
        }
        Ok(MarkovChain { m: None, rows })
    }

    pub fn m(&self) -> Option<u32> {
        self.m
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    /// `θ P` for a row vector `θ`.
    fn left_multiply(&self, theta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (row, &mass) in self.rows.iter().zip(theta) {
            for &(t, p) in row {
                out[t as usize] += mass * p;
            }
        }
    }
}

/// Chain induced by following `p`. Age increments that would leave the grid
/// are folded onto the successor with the overflowing age clamped to `m`, so
/// which client was served is preserved.
pub fn policy_chain(p: &PolicyTable, outage: &OutageTable) -> Result<MarkovChain> {
    let m = p.m();
    let rows = states(m)
        .map(|s| {
            let a = p.get(s);
            let entry = outage.get(a).ok_or_else(|| {
                Error::InvalidConfig(format!("no outage probabilities for action {a}"))
            })?;
            Ok(successors(s, entry, m)
                .into_iter()
                .map(|(t, q)| (t.index(m) as u32, q))
                .collect())
        })
        .collect::<Result<Vec<Row>>>()?;
    Ok(MarkovChain { m: Some(m), rows })
}

/// Stationary distribution `θ` with `θ P = θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub m: Option<u32>,
    pub theta: Vec<f64>,
    /// `max |θ P − θ|`.
    pub residual: f64,
}

const DIRECT_SOLVE_MAX_STATES: usize = 1024;
const POWER_TARGET: f64 = 1e-15;
const POWER_MAX_ITER: usize = 5_000_000;
const RESIDUAL_LIMIT: f64 = 1e-10;

/// Stationary distribution of an irreducible-on-its-recurrent-class,
/// aperiodic chain.
///
/// Chains with more than one recurrent class or a periodic recurrent class are
/// rejected with [`Error::SteadyState`]. Small chains are solved directly,
/// larger ones by lazy power iteration.
pub fn steady_state(chain: &MarkovChain) -> Result<SteadyState> {
    let n = chain.n_states();
    if n == 0 {
        return Err(Error::SteadyState("empty chain".into()));
    }
    check_single_aperiodic_class(chain)?;

    let mut theta = if n <= DIRECT_SOLVE_MAX_STATES {
        direct_solve(chain)?
    } else {
        power_iterate(chain)
    };
    for x in theta.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let total: f64 = theta.iter().sum();
    theta.iter_mut().for_each(|x| *x /= total);

    let mut next = vec![0.0; n];
    chain.left_multiply(&theta, &mut next);
    let residual = next
        .iter()
        .zip(&theta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if residual > RESIDUAL_LIMIT {
        return Err(Error::SteadyState(format!(
            "stationary solve stalled at residual {residual:e}"
        )));
    }
    Ok(SteadyState {
        m: chain.m,
        theta,
        residual,
    })
}

fn check_single_aperiodic_class(chain: &MarkovChain) -> Result<()> {
    let n = chain.n_states();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, n * 4);
    for _ in 0..n {
        graph.add_node(());
    }
    for (s, row) in chain.rows.iter().enumerate() {
        for &(t, p) in row {
            if p > 0.0 {
                graph.add_edge(NodeIndex::new(s), NodeIndex::new(t as usize), ());
            }
        }
    }
    let sccs = kosaraju_scc(&graph);
    let mut component = vec![0usize; n];
    for (c, members) in sccs.iter().enumerate() {
        for v in members {
            component[v.index()] = c;
        }
    }
    let closed: Vec<usize> = (0..sccs.len())
        .filter(|&c| {
            sccs[c]
                .iter()
                .all(|v| graph.neighbors(*v).all(|w| component[w.index()] == c))
        })
        .collect();
    if closed.len() != 1 {
        return Err(Error::SteadyState(format!(
            "chain has {} recurrent classes; the stationary distribution is not unique",
            closed.len()
        )));
    }

    // Period of the recurrent class: gcd of level differences along its edges.
    let class = closed[0];
    let root = sccs[class][0];
    let mut level = vec![usize::MAX; n];
    level[root.index()] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    let mut period = 0usize;
    while let Some(u) = queue.pop_front() {
        let next = level[u.index()] + 1;
        for w in graph.neighbors(u) {
            let lw = &mut level[w.index()];
            if *lw == usize::MAX {
                *lw = next;
                queue.push_back(w);
            } else {
                period = gcd(period, next.abs_diff(*lw));
            }
        }
    }
    if period > 1 {
        return Err(Error::SteadyState(format!(
            "recurrent class is periodic with period {period}"
        )));
    }
    Ok(())
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn direct_solve(chain: &MarkovChain) -> Result<Vec<f64>> {
    let n = chain.n_states();
    // (P^T - I) θ = 0 with the last equation replaced by Σ θ = 1.
    let mut a = DMatrix::<f64>::zeros(n, n);
    for (s, row) in chain.rows.iter().enumerate() {
        a[(s, s)] -= 1.0;
        for &(t, p) in row {
            a[(t as usize, s)] += p;
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    a.lu()
        .solve(&b)
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::SteadyState("singular stationary system".into()))
}

fn power_iterate(chain: &MarkovChain) -> Vec<f64> {
    let n = chain.n_states();
    let mut theta = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for it in 0..POWER_MAX_ITER {
        chain.left_multiply(&theta, &mut next);
        let mut delta = 0.0f64;
        for (x, y) in next.iter_mut().zip(&theta) {
            // Lazy step: halves near-periodic modes.
            *x = 0.5 * (*x + y);
            delta = delta.max((*x - y).abs());
        }
        std::mem::swap(&mut theta, &mut next);
        if it % 64 == 0 {
            let total: f64 = theta.iter().sum();
            theta.iter_mut().for_each(|x| *x /= total);
        }
        if delta < POWER_TARGET {
            break;
        }
    }
    theta
}

/// `Σ θ_s (w1 Δ1 + w2 Δ2)` over the grid.
///
/// # Panics
///
/// If `theta` does not come from a chain on the age grid.
pub fn weighted_aoi_analytic(theta: &SteadyState, weights: Weights) -> f64 {
    let m = theta.m.expect("steady state of a chain on the age grid");
    theta
        .theta
        .iter()
        .enumerate()
        .map(|(i, p)| p * reward(AoIState::from_index(i, m), weights))
        .sum()
}

/// Analytic weighted AoI of `p`: chain, stationary solve, expectation.
pub fn analytic_aoi(p: &PolicyTable, outage: &OutageTable, weights: Weights) -> Result<f64> {
    let chain = policy_chain(p, outage)?;
    Ok(weighted_aoi_analytic(&steady_state(&chain)?, weights))
}

/// Summary of one simulation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub horizon: u64,
    pub seed: u64,
    /// Time average of `w1 Δ1(t) + w2 Δ2(t)`.
    pub avg_weighted_aoi: f64,
    pub per_client_avg_aoi: [f64; 2],
    /// Successful deliveries to clients 1 and 2.
    pub success_counts: [u64; 2],
    /// Slots spent in each action, for every action of the outage table.
    pub action_histogram: Vec<(Action, u64)>,
    /// Fraction of slots in which some age exceeded the truncation bound.
    pub escape_freq: f64,
    /// Batch-means standard error of `avg_weighted_aoi`.
    pub std_error: f64,
}

impl SimReport {
    /// `key=value` lines.
    pub fn to_record(&self) -> String {
        let hist = self
            .action_histogram
            .iter()
            .map(|(a, c)| format!("{a}:{c}"))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "horizon={}\nseed={}\navg_weighted_aoi={}\navg_aoi_1={}\navg_aoi_2={}\n\
             successes_1={}\nsuccesses_2={}\naction_histogram={}\nescape_freq={}\nstd_error={}\n",
            self.horizon,
            self.seed,
            self.avg_weighted_aoi,
            self.per_client_avg_aoi[0],
            self.per_client_avg_aoi[1],
            self.success_counts[0],
            self.success_counts[1],
            hist,
            self.escape_freq,
            self.std_error,
        )
    }
}

const SIM_BATCHES: u64 = 50;

/// Simulates `horizon` slots starting from ages `(1, 1)`.
///
/// Each slot charges the current weighted age, asks `policy` for an action
/// (states beyond the grid are clamped for the lookup), and delivers to each
/// served client independently with probability one minus its outage
/// probability. Deterministic in `(policy, outage, cfg, horizon, seed)`.
pub fn simulate<P: Policy + ?Sized>(
    policy: &P,
    outage: &OutageTable,
    cfg: &SystemConfig,
    horizon: u64,
    seed: u64,
) -> Result<SimReport> {
    if horizon == 0 {
        return Err(Error::InvalidConfig(
            "simulation horizon must be at least 1".into(),
        ));
    }
    let m = cfg.m_trunc;
    let weights = cfg.weights();
    let n = outage.n_levels() as usize;
    let mut fail = vec![None; n + 1];
    for e in outage.entries() {
        fail[e.action.0 as usize] = Some(e.failure_probs());
    }
    let mut counts = vec![0u64; n + 1];

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut d1, mut d2) = (1u64, 1u64);
    let (mut sum1, mut sum2) = (0u64, 0u64);
    let mut successes = [0u64; 2];
    let mut escapes = 0u64;

    let batches = SIM_BATCHES.min(horizon);
    let batch_len = horizon / batches;
    let mut batch_means = Vec::with_capacity(batches as usize);
    let (mut batch1, mut batch2, mut batch_slots) = (0u64, 0u64, 0u64);

    for _ in 0..horizon {
        let lookup = AoIState::new(d1.min(u64::from(m)) as u32, d2.min(u64::from(m)) as u32);
        let a = policy.action(lookup);
        let (f1, f2) = fail.get(a.0 as usize).copied().flatten().ok_or_else(|| {
            Error::InvalidConfig(format!(
                "policy chose action {a}, which has no outage entry"
            ))
        })?;
        counts[a.0 as usize] += 1;

        sum1 += d1;
        sum2 += d2;
        batch1 += d1;
        batch2 += d2;
        batch_slots += 1;
        if d1 > u64::from(m) || d2 > u64::from(m) {
            escapes += 1;
        }

        let ok1 = rng.random::<f64>() >= f1;
        let ok2 = rng.random::<f64>() >= f2;
        successes[0] += u64::from(ok1);
        successes[1] += u64::from(ok2);
        d1 = if ok1 { 1 } else { d1 + 1 };
        d2 = if ok2 { 1 } else { d2 + 1 };

        if batch_slots == batch_len && (batch_means.len() as u64) < batches - 1 {
            let t = batch_slots as f64;
            batch_means.push(weights.w1 * batch1 as f64 / t + weights.w2 * batch2 as f64 / t);
            (batch1, batch2, batch_slots) = (0, 0, 0);
        }
    }
    if batch_slots > 0 {
        let t = batch_slots as f64;
        batch_means.push(weights.w1 * batch1 as f64 / t + weights.w2 * batch2 as f64 / t);
    }

    let t = horizon as f64;
    let avg = [sum1 as f64 / t, sum2 as f64 / t];
    let std_error = if batch_means.len() > 1 {
        let b = batch_means.len() as f64;
        let mean = batch_means.iter().sum::<f64>() / b;
        let var = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (b - 1.0);
        (var / b).sqrt()
    } else {
        f64::NAN
    };
    Ok(SimReport {
        horizon,
        seed,
        avg_weighted_aoi: weights.w1 * avg[0] + weights.w2 * avg[1],
        per_client_avg_aoi: avg,
        success_counts: successes,
        action_histogram: outage
            .entries()
            .iter()
            .map(|e| (e.action, counts[e.action.0 as usize]))
            .collect(),
        escape_freq: escapes as f64 / t,
        std_error,
    })
}
