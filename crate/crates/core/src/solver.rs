//! Average-cost solution of the truncated MDP.
//!
//! [`rvi_solve`] runs relative value iteration on the optimality equation
//! `J + h(s) = min_a { r(s) + E[h(s') | s, a] }`, normalizing `h` at a reference
//! state after every sweep. Updates are synchronous, so the iterate sequence
//! does not depend on evaluation order.
//!
//! Plain RVI need not converge on periodic chains, and the high-SNR OMA
//! policies are close to period two (the clients take turns). Each sweep is
//! therefore damped, `V ← V + λ (T V − V)`, which is value iteration on the
//! aperiodic transform `λ P + (1 − λ) I` of the kernel with cost `λ r`. The
//! transform leaves `h` and the optimal policies unchanged and scales the
//! average cost by `λ`; the reported `j_star` is already rescaled.
//!
//! [`enumerate_policies_oracle`] evaluates every stationary deterministic
//! policy exactly on tiny instances and is used to cross-check the solver.

use rayon::prelude::*;

use crate::channel::Weights;
use crate::error::{Error, Result};
use crate::mdp::{reward, AoIState, TransitionKernel};
use crate::policies::{PolicyKind, PolicyTable};

#[derive(Debug, Clone, PartialEq)]
pub struct RviOptions {
    /// Stop once `span(T V − V)` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// State whose differential value is pinned to zero.
    pub reference: AoIState,
    /// Damping factor `λ ∈ (0, 1]`; `1.0` is undamped RVI.
    pub aperiodicity: f64,
}

impl Default for RviOptions {
    fn default() -> Self {
        RviOptions {
            tol: 1e-9,
            max_iter: 1_000_000,
            reference: AoIState::FRESH,
            aperiodicity: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    /// Optimal average weighted age per slot.
    pub j_star: f64,
    /// Differential values indexed like the kernel's states; zero at the
    /// reference state.
    pub h: Vec<f64>,
    pub policy: PolicyTable,
    pub iterations: usize,
    /// `span(T V − V)` at the last sweep.
    pub final_span: f64,
    pub converged: bool,
}

impl SolverResult {
    /// Turns a non-converged result into [`Error::NotConverged`].
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                span: self.final_span,
            })
        }
    }
}

/// `max(v) − min(v)`; zero for an empty slice.
pub fn span(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    hi - lo
}

fn expected(kernel: &TransitionKernel, state: usize, pos: usize, v: &[f64]) -> f64 {
    kernel
        .row(state, pos)
        .iter()
        .map(|&(t, p)| p * v[t as usize])
        .sum()
}

/// Action minimizing `E[h(s') | s, a]` at every state. Ties go to the smallest
/// action.
pub fn greedy_policy(kernel: &TransitionKernel, h: &[f64]) -> PolicyTable {
    let actions = kernel.actions();
    let chosen = (0..kernel.n_states())
        .map(|s| {
            let mut best = 0;
            let mut best_q = expected(kernel, s, 0, h);
            for pos in 1..actions.len() {
                let q = expected(kernel, s, pos, h);
                if q < best_q {
                    best_q = q;
                    best = pos;
                }
            }
            actions[best]
        })
        .collect();
    PolicyTable::from_actions(kernel.m(), PolicyKind::Custom, chosen).expect("one action per state")
}

/// Relative value iteration on `kernel`.
///
/// A run that exhausts `max_iter` is returned with `converged == false` and
/// the last iterate; see [`SolverResult::require_converged`].
pub fn rvi_solve(
    kernel: &TransitionKernel,
    weights: Weights,
    opts: &RviOptions,
) -> Result<SolverResult> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if !(opts.aperiodicity > 0.0 && opts.aperiodicity <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "aperiodicity factor must lie in (0, 1], got {}",
            opts.aperiodicity
        )));
    }
    let m = kernel.m();
    let r_ref = opts.reference;
    if r_ref.delta1 < 1 || r_ref.delta2 < 1 || r_ref.delta1 > m || r_ref.delta2 > m {
        return Err(Error::InvalidConfig(format!(
            "reference state {r_ref} is outside the grid"
        )));
    }
    let reference = r_ref.index(m);
    let n = kernel.n_states();
    let n_actions = kernel.actions().len();
    let lambda = opts.aperiodicity;
    let cost: Vec<f64> = (0..n)
        .map(|i| reward(AoIState::from_index(i, m), weights))
        .collect();

    let mut v = vec![0.0; n];
    let mut tv = vec![0.0; n];
    let mut iterations = 0;
    let mut final_span = f64::INFINITY;
    let mut j_star = f64::NAN;
    let mut converged = false;

    while iterations < opts.max_iter {
        iterations += 1;
        for (s, out) in tv.iter_mut().enumerate() {
            let mut best = f64::INFINITY;
            for pos in 0..n_actions {
                best = best.min(expected(kernel, s, pos, &v));
            }
            *out = cost[s] + best;
        }
        let (lo, hi) =
            tv.iter()
                .zip(&v)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (t, x)| {
                    let d = t - x;
                    (lo.min(d), hi.max(d))
                });
        final_span = hi - lo;
        j_star = 0.5 * (lo + hi);

        for (x, t) in v.iter_mut().zip(&tv) {
            *x += lambda * (t - *x);
        }
        let offset = v[reference];
        for x in v.iter_mut() {
            *x -= offset;
        }
        if final_span < opts.tol {
            converged = true;
            break;
        }
    }

    let policy = greedy_policy(kernel, &v);
    Ok(SolverResult {
        j_star,
        h: v,
        policy,
        iterations,
        final_span,
        converged,
    })
}

/// Exhaustive-search result of [`enumerate_policies_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub best_cost: f64,
    pub best_policy: PolicyTable,
    pub policies_evaluated: u64,
}

const ORACLE_MAX_M: u32 = 3;
const ORACLE_MAX_ACTIONS: usize = 6;
const ORACLE_CHUNK: u64 = 4096;

/// Evaluates every stationary deterministic policy on `kernel` by solving for
/// the stationary distribution of its induced chain, and returns the cheapest.
///
/// Only for `m <= 3` and at most 6 actions (at most `6^9` policies). Ties go
/// to the policy whose action vector is smallest in reverse-lexicographic
/// order of action positions (the last state is the most significant).
pub fn enumerate_policies_oracle(
    kernel: &TransitionKernel,
    weights: Weights,
) -> Result<OracleResult> {
    let m = kernel.m();
    let n_actions = kernel.actions().len();
    if m > ORACLE_MAX_M || n_actions > ORACLE_MAX_ACTIONS {
        return Err(Error::InstanceTooLarge(format!(
            "policy enumeration needs m <= {ORACLE_MAX_M} and at most {ORACLE_MAX_ACTIONS} actions, \
             got m = {m} with {n_actions} actions"
        )));
    }
    let n = kernel.n_states();
    let total = (n_actions as u64).pow(n as u32);
    let cost: Vec<f64> = (0..n)
        .map(|i| reward(AoIState::from_index(i, m), weights))
        .collect();
    let chunks = total.div_ceil(ORACLE_CHUNK);

    let (best_cost, best_index) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * ORACLE_CHUNK;
            let end = (start + ORACLE_CHUNK).min(total);
            let mut best = (f64::INFINITY, u64::MAX);
            let mut digits = vec![0usize; n];
            for idx in start..end {
                decode(idx, n_actions, &mut digits);
                let c = chain_cost(kernel, &digits, &cost);
                if c < best.0 {
                    best = (c, idx);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, u64::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );

    let mut digits = vec![0usize; n];
    decode(best_index, n_actions, &mut digits);
    let actions = digits.iter().map(|&d| kernel.actions()[d]).collect();
    Ok(OracleResult {
        best_cost,
        best_policy: PolicyTable::from_actions(m, PolicyKind::Custom, actions)?,
        policies_evaluated: total,
    })
}

fn decode(mut idx: u64, base: usize, digits: &mut [usize]) {
    for d in digits.iter_mut() {
        *d = (idx % base as u64) as usize;
        idx /= base as u64;
    }
}

const MAX_ORACLE_STATES: usize = (ORACLE_MAX_M * ORACLE_MAX_M) as usize;

/// Average cost of the chain induced by choosing action position `digits[s]`
/// in state `s`.
fn chain_cost(kernel: &TransitionKernel, digits: &[usize], cost: &[f64]) -> f64 {
    let n = digits.len();
    // Rows of (P - I)^T with the last equation replaced by sum(theta) = 1.
    let mut a = [[0.0f64; MAX_ORACLE_STATES + 1]; MAX_ORACLE_STATES];
    for (s, &d) in digits.iter().enumerate() {
        a[s][s] -= 1.0;
        for &(t, p) in kernel.row(s, d) {
            a[t as usize][s] += p;
        }
    }
    for j in 0..n {
        a[n - 1][j] = 1.0;
    }
    a[n - 1][n] = 1.0;

    match solve_dense(&mut a, n) {
        Some(theta) => theta[..n].iter().zip(cost).map(|(t, c)| t * c).sum(),
        None => cesaro_cost(kernel, digits, cost),
    }
}

/// Gaussian elimination with partial pivoting on an augmented system.
fn solve_dense(
    a: &mut [[f64; MAX_ORACLE_STATES + 1]; MAX_ORACLE_STATES],
    n: usize,
) -> Option<[f64; MAX_ORACLE_STATES]> {
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..=n {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; MAX_ORACLE_STATES];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - tail) / a[row][row];
    }
    Some(x)
}

/// Long-run cost from the fresh state when the chain has several recurrent
/// classes and the stationary system is singular.
fn cesaro_cost(kernel: &TransitionKernel, digits: &[usize], cost: &[f64]) -> f64 {
    let n = digits.len();
    let mut mu = vec![0.0; n];
    mu[0] = 1.0;
    let mut next = vec![0.0; n];
    for _ in 0..100_000 {
        next.iter_mut().zip(&mu).for_each(|(x, m)| *x = 0.5 * m);
        for (s, &d) in digits.iter().enumerate() {
            for &(t, p) in kernel.row(s, d) {
                next[t as usize] += 0.5 * p * mu[s];
            }
        }
        std::mem::swap(&mut mu, &mut next);
    }
    mu.iter().zip(cost).map(|(t, c)| t * c).sum()
}

/// Looks up `h` at a state of the kernel's grid.
pub fn differential_value(h: &[f64], m: u32, s: AoIState) -> f64 {
    h[s.index(m)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{Action, ActionOutage, OutageTable, SystemConfig};
    use crate::mdp::{build_kernel, build_truncated_kernel, DEFAULT_MAX_ROWS};

    #[test]
    fn span_basics() {
        assert_eq!(span(&[2.5; 4]), 0.0);
        assert_eq!(span(&[0.0, 3.0, 7.0]), 7.0);
        let v = [0.3, -1.2, 4.4];
        let shifted: Vec<f64> = v.iter().map(|x| x + 10.0).collect();
        assert!((span(&v) - span(&shifted)).abs() < 1e-12);
        assert_eq!(span(&[]), 0.0);
    }

    #[test]
    fn always_delivering_near_client() {
        // Client 1 always succeeds; client 2 is never served and sticks at m.
        let m = 40;
        let outage = OutageTable::from_entries(
            10,
            vec![ActionOutage {
                action: Action(0),
                near: Some(0.0),
                far: None,
            }],
        )
        .unwrap();
        let kernel = build_kernel(m, &[Action(0)], &outage, DEFAULT_MAX_ROWS).unwrap();
        let res = rvi_solve(&kernel, Weights::default(), &RviOptions::default()).unwrap();
        assert!(res.converged);
        assert!((res.j_star - (0.5 + 0.5 * f64::from(m))).abs() < 1e-8);
    }

    #[test]
    fn reference_state_is_pinned() {
        let cfg = SystemConfig {
            m_trunc: 20,
            ..SystemConfig::default()
        };
        let outage = OutageTable::new(&cfg).unwrap();
        let kernel = build_truncated_kernel(&cfg, &outage).unwrap();
        let res = rvi_solve(&kernel, cfg.weights(), &RviOptions::default()).unwrap();
        assert_eq!(differential_value(&res.h, 20, AoIState::FRESH), 0.0);
        assert!(res.j_star >= 1.0);
        assert!(res.final_span < 1e-9);
        // The converged h solves the optimality equation.
        let residual: Vec<f64> = (0..kernel.n_states())
            .map(|s| {
                let best = (0..kernel.actions().len())
                    .map(|k| expected(&kernel, s, k, &res.h))
                    .fold(f64::INFINITY, f64::min);
                reward(AoIState::from_index(s, 20), cfg.weights()) + best - res.h[s] - res.j_star
            })
            .collect();
        assert!(residual.iter().all(|r| r.abs() < 1e-8));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let cfg = SystemConfig {
            m_trunc: 20,
            ..SystemConfig::default()
        };
        let outage = OutageTable::new(&cfg).unwrap();
        let kernel = build_truncated_kernel(&cfg, &outage).unwrap();
        let opts = RviOptions {
            max_iter: 3,
            ..RviOptions::default()
        };
        let res = rvi_solve(&kernel, cfg.weights(), &opts).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
        assert!(res.final_span > 0.0);
        assert!(matches!(
            res.require_converged(),
            Err(Error::NotConverged { .. })
        ));
    }

    #[test]
    fn rejects_bad_options() {
        let cfg = SystemConfig {
            m_trunc: 4,
            ..SystemConfig::default()
        };
        let outage = OutageTable::new(&cfg).unwrap();
        let kernel = build_truncated_kernel(&cfg, &outage).unwrap();
        for opts in [
            RviOptions {
                tol: 0.0,
                ..RviOptions::default()
            },
            RviOptions {
                aperiodicity: 0.0,
                ..RviOptions::default()
            },
            RviOptions {
                reference: AoIState::new(5, 1),
                ..RviOptions::default()
            },
        ] {
            assert!(rvi_solve(&kernel, cfg.weights(), &opts).is_err());
        }
    }

    #[test]
    fn oracle_guard() {
        let cfg = SystemConfig {
            m_trunc: 4,
            ..SystemConfig::default()
        };
        let outage = OutageTable::new(&cfg).unwrap();
        let kernel = build_truncated_kernel(&cfg, &outage).unwrap();
        assert!(matches!(
            enumerate_policies_oracle(&kernel, cfg.weights()),
            Err(Error::InstanceTooLarge(_))
        ));
    }

    #[test]
    fn single_policy_oracle() {
        let cfg = SystemConfig {
            m_trunc: 3,
            ..SystemConfig::default()
        };
        let outage = OutageTable::new(&cfg).unwrap();
        let kernel = build_kernel(3, &[Action(8)], &outage, DEFAULT_MAX_ROWS).unwrap();
        let res = enumerate_policies_oracle(&kernel, cfg.weights()).unwrap();
        assert_eq!(res.policies_evaluated, 1);
        let rvi = rvi_solve(&kernel, cfg.weights(), &RviOptions::default()).unwrap();
        assert!((res.best_cost - rvi.j_star).abs() < 1e-9);
    }
}
