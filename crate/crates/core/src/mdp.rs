//! The AoI Markov decision process and its truncation.
//!
//! A state is the pair of client ages. Per slot the reward `w1 Δ1 + w2 Δ2` is
//! charged on the current state, then each served client independently either
//! receives its update (age resets to 1) or not (age grows by one). Ages are
//! clamped at the truncation bound `m` so the state space is the finite
//! `m × m` grid.

use std::io::Write;

use arrayvec::ArrayVec;

use crate::channel::{Action, ActionOutage, OutageTable, SystemConfig, Weights};
use crate::error::{Error, Result};

/// Instantaneous ages `(Δ1, Δ2)` in slots, both at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AoIState {
    pub delta1: u32,
    pub delta2: u32,
}

impl AoIState {
    pub const FRESH: AoIState = AoIState {
        delta1: 1,
        delta2: 1,
    };

    pub fn new(delta1: u32, delta2: u32) -> Self {
        debug_assert!(delta1 >= 1 && delta2 >= 1);
        AoIState { delta1, delta2 }
    }

    /// Row-major index on the `m × m` grid (Δ1 major).
    pub fn index(self, m: u32) -> usize {
        debug_assert!(self.delta1 <= m && self.delta2 <= m);
        (self.delta1 as usize - 1) * m as usize + (self.delta2 as usize - 1)
    }

    pub fn from_index(index: usize, m: u32) -> Self {
        let m = m as usize;
        AoIState {
            delta1: (index / m + 1) as u32,
            delta2: (index % m + 1) as u32,
        }
    }

    pub fn clamped(self, m: u32) -> Self {
        AoIState {
            delta1: self.delta1.min(m),
            delta2: self.delta2.min(m),
        }
    }
}

impl std::fmt::Display for AoIState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.delta1, self.delta2)
    }
}

/// All states of the `m × m` grid in index order.
pub fn states(m: u32) -> impl Iterator<Item = AoIState> {
    (1..=m).flat_map(move |d1| (1..=m).map(move |d2| AoIState::new(d1, d2)))
}

/// One-stage cost `w1 Δ1 + w2 Δ2`; the action does not enter.
pub fn reward(s: AoIState, weights: Weights) -> f64 {
    weights.w1 * f64::from(s.delta1) + weights.w2 * f64::from(s.delta2)
}

pub type Successors = ArrayVec<(AoIState, f64), 4>;

/// Next-state distribution from `s` under the action described by `outage`,
/// with ages clamped at `m`.
///
/// Outcomes are listed in the fixed order: both delivered, only the near
/// client, only the far client, neither. Zero-mass outcomes are dropped and
/// outcomes that land on the same state are merged.
pub fn successors(s: AoIState, outage: &ActionOutage, m: u32) -> Successors {
    let (f1, f2) = outage.failure_probs();
    let next1 = (s.delta1 + 1).min(m);
    let next2 = (s.delta2 + 1).min(m);
    let outcomes = [
        (AoIState::new(1, 1), (1.0 - f1) * (1.0 - f2)),
        (AoIState::new(1, next2), (1.0 - f1) * f2),
        (AoIState::new(next1, 1), f1 * (1.0 - f2)),
        (AoIState::new(next1, next2), f1 * f2),
    ];
    let mut out = Successors::new();
    for (state, p) in outcomes {
        if p <= 0.0 {
            continue;
        }
        match out.iter_mut().find(|(t, _)| *t == state) {
            Some((_, q)) => *q += p,
            None => out.push((state, p)),
        }
    }
    out
}

/// Sparse row: `(next state index, probability)`.
pub type Row = ArrayVec<(u32, f64), 4>;

/// Default cap on `m² × |A|` rows accepted by [`build_kernel`].
pub const DEFAULT_MAX_ROWS: usize = 10_000_000;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Transition law of the truncated MDP, one sparse row per (state, action).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    m: u32,
    actions: Vec<Action>,
    rows: Vec<Row>,
}

impl TransitionKernel {
    /// Assembles a kernel from explicit rows, laid out state-major:
    /// `rows[state_index * actions.len() + action_position]`.
    pub fn from_rows(m: u32, actions: Vec<Action>, rows: Vec<Row>) -> Result<Self> {
        if m < 1 || actions.is_empty() {
            return Err(Error::InvalidConfig(
                "kernel needs m >= 1 and at least one action".into(),
            ));
        }
        let n = (m as usize) * (m as usize);
        if rows.len() != n * actions.len() {
            return Err(Error::InvalidConfig(format!(
                "expected {} rows, got {}",
                n * actions.len(),
                rows.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let total: f64 = row.iter().map(|&(_, p)| p).sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL
                || row
                    .iter()
                    .any(|&(t, p)| t as usize >= n || !(0.0..=1.0).contains(&p))
            {
                return Err(Error::InvalidConfig(format!(
                    "row {i} ({} under action {}) is not a distribution over the grid",
                    AoIState::from_index(i / actions.len(), m),
                    actions[i % actions.len()]
                )));
            }
        }
        Ok(TransitionKernel { m, actions, rows })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn n_states(&self) -> usize {
        (self.m as usize) * (self.m as usize)
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Row for the state at `state_index` under the action at position
    /// `action_pos` of [`actions`](Self::actions).
    pub fn row(&self, state_index: usize, action_pos: usize) -> &Row {
        &self.rows[state_index * self.actions.len() + action_pos]
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Writes one line per transition:
    /// `delta1 delta2 action next1 next2 prob`. Intended for debugging only.
    pub fn dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for si in 0..self.n_states() {
            let s = AoIState::from_index(si, self.m);
            for (k, a) in self.actions.iter().enumerate() {
                for &(t, p) in self.row(si, k) {
                    let t = AoIState::from_index(t as usize, self.m);
                    writeln!(
                        out,
                        "{} {} {} {} {} {:e}",
                        s.delta1, s.delta2, a, t.delta1, t.delta2, p
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// Builds the clamped kernel on the `m × m` grid over `actions`.
pub fn build_kernel(
    m: u32,
    actions: &[Action],
    outage: &OutageTable,
    max_rows: usize,
) -> Result<TransitionKernel> {
    if m < 1 || actions.is_empty() {
        return Err(Error::InvalidConfig(
            "kernel needs m >= 1 and at least one action".into(),
        ));
    }
    let n = (m as usize) * (m as usize);
    let total = n.saturating_mul(actions.len());
    if total > max_rows {
        return Err(Error::InstanceTooLarge(format!(
            "kernel would have {total} rows (m = {m}, {} actions); the cap is {max_rows}",
            actions.len()
        )));
    }
    let entries = actions
        .iter()
        .map(|&a| {
            outage.get(a).copied().ok_or_else(|| {
                Error::InvalidConfig(format!("no outage probabilities for action {a}"))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(total);
    for s in states(m) {
        for e in &entries {
            rows.push(
                successors(s, e, m)
                    .into_iter()
                    .map(|(t, p)| (t.index(m) as u32, p))
                    .collect(),
            );
        }
    }
    Ok(TransitionKernel {
        m,
        actions: actions.to_vec(),
        rows,
    })
}

/// Kernel over every action in `outage`, truncated at `cfg.m_trunc`.
pub fn build_truncated_kernel(
    cfg: &SystemConfig,
    outage: &OutageTable,
) -> Result<TransitionKernel> {
    cfg.validate()?;
    build_kernel(cfg.m_trunc, &outage.actions(), outage, DEFAULT_MAX_ROWS)
}
