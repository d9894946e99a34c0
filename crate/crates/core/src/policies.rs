//! Policy tables, the one-step-lookahead heuristic, baseline action sets, and
//! structural checks.
//!
//! The optimal policy is switching-type: at fixed `Δ1` the action never
//! decreases as `Δ2` grows, and at fixed `Δ2` it never increases as `Δ1` grows.
//! [`verify_switching`] checks this on a table, [`extract_boundaries`]
//! compresses a switching-type table to per-row thresholds, and
//! [`verify_subadditivity`] checks the kernel conditions from which
//! monotonicity in `Δ2` follows.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::channel::{feasible_actions, Action, OutageTable, SystemConfig, Weights};
use crate::error::{Error, Result};
use crate::mdp::{reward, states, AoIState, TransitionKernel};

/// Anything that picks an action for a state.
pub trait Policy {
    fn action(&self, s: AoIState) -> Action;
}

impl<F: Fn(AoIState) -> Action> Policy for F {
    fn action(&self, s: AoIState) -> Action {
        self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    OptimalAdaptive,
    Suboptimal,
    OmaOnlyOptimal,
    NomaOnlyOptimal,
    Custom,
}

impl PolicyKind {
    /// The four kinds an experiment can request, in output order.
    pub const EXPERIMENT_KINDS: [PolicyKind; 4] = [
        PolicyKind::OptimalAdaptive,
        PolicyKind::Suboptimal,
        PolicyKind::OmaOnlyOptimal,
        PolicyKind::NomaOnlyOptimal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::OptimalAdaptive => "optimal-adaptive",
            PolicyKind::Suboptimal => "suboptimal",
            PolicyKind::OmaOnlyOptimal => "oma-only-optimal",
            PolicyKind::NomaOnlyOptimal => "noma-only-optimal",
            PolicyKind::Custom => "custom",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "optimal-adaptive" => Ok(PolicyKind::OptimalAdaptive),
            "suboptimal" => Ok(PolicyKind::Suboptimal),
            "oma-only-optimal" => Ok(PolicyKind::OmaOnlyOptimal),
            "noma-only-optimal" => Ok(PolicyKind::NomaOnlyOptimal),
            "custom" => Ok(PolicyKind::Custom),
            other => Err(Error::InvalidConfig(format!(
                "unknown policy kind `{other}`"
            ))),
        }
    }
}

/// Deterministic stationary policy on the `m × m` grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyTable {
    m: u32,
    kind: PolicyKind,
    actions: Vec<Action>,
}

impl PolicyTable {
    /// `actions` is indexed like [`AoIState::index`].
    pub fn from_actions(m: u32, kind: PolicyKind, actions: Vec<Action>) -> Result<Self> {
        let expected = (m as usize) * (m as usize);
        if m == 0 || actions.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "policy table for m = {m} needs {expected} entries, got {}",
                actions.len()
            )));
        }
        Ok(PolicyTable { m, kind, actions })
    }

    pub fn from_fn(m: u32, kind: PolicyKind, f: impl Fn(AoIState) -> Action) -> Self {
        PolicyTable {
            m,
            kind,
            actions: states(m).map(f).collect(),
        }
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: PolicyKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    /// Action at `s`; states beyond the grid use the nearest edge cell.
    pub fn get(&self, s: AoIState) -> Action {
        self.actions[s.clamped(self.m).index(self.m)]
    }

    pub fn set(&mut self, s: AoIState, a: Action) {
        let i = s.index(self.m);
        self.actions[i] = a;
    }

    /// Sorted distinct actions used anywhere in the table.
    pub fn distinct_actions(&self) -> Vec<Action> {
        let mut used = self.actions.clone();
        used.sort();
        used.dedup();
        used
    }

    /// CSV with header `delta1,delta2,action`, rows ordered by `Δ1` then `Δ2`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "delta1,delta2,action")?;
        for (s, a) in states(self.m).zip(&self.actions) {
            writeln!(out, "{},{},{}", s.delta1, s.delta2, a)?;
        }
        Ok(())
    }

    /// Reads the format written by [`write_csv`](Self::write_csv). Rows may
    /// come in any order but must cover a square grid exactly once.
    pub fn read_csv<R: BufRead>(input: R, kind: PolicyKind) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |f: &str| {
                f.trim().parse::<u32>().map_err(|e| Error::Parse {
                    line: i + 1,
                    message: format!("`{f}`: {e}"),
                })
            };
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected delta1,delta2,action".into(),
                });
            }
            cells.push((parse(fields[0])?, parse(fields[1])?, parse(fields[2])?));
        }
        let m = (cells.len() as f64).sqrt().round() as u32;
        let mut actions = vec![None; (m as usize) * (m as usize)];
        if actions.len() != cells.len() {
            return Err(Error::InvalidConfig(format!(
                "{} policy rows do not form a square grid",
                cells.len()
            )));
        }
        for (d1, d2, a) in cells {
            if d1 < 1 || d2 < 1 || d1 > m || d2 > m {
                return Err(Error::InvalidConfig(format!(
                    "state ({d1}, {d2}) is outside the grid"
                )));
            }
            let slot = &mut actions[AoIState::new(d1, d2).index(m)];
            if slot.replace(Action(a)).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "state ({d1}, {d2}) appears twice"
                )));
            }
        }
        let actions = actions
            .into_iter()
            .map(|a| a.expect("grid fully covered"))
            .collect();
        PolicyTable::from_actions(m, kind, actions)
    }
}

impl Policy for PolicyTable {
    fn action(&self, s: AoIState) -> Action {
        self.get(s)
    }
}

/// Expected one-stage cost of the next slot when `a` is taken in `s`:
/// `1 + w1 f1 Δ1 + w2 f2 Δ2`, where `f_i` is client `i`'s failure probability
/// (1 for a client the action does not serve).
pub fn expected_next_reward(s: AoIState, fail: (f64, f64), weights: Weights) -> f64 {
    1.0 + weights.w1 * fail.0 * f64::from(s.delta1) + weights.w2 * fail.1 * f64::from(s.delta2)
}

/// One-step-lookahead action: minimizes the expected cost of the next slot over
/// every action in `outage`, ties going to the smallest action.
pub fn suboptimal_action(s: AoIState, outage: &OutageTable, weights: Weights) -> Action {
    let mut best: Option<(f64, Action)> = None;
    for e in outage.entries() {
        let value = expected_next_reward(s, e.failure_probs(), weights);
        if best.is_none_or(|(b, _)| value < b) {
            best = Some((value, e.action));
        }
    }
    best.expect("outage table is never empty").1
}

pub fn build_suboptimal_policy(cfg: &SystemConfig, outage: &OutageTable) -> Result<PolicyTable> {
    cfg.validate()?;
    let weights = cfg.weights();
    Ok(PolicyTable::from_fn(
        cfg.m_trunc,
        PolicyKind::Suboptimal,
        |s| suboptimal_action(s, outage, weights),
    ))
}

/// Action subsets used by the baselines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ActionSubset {
    /// `{0, N}`.
    OmaOnly,
    /// Every NOMA split of the unreduced set.
    NomaOnly,
    Custom(Vec<Action>),
}

/// Intersects `subset` with the unreduced feasible set.
pub fn restrict_action_set(cfg: &SystemConfig, subset: &ActionSubset) -> Result<Vec<Action>> {
    let feasible = feasible_actions(cfg, false);
    let n = cfg.n_levels;
    let keep: Vec<Action> = match subset {
        ActionSubset::OmaOnly => feasible.into_iter().filter(|a| !a.is_noma(n)).collect(),
        ActionSubset::NomaOnly => feasible.into_iter().filter(|a| a.is_noma(n)).collect(),
        ActionSubset::Custom(list) => feasible.into_iter().filter(|a| list.contains(a)).collect(),
    };
    if keep.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "action subset {subset:?} has no feasible actions for N = {n}, R = {}",
            cfg.rate
        )));
    }
    Ok(keep)
}

/// Adjacent cells `(from, to)` where the switching structure breaks.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SwitchingReport {
    pub violations: Vec<(AoIState, AoIState)>,
}

impl SwitchingReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every unit step: the action must not decrease from `(Δ1, Δ2)` to
/// `(Δ1, Δ2 + 1)` and must not increase from `(Δ1, Δ2)` to `(Δ1 + 1, Δ2)`.
/// Monotonicity over unit steps implies it for any step length.
pub fn verify_switching(p: &PolicyTable) -> SwitchingReport {
    let m = p.m();
    let mut violations = Vec::new();
    for s in states(m) {
        let a = p.get(s);
        if s.delta2 < m {
            let right = AoIState::new(s.delta1, s.delta2 + 1);
            if p.get(right) < a {
                violations.push((s, right));
            }
        }
        if s.delta1 < m {
            let down = AoIState::new(s.delta1 + 1, s.delta2);
            if p.get(down) > a {
                violations.push((s, down));
            }
        }
    }
    SwitchingReport { violations }
}

/// One `Δ1` row of a switching-type policy: the action at `Δ2 = 1` followed by
/// `(Δ2, action)` pairs marking where the action changes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryRow {
    pub first: Action,
    pub switches: Vec<(u32, Action)>,
}

impl BoundaryRow {
    pub fn thresholds(&self) -> impl Iterator<Item = u32> + '_ {
        self.switches.iter().map(|&(d2, _)| d2)
    }
}

/// Per-row decision boundaries of a switching-type policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchingBoundary {
    pub m: u32,
    pub kind: PolicyKind,
    /// Indexed by `Δ1 - 1`.
    pub rows: Vec<BoundaryRow>,
}

impl SwitchingBoundary {
    pub fn reconstruct(&self) -> PolicyTable {
        PolicyTable::from_fn(self.m, self.kind, |s| {
            let row = &self.rows[s.delta1 as usize - 1];
            row.switches
                .iter()
                .take_while(|&&(d2, _)| d2 <= s.delta2)
                .last()
                .map_or(row.first, |&(_, a)| a)
        })
    }

    /// Number of stored thresholds across all rows.
    pub fn len(&self) -> usize {
        self.rows.iter().map(|r| r.switches.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Compresses a switching-type table. Fails with [`Error::NotSwitching`] if
/// the table violates the structure.
pub fn extract_boundaries(p: &PolicyTable) -> Result<SwitchingBoundary> {
    let report = verify_switching(p);
    if !report.passed() {
        return Err(Error::NotSwitching {
            violations: report.violations.len(),
        });
    }
    let m = p.m();
    let rows = (1..=m)
        .map(|d1| {
            let first = p.get(AoIState::new(d1, 1));
            let mut current = first;
            let mut switches = Vec::new();
            for d2 in 2..=m {
                let a = p.get(AoIState::new(d1, d2));
                if a != current {
                    switches.push((d2, a));
                    current = a;
                }
            }
            BoundaryRow { first, switches }
        })
        .collect();
    Ok(SwitchingBoundary {
        m,
        kind: p.kind(),
        rows,
    })
}

/// Tail-mass monotonicity failure: `q(k | s⁺, a) < q(k | s⁻, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailViolation {
    pub k: u32,
    pub s_plus: AoIState,
    pub s_minus: AoIState,
    pub action: Action,
}

/// Subadditivity failure:
/// `q(k|s⁺,a⁺) + q(k|s⁻,a⁻) > q(k|s⁺,a⁻) + q(k|s⁻,a⁺)` by `excess`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubadditivityViolation {
    pub k: u32,
    pub s_plus: AoIState,
    pub s_minus: AoIState,
    pub a_plus: Action,
    pub a_minus: Action,
    pub excess: f64,
}

/// Outcome of [`verify_subadditivity`]. Each list holds counterexamples for
/// one condition; all empty means the kernel passes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubadditivityReport {
    /// Pairs `(s⁻, s⁺)` with `r(s⁺) < r(s⁻)`.
    pub reward_monotone: Vec<(AoIState, AoIState)>,
    pub tail_monotone: Vec<TailViolation>,
    pub tail_subadditive: Vec<SubadditivityViolation>,
}

impl SubadditivityReport {
    pub fn passed(&self) -> bool {
        self.reward_monotone.is_empty()
            && self.tail_monotone.is_empty()
            && self.tail_subadditive.is_empty()
    }
}

const SUBADDITIVITY_MAX_M: u32 = 10;
const SUBADDITIVITY_TOL: f64 = 1e-12;

/// Exhaustively checks, with states ordered by `Δ2` at fixed `Δ1` and
/// `q(k | s, a) = P(Δ2' ≥ k | s, a)`:
///
/// * `r(s)` is nondecreasing in `s`;
/// * `q(k | s, a)` is nondecreasing in `s` for every `k` and `a`;
/// * `q(k | s, a)` is subadditive on states × actions for every `k`.
///
/// Subadditivity of `r` itself is not checked: `r` does not depend on the
/// action, so it holds with equality.
///
/// Limited to `m <= 10`.
pub fn verify_subadditivity(
    kernel: &TransitionKernel,
    weights: Weights,
) -> Result<SubadditivityReport> {
    let m = kernel.m();
    if m > SUBADDITIVITY_MAX_M {
        return Err(Error::InstanceTooLarge(format!(
            "subadditivity check needs m <= {SUBADDITIVITY_MAX_M}, got {m}"
        )));
    }
    let actions = kernel.actions();
    let n_actions = actions.len();
    let mk = m as usize;

    // tail[(s * n_actions + pos) * m + (k - 1)] = q(k | s, a)
    let mut tail = vec![0.0; kernel.n_states() * n_actions * mk];
    for s in 0..kernel.n_states() {
        for pos in 0..n_actions {
            let base = (s * n_actions + pos) * mk;
            for &(t, p) in kernel.row(s, pos) {
                let next_d2 = AoIState::from_index(t as usize, m).delta2 as usize;
                for q in &mut tail[base..base + next_d2] {
                    *q += p;
                }
            }
        }
    }
    let q = |s: AoIState, pos: usize, k: u32| {
        tail[(s.index(m) * n_actions + pos) * mk + (k as usize - 1)]
    };

    let mut report = SubadditivityReport::default();
    for d1 in 1..=m {
        for lo in 1..=m {
            for hi in lo + 1..=m {
                let s_minus = AoIState::new(d1, lo);
                let s_plus = AoIState::new(d1, hi);
                if reward(s_plus, weights) < reward(s_minus, weights) {
                    report.reward_monotone.push((s_minus, s_plus));
                }
                for k in 1..=m {
                    for (pos, &a) in actions.iter().enumerate() {
                        if q(s_plus, pos, k) < q(s_minus, pos, k) - SUBADDITIVITY_TOL {
                            report.tail_monotone.push(TailViolation {
                                k,
                                s_plus,
                                s_minus,
                                action: a,
                            });
                        }
                    }
                    for minus in 0..n_actions {
                        for plus in minus + 1..n_actions {
                            let lhs = q(s_plus, plus, k) + q(s_minus, minus, k);
                            let rhs = q(s_plus, minus, k) + q(s_minus, plus, k);
                            if lhs > rhs + SUBADDITIVITY_TOL {
                                report.tail_subadditive.push(SubadditivityViolation {
                                    k,
                                    s_plus,
                                    s_minus,
                                    a_plus: actions[plus],
                                    a_minus: actions[minus],
                                    excess: lhs - rhs,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}
