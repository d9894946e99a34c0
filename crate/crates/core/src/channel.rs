//! Physical layer: outage probabilities under Rayleigh block fading.
//!
//! The base station transmits with linear SNR `rho` to a near client (client 1)
//! and a far client (client 2). Channel power to client `i` is
//! `d_i^-tau * X` with `X ~ Exp(1)`; a slot is lost when the achievable rate
//! falls below the common target rate `R`.
//!
//! Power allocation is quantized to `N` levels. An [`Action`] `a` gives the far
//! client the share `a / N` and the near client the remainder, so `a = 0` and
//! `a = N` are the two OMA actions and everything in between is NOMA with SIC at
//! the near client.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};

/// Physical and problem parameters shared by every module.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    /// Linear transmit SNR `P / sigma^2`.
    pub rho: f64,
    /// Normalized distance of the near client.
    pub d1: f64,
    /// Normalized distance of the far client.
    pub d2: f64,
    /// Path-loss exponent.
    pub tau: f64,
    /// Target rate in bits/s/Hz, shared by both clients.
    pub rate: f64,
    /// Power quantization count `N`.
    pub n_levels: u32,
    pub w1: f64,
    pub w2: f64,
    /// Truncation bound applied to both ages.
    pub m_trunc: u32,
}

impl Default for SystemConfig {
    /// 18 dB, `d = (2, 4)`, `tau = 2`, `R = 1`, `N = 10`, equal weights, `m = 100`.
    fn default() -> Self {
        SystemConfig {
            rho: 10f64.powf(1.8),
            d1: 2.0,
            d2: 4.0,
            tau: 2.0,
            rate: 1.0,
            n_levels: 10,
            w1: 0.5,
            w2: 0.5,
            m_trunc: 100,
        }
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad(format!("rho must be positive and finite, got {}", self.rho));
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return bad(format!("rate must be positive, got {}", self.rate));
        }
        if self.n_levels < 2 {
            return bad(format!(
                "n_levels must be at least 2, got {}",
                self.n_levels
            ));
        }
        if self.m_trunc < 2 {
            return bad(format!("m_trunc must be at least 2, got {}", self.m_trunc));
        }
        if !(self.d1 > 0.0 && self.d1 < self.d2 && self.d2.is_finite()) {
            return bad(format!(
                "distances must satisfy 0 < d1 < d2, got d1 = {}, d2 = {}",
                self.d1, self.d2
            ));
        }
        if !(self.w1 > 0.0 && self.w2 > 0.0) || (self.w1 + self.w2 - 1.0).abs() > 1e-9 {
            return bad(format!(
                "weights must be positive and sum to 1, got w1 = {}, w2 = {}",
                self.w1, self.w2
            ));
        }
        Ok(())
    }

    pub fn weights(&self) -> Weights {
        Weights {
            w1: self.w1,
            w2: self.w2,
        }
    }

    pub fn distance(&self, client: Client) -> f64 {
        match client {
            Client::Near => self.d1,
            Client::Far => self.d2,
        }
    }

    /// `2^R - 1`, the SINR needed to support the target rate.
    pub fn sinr_threshold(&self) -> f64 {
        self.rate.exp2() - 1.0
    }
}

/// AoI weights `(w1, w2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights { w1: 0.5, w2: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Client {
    /// Client 1.
    Near,
    /// Client 2.
    Far,
}

/// Quantized power split: the far client receives `a / N` of the power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action(pub u32);

impl Action {
    pub const OMA_NEAR: Action = Action(0);

    pub fn oma_far(n_levels: u32) -> Action {
        Action(n_levels)
    }

    pub fn is_noma(self, n_levels: u32) -> bool {
        self.0 > 0 && self.0 < n_levels
    }

    /// Power share `alpha_2` of the far client.
    pub fn far_share(self, n_levels: u32) -> f64 {
        f64::from(self.0) / f64::from(n_levels)
    }

    /// Power share `alpha_1` of the near client.
    pub fn near_share(self, n_levels: u32) -> f64 {
        f64::from(n_levels - self.0) / f64::from(n_levels)
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// OMA outage probability `1 - exp(-(2^R - 1) d_i^tau / rho)`.
pub fn oma_outage(cfg: &SystemConfig, client: Client) -> f64 {
    let d = cfg.distance(client);
    -(-cfg.sinr_threshold() * d.powf(cfg.tau) / cfg.rho).exp_m1()
}

/// `alpha_2 - alpha_1 (2^R - 1)`, which must be positive for the far client's
/// message to be decodable under interference from the near client's.
///
/// Written as `(a 2^R - N (2^R - 1)) / N` so that exact ties come out as zero.
fn split_margin(cfg: &SystemConfig, a: Action) -> f64 {
    let x = cfg.rate.exp2();
    let n = f64::from(cfg.n_levels);
    (f64::from(a.0) * x - n * (x - 1.0)) / n
}

fn check_split(cfg: &SystemConfig, a: Action) -> Result<f64> {
    if a.0 > cfg.n_levels {
        return Err(Error::InfeasibleAction {
            action: a.0,
            n_levels: cfg.n_levels,
            reason: "action exceeds N",
        });
    }
    let margin = split_margin(cfg, a);
    if margin <= 0.0 {
        return Err(Error::InfeasibleAction {
            action: a.0,
            n_levels: cfg.n_levels,
            reason: "far-client share does not satisfy alpha2 - alpha1 (2^R - 1) > 0",
        });
    }
    Ok(margin)
}

/// Outage probability of the far client under the split `a`, decoding its own
/// message with the near client's treated as noise.
///
/// At `a = N` this is exactly [`oma_outage`] for the far client.
pub fn noma_outage_far(cfg: &SystemConfig, a: Action) -> Result<f64> {
    let margin = check_split(cfg, a)?;
    let exponent = cfg.sinr_threshold() * cfg.d2.powf(cfg.tau) / (cfg.rho * margin);
    Ok(-(-exponent).exp_m1())
}

/// Outage probability of the near client under the split `a`. The near client
/// must first decode the far client's message and then its own, so the binding
/// constraint is whichever of the two SINR requirements is harder.
pub fn noma_outage_near(cfg: &SystemConfig, a: Action) -> Result<f64> {
    let margin = check_split(cfg, a)?;
    let near_share = a.near_share(cfg.n_levels);
    if near_share <= 0.0 {
        return Err(Error::InfeasibleAction {
            action: a.0,
            n_levels: cfg.n_levels,
            reason: "near client receives no power",
        });
    }
    let scaled = cfg.sinr_threshold() * cfg.d1.powf(cfg.tau) / cfg.rho;
    let exponent = f64::max(scaled / margin, scaled / near_share);
    Ok(-(-exponent).exp_m1())
}

// Guards floor/ceil against representation error in quantities that are
// mathematically integers.
const ROUNDING_SLACK: f64 = 1e-9;

/// First NOMA action of the unreduced set:
/// `max(ceil(N/2) + 1, ceil((2^R - 1) N / 2^R))`.
fn first_noma_action(cfg: &SystemConfig) -> u32 {
    let n = cfg.n_levels;
    let x = cfg.rate.exp2();
    let half = n.div_ceil(2) + 1;
    let rate_bound = ((x - 1.0) * f64::from(n) / x - ROUNDING_SLACK).ceil() as u32;
    half.max(rate_bound)
}

/// Feasible actions in ascending order.
///
/// Without elimination: `{0} ∪ {first, ..., N}` where `first` is the smallest
/// split with `alpha_2 > 1/2` and `alpha_2 > (2^R - 1) / 2^R`. With elimination
/// the NOMA range starts at `floor(2^R N / (2^R + 1))` instead (clamped up to
/// `first`): below that point both outage probabilities decrease in `a`, so the
/// lower splits are dominated.
pub fn feasible_actions(cfg: &SystemConfig, eliminate: bool) -> Vec<Action> {
    let n = cfg.n_levels;
    let mut lo = first_noma_action(cfg);
    if eliminate {
        let x = cfg.rate.exp2();
        let reduced = (x * f64::from(n) / (x + 1.0) + ROUNDING_SLACK).floor() as u32;
        lo = lo.max(reduced);
    }
    let mut actions = vec![Action::OMA_NEAR];
    actions.extend(
        (lo..n)
            .map(Action)
            .filter(|&a| 2 * a.0 > n && split_margin(cfg, a) > 0.0),
    );
    actions.push(Action::oma_far(n));
    actions
}

/// Failure probabilities of one action. `None` marks a client that is not
/// served by the action at all (the unserved client under OMA).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionOutage {
    pub action: Action,
    pub near: Option<f64>,
    pub far: Option<f64>,
}

impl ActionOutage {
    /// `(fail_near, fail_far)`, with an unserved client failing surely.
    pub fn failure_probs(&self) -> (f64, f64) {
        (self.near.unwrap_or(1.0), self.far.unwrap_or(1.0))
    }
}

/// Outage probabilities for every action of the unreduced feasible set,
/// computed once per configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct OutageTable {
    n_levels: u32,
    entries: Vec<ActionOutage>,
}

impl OutageTable {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_levels;
        let entries = feasible_actions(cfg, false)
            .into_iter()
            .map(|a| {
                Ok(if a.0 == 0 {
                    ActionOutage {
                        action: a,
                        near: Some(oma_outage(cfg, Client::Near)),
                        far: None,
                    }
                } else if a.0 == n {
                    ActionOutage {
                        action: a,
                        near: None,
                        far: Some(oma_outage(cfg, Client::Far)),
                    }
                } else {
                    ActionOutage {
                        action: a,
                        near: Some(noma_outage_near(cfg, a)?),
                        far: Some(noma_outage_far(cfg, a)?),
                    }
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(OutageTable {
            n_levels: n,
            entries,
        })
    }

    /// Builds a table from explicit values, e.g. idealized channels in tests.
    ///
    /// Entries are sorted by action; `a = 0` must leave the far client unserved
    /// and `a = N` the near client, and NOMA actions must serve both.
    pub fn from_entries(n_levels: u32, mut entries: Vec<ActionOutage>) -> Result<Self> {
        entries.sort_by_key(|e| e.action);
        if entries.is_empty() {
            return Err(Error::InvalidConfig("outage table has no actions".into()));
        }
        for w in entries.windows(2) {
            if w[0].action == w[1].action {
                return Err(Error::InvalidConfig(format!(
                    "duplicate action {} in outage table",
                    w[0].action
                )));
            }
        }
        for e in &entries {
            let a = e.action.0;
            let shape_ok = match a {
                0 => e.near.is_some() && e.far.is_none(),
                _ if a == n_levels => e.near.is_none() && e.far.is_some(),
                _ if a < n_levels => e.near.is_some() && e.far.is_some(),
                _ => false,
            };
            if !shape_ok {
                return Err(Error::InvalidConfig(format!(
                    "action {a} has the wrong set of served clients for N = {n_levels}"
                )));
            }
            for p in [e.near, e.far].into_iter().flatten() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidConfig(format!(
                        "outage probability {p} for action {a} is outside [0, 1]"
                    )));
                }
            }
        }
        Ok(OutageTable { n_levels, entries })
    }

    pub fn n_levels(&self) -> u32 {
        self.n_levels
    }

    pub fn entries(&self) -> &[ActionOutage] {
        &self.entries
    }

    pub fn actions(&self) -> Vec<Action> {
        self.entries.iter().map(|e| e.action).collect()
    }

    pub fn get(&self, a: Action) -> Option<&ActionOutage> {
        self.entries
            .binary_search_by_key(&a, |e| e.action)
            .ok()
            .map(|i| &self.entries[i])
    }

    /// `(fail_near, fail_far)` for `a`; see [`ActionOutage::failure_probs`].
    pub fn failure_probs(&self, a: Action) -> Option<(f64, f64)> {
        self.get(a).map(ActionOutage::failure_probs)
    }
}

/// One draw of the channel power `|h_i|^2 = d_i^-tau * Exp(1)`.
pub fn sample_channel_power<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    client: Client,
    rng: &mut R,
) -> f64 {
    let g: f64 = Exp1.sample(rng);
    cfg.distance(client).powf(-cfg.tau) * g
}

/// Monte-Carlo failure counts for one action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalOutage {
    pub action: Action,
    pub near_failures: Option<u64>,
    pub far_failures: Option<u64>,
    pub samples: u64,
}

impl EmpiricalOutage {
    pub fn near(&self) -> Option<f64> {
        self.near_failures.map(|k| k as f64 / self.samples as f64)
    }

    pub fn far(&self) -> Option<f64> {
        self.far_failures.map(|k| k as f64 / self.samples as f64)
    }
}

/// Estimates outage probabilities of `actions` by sampling fading gains and
/// evaluating the rate events directly from the received SINRs. Every action
/// is evaluated on the same draws.
///
/// This path never touches the closed-form expressions, so it can be used to
/// validate them.
pub fn monte_carlo_outage<R: Rng + ?Sized>(
    cfg: &SystemConfig,
    actions: &[Action],
    samples: u64,
    rng: &mut R,
) -> Vec<EmpiricalOutage> {
    let n = cfg.n_levels;
    let rho = cfg.rho;
    let rate = cfg.rate;
    let supports = |sinr: f64| (1.0 + sinr).log2() >= rate;

    let mut near = vec![0u64; actions.len()];
    let mut far = vec![0u64; actions.len()];
    for _ in 0..samples {
        let h1 = sample_channel_power(cfg, Client::Near, rng);
        let h2 = sample_channel_power(cfg, Client::Far, rng);
        for (i, &a) in actions.iter().enumerate() {
            let alpha2 = a.far_share(n);
            let alpha1 = a.near_share(n);
            if a.0 == 0 {
                near[i] += u64::from(!supports(h1 * rho));
            } else if a.0 == n {
                far[i] += u64::from(!supports(h2 * rho));
            } else {
                // Far client decodes its own message, near client's as noise.
                let sinr_22 = alpha2 * h2 / (alpha1 * h2 + 1.0 / rho);
                far[i] += u64::from(!supports(sinr_22));
                // Near client: SIC of the far message, then its own.
                let sinr_12 = alpha2 * h1 / (alpha1 * h1 + 1.0 / rho);
                let sinr_11 = alpha1 * h1 * rho;
                near[i] += u64::from(!(supports(sinr_12) && supports(sinr_11)));
            }
        }
    }

    actions
        .iter()
        .enumerate()
        .map(|(i, &a)| EmpiricalOutage {
            action: a,
            near_failures: (a.0 != n).then_some(near[i]),
            far_failures: (a.0 != 0).then_some(far[i]),
            samples,
        })
        .collect()
}
