//! Age-of-Information optimal scheduling for a two-client downlink that can
//! switch between NOMA and OMA transmission in every slot.
//!
//! The crate is organised as a pipeline:
//!
//! - [`channel`]: outage probabilities of every power-split action;
//! - [`mdp`]: the truncated age MDP and its transition kernel;
//! - [`solver`]: relative value iteration and a brute-force oracle;
//! - [`policies`]: baseline policies and structural checks;
//! - [`eval`]: stationary analysis and simulation of fixed policies;
//! - [`experiment`]: config files, policy maps and SNR sweeps.
//!
//! ```
//! use hybrid_aoi::{build_truncated_kernel, rvi_solve, OutageTable, RviOptions, SystemConfig};
//!
//! let cfg = SystemConfig { m_trunc: 20, ..SystemConfig::default() };
//! let outage = OutageTable::new(&cfg)?;
//! let kernel = build_truncated_kernel(&cfg, &outage)?;
//! let result = rvi_solve(&kernel, cfg.weights(), &RviOptions::default())?.require_converged()?;
//! assert!(result.j_star > 1.0 && result.j_star < 2.0);
//! # Ok::<(), hybrid_aoi::Error>(())
//! ```

pub mod channel;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod mdp;
pub mod policies;
pub mod solver;

pub use channel::{
    feasible_actions, Action, ActionOutage, Client, OutageTable, SystemConfig, Weights,
};
pub use error::{Error, Result};
pub use eval::{
    analytic_aoi, policy_chain, simulate, steady_state, weighted_aoi_analytic, SimReport,
    SteadyState,
};
pub use experiment::{run_policy_map, run_sweep, solve_policy, ExperimentSpec, SweepTable};
pub use mdp::{build_kernel, build_truncated_kernel, AoIState, TransitionKernel};
pub use policies::{
    build_suboptimal_policy, verify_subadditivity, verify_switching, Policy, PolicyKind,
    PolicyTable,
};
pub use solver::{enumerate_policies_oracle, rvi_solve, RviOptions, SolverResult};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/mdp.md")]
    mod mdp {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/structure.md")]
    mod structure {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
