//! Experiment plumbing: config files, policy maps and SNR sweeps.
//!
//! Config files are flat `key = value` text with `#` comments. Unset keys take
//! the defaults of [`SystemConfig::default`] and [`ExperimentSpec::default`].
//!
//! | key | meaning |
//! |-----|---------|
//! | `snr_db` | single SNR point in dB |
//! | `snr_grid_db` | `start:stop:step` or a comma list, in dB |
//! | `d1`, `d2`, `tau`, `rate`, `n_levels`, `w1`, `w2`, `m_trunc` | [`SystemConfig`] fields |
//! | `policies` | comma list of policy kinds |
//! | `sim_horizon` | slots per simulation; `0` skips simulation |
//! | `sim_seed` | simulation seed |
//! | `output_dir` | where maps and sweep tables go |
//! | `eliminate` | shrink the optimal-adaptive action set (`true`/`false`) |

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::channel::{feasible_actions, OutageTable, SystemConfig};
use crate::error::{Error, Result};
use crate::eval::{analytic_aoi, simulate};
use crate::mdp::{build_kernel, DEFAULT_MAX_ROWS};
use crate::policies::{
    build_suboptimal_policy, restrict_action_set, ActionSubset, PolicyKind, PolicyTable,
};
use crate::solver::{rvi_solve, RviOptions};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(rho: f64) -> f64 {
    10.0 * rho.log10()
}

/// Everything an experiment run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    /// Physical parameters; `rho` is overwritten per grid point.
    pub base: SystemConfig,
    pub snr_grid_db: Vec<f64>,
    pub policy_kinds: Vec<PolicyKind>,
    pub sim_horizon: u64,
    pub sim_seed: u64,
    pub output_dir: PathBuf,
    pub eliminate: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            base: SystemConfig::default(),
            snr_grid_db: vec![18.0],
            policy_kinds: vec![PolicyKind::OptimalAdaptive, PolicyKind::Suboptimal],
            sim_horizon: 1_000_000,
            sim_seed: 1,
            output_dir: PathBuf::from("out"),
            eliminate: true,
        }
    }
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            spec.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Parse { message, .. } => Error::Parse {
                    line: i + 1,
                    message,
                },
                other => other,
            })?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Sets one key. Errors carry line 0; [`ExperimentSpec::parse`] fills in
    /// the real line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| Error::Parse {
                line: 0,
                message: format!("bad value `{value}` for `{key}`"),
            })
        }
        match key {
            "snr_db" => self.snr_grid_db = vec![num(key, value)?],
            "snr_grid_db" => self.snr_grid_db = parse_grid(value)?,
            "d1" => self.base.d1 = num(key, value)?,
            "d2" => self.base.d2 = num(key, value)?,
            "tau" => self.base.tau = num(key, value)?,
            "rate" => self.base.rate = num(key, value)?,
            "n_levels" => self.base.n_levels = num(key, value)?,
            "w1" => self.base.w1 = num(key, value)?,
            "w2" => self.base.w2 = num(key, value)?,
            "m_trunc" => self.base.m_trunc = num(key, value)?,
            "policies" => {
                self.policy_kinds = value
                    .split(',')
                    .map(|k| k.trim().parse())
                    .collect::<Result<Vec<_>>>()
                    .map_err(|e| Error::Parse {
                        line: 0,
                        message: e.to_string(),
                    })?
            }
            "sim_horizon" => self.sim_horizon = num(key, value)?,
            "sim_seed" => self.sim_seed = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "eliminate" => self.eliminate = num(key, value)?,
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("unknown key `{key}`"),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidConfig("SNR grid is empty".into()));
        }
        if self.snr_grid_db.iter().any(|x| !x.is_finite())
            || self.snr_grid_db.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidConfig(
                "SNR grid must be finite and strictly increasing".into(),
            ));
        }
        if self.policy_kinds.is_empty() {
            return Err(Error::InvalidConfig("no policy kinds selected".into()));
        }
        if self.policy_kinds.contains(&PolicyKind::Custom) {
            return Err(Error::InvalidConfig(
                "`custom` policies cannot be built from a config".into(),
            ));
        }
        self.config_at(self.snr_grid_db[0]).validate()
    }

    /// Base config with `rho` set from `snr_db`.
    pub fn config_at(&self, snr_db: f64) -> SystemConfig {
        SystemConfig {
            rho: db_to_linear(snr_db),
            ..self.base.clone()
        }
    }

    /// `key=value` lines that [`ExperimentSpec::parse`] reads back to the same spec.
    pub fn to_record(&self) -> String {
        let b = &self.base;
        let grid = self
            .snr_grid_db
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let kinds = self
            .policy_kinds
            .iter()
            .map(|k| k.as_str())
            .collect::<Vec<_>>()
            .join(",");
        format!(
            "snr_grid_db={grid}\nd1={}\nd2={}\ntau={}\nrate={}\nn_levels={}\nw1={}\nw2={}\nm_trunc={}\n\
             policies={kinds}\nsim_horizon={}\nsim_seed={}\noutput_dir={}\neliminate={}\n",
            b.d1,
            b.d2,
            b.tau,
            b.rate,
            b.n_levels,
            b.w1,
            b.w2,
            b.m_trunc,
            self.sim_horizon,
            self.sim_seed,
            self.output_dir.display(),
            self.eliminate,
        )
    }
}

fn parse_grid(value: &str) -> Result<Vec<f64>> {
    let bad = || Error::Parse {
        line: 0,
        message: format!("bad SNR grid `{value}`"),
    };
    let parts: Vec<&str> = value.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step): (f64, f64, f64) = (
                start.parse().map_err(|_| bad())?,
                stop.parse().map_err(|_| bad())?,
                step.parse().map_err(|_| bad())?,
            );
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            // Built from the index so long grids do not drift.
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        [_] => value
            .split(',')
            .map(|x| x.trim().parse().map_err(|_| bad()))
            .collect(),
        _ => Err(bad()),
    }
}

/// A policy built for one config.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvedPolicy {
    pub table: PolicyTable,
    /// Optimal cost when the policy came from the solver.
    pub j_star: Option<f64>,
    pub iterations: Option<usize>,
    pub final_span: Option<f64>,
}

/// Builds the policy of `kind` for `cfg`. Optimal kinds run relative value
/// iteration over their action set and fail if it does not converge.
pub fn solve_policy(cfg: &SystemConfig, kind: PolicyKind, eliminate: bool) -> Result<SolvedPolicy> {
    cfg.validate()?;
    let outage = OutageTable::new(cfg)?;
    let actions = match kind {
        PolicyKind::Suboptimal => {
            return Ok(SolvedPolicy {
                table: build_suboptimal_policy(cfg, &outage)?,
                j_star: None,
                iterations: None,
                final_span: None,
            })
        }
        PolicyKind::OptimalAdaptive => feasible_actions(cfg, eliminate),
        PolicyKind::OmaOnlyOptimal => restrict_action_set(cfg, &ActionSubset::OmaOnly)?,
        PolicyKind::NomaOnlyOptimal => restrict_action_set(cfg, &ActionSubset::NomaOnly)?,
        PolicyKind::Custom => {
            return Err(Error::InvalidConfig(
                "custom policies are not solved".into(),
            ));
        }
    };
    let kernel = build_kernel(cfg.m_trunc, &actions, &outage, DEFAULT_MAX_ROWS)?;
    let result = rvi_solve(&kernel, cfg.weights(), &RviOptions::default())?.require_converged()?;
    Ok(SolvedPolicy {
        table: result.policy.with_kind(kind),
        j_star: Some(result.j_star),
        iterations: Some(result.iterations),
        final_span: Some(result.final_span),
    })
}

/// Files written by [`run_policy_map`] and the kinds that failed.
#[derive(Debug, Default)]
pub struct MapReport {
    pub written: Vec<PathBuf>,
    pub failures: Vec<(PolicyKind, Error)>,
}

/// Writes `policy_<kind>.csv` and a `policy_<kind>.meta` sidecar for every
/// requested kind at the single SNR point of `spec`. A kind that fails gets a
/// `policy_<kind>.failed` record instead and the others still run.
pub fn run_policy_map(spec: &ExperimentSpec) -> Result<MapReport> {
    spec.validate()?;
    if spec.snr_grid_db.len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "a policy map needs exactly one SNR point, got {}",
            spec.snr_grid_db.len()
        )));
    }
    let snr_db = spec.snr_grid_db[0];
    let cfg = spec.config_at(snr_db);
    fs::create_dir_all(&spec.output_dir)?;

    let solved: Vec<(PolicyKind, Result<SolvedPolicy>)> = spec
        .policy_kinds
        .par_iter()
        .map(|&kind| (kind, solve_policy(&cfg, kind, spec.eliminate)))
        .collect();

    let mut report = MapReport::default();
    for (kind, outcome) in solved {
        let stem = spec.output_dir.join(format!("policy_{kind}"));
        let failed = stem.with_extension("failed");
        match outcome {
            Ok(p) => {
                let csv = stem.with_extension("csv");
                p.table.write_csv(BufWriter::new(fs::File::create(&csv)?))?;
                let meta = stem.with_extension("meta");
                fs::write(&meta, map_metadata(spec, snr_db, &p))?;
                if failed.exists() {
                    fs::remove_file(&failed)?;
                }
                report.written.extend([csv, meta]);
            }
            Err(e) => {
                fs::write(
                    &failed,
                    format!("status=failed\nclass={}\nmessage={e}\n", e.class()),
                )?;
                report.written.push(failed);
                report.failures.push((kind, e));
            }
        }
    }
    Ok(report)
}

fn map_metadata(spec: &ExperimentSpec, snr_db: f64, p: &SolvedPolicy) -> String {
    let mut out = String::from("status=ok\n");
    let _ = writeln!(out, "policy={}", p.table.kind());
    let _ = writeln!(out, "snr_db={snr_db}");
    out.push_str(&spec.to_record());
    let _ = writeln!(out, "j_star={}", p.j_star.map_or("na".into(), fmt_sig6));
    let _ = writeln!(
        out,
        "iterations={}",
        p.iterations.map_or("na".into(), |n| n.to_string())
    );
    let _ = writeln!(
        out,
        "final_span={}",
        p.final_span.map_or("na".into(), |s| format!("{s:e}"))
    );
    let actions = p
        .table
        .distinct_actions()
        .iter()
        .map(|a| a.to_string())
        .collect::<Vec<_>>()
        .join(",");
    let _ = writeln!(out, "actions_used={actions}");
    out
}

/// One `(snr, policy)` point of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub kind: PolicyKind,
    pub j_star: Option<f64>,
    pub analytic_aoi: Option<f64>,
    pub simulated_aoi: Option<f64>,
    pub escape_freq: Option<f64>,
    /// Error class when the point failed.
    pub failure: Option<String>,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let cell = |x: Option<f64>| match (&self.failure, x) {
            (_, Some(v)) => fmt_sig6(v),
            (Some(class), None) => format!("fail:{class}"),
            (None, None) => "na".into(),
        };
        format!(
            "{},{},{},{},{},{}",
            fmt_sig6(self.snr_db),
            self.kind,
            cell(self.j_star),
            cell(self.analytic_aoi),
            cell(self.simulated_aoi),
            cell(self.escape_freq)
        )
    }
}

pub const SWEEP_HEADER: &str = "snr_db,policy,j_star_or_na,analytic_aoi,simulated_aoi,escape_freq";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    /// Ordered by SNR, then by the spec's policy order.
    pub rows: Vec<SweepRow>,
    /// Places where a policy's analytic AoI went up with SNR.
    pub monotonicity_flags: Vec<String>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(SWEEP_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn get(&self, snr_db: f64, kind: PolicyKind) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.snr_db == snr_db && r.kind == kind)
    }

    /// Analytic values of `kind` along the grid.
    pub fn curve(&self, kind: PolicyKind) -> Vec<(f64, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| (r.snr_db, r.analytic_aoi))
            .collect()
    }
}

/// Evaluates one sweep point analytically and, if `sim_horizon > 0`, by
/// simulation.
pub fn sweep_point(spec: &ExperimentSpec, snr_db: f64, kind: PolicyKind) -> SweepRow {
    let mut row = SweepRow {
        snr_db,
        kind,
        j_star: None,
        analytic_aoi: None,
        simulated_aoi: None,
        escape_freq: None,
        failure: None,
    };
    let cfg = spec.config_at(snr_db);
    let outcome = (|| -> Result<()> {
        let p = solve_policy(&cfg, kind, spec.eliminate)?;
        row.j_star = p.j_star;
        let outage = OutageTable::new(&cfg)?;
        row.analytic_aoi = Some(analytic_aoi(&p.table, &outage, cfg.weights())?);
        if spec.sim_horizon > 0 {
            let sim = simulate(&p.table, &outage, &cfg, spec.sim_horizon, spec.sim_seed)?;
            row.simulated_aoi = Some(sim.avg_weighted_aoi);
            row.escape_freq = Some(sim.escape_freq);
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        row.failure = Some(e.class().to_string());
    }
    row
}

/// Runs every `(snr, policy)` point in parallel and returns rows in
/// deterministic order. Per-point failures are kept in the rows.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepTable> {
    spec.validate()?;
    let jobs: Vec<(f64, PolicyKind)> = spec
        .snr_grid_db
        .iter()
        .flat_map(|&snr| spec.policy_kinds.iter().map(move |&k| (snr, k)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(snr, kind)| sweep_point(spec, snr, kind))
        .collect();

    let mut monotonicity_flags = Vec::new();
    for &kind in &spec.policy_kinds {
        let curve: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.kind == kind)
            .filter_map(|r| r.analytic_aoi.map(|v| (r.snr_db, v)))
            .collect();
        for w in curve.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + 1e-9) {
                monotonicity_flags.push(format!(
                    "{kind}: analytic AoI rises from {} at {} dB to {} at {} dB",
                    fmt_sig6(w[0].1),
                    w[0].0,
                    fmt_sig6(w[1].1),
                    w[1].0
                ));
            }
        }
    }
    Ok(SweepTable {
        rows,
        monotonicity_flags,
    })
}

/// Writes `sweep.csv` (and `sweep.flags` when monotonicity was violated) into
/// the spec's output directory.
pub fn write_sweep(spec: &ExperimentSpec, table: &SweepTable) -> Result<PathBuf> {
    fs::create_dir_all(&spec.output_dir)?;
    let path = spec.output_dir.join("sweep.csv");
    fs::write(&path, table.to_csv())?;
    let flags = spec.output_dir.join("sweep.flags");
    if table.monotonicity_flags.is_empty() {
        if flags.exists() {
            fs::remove_file(&flags)?;
        }
    } else {
        fs::write(&flags, table.monotonicity_flags.join("\n") + "\n")?;
    }
    Ok(path)
}

/// Six significant digits in the style of C's `%g`.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!(
            "{mantissa}e{}{:02}",
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        );
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
