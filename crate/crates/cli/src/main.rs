use std::fs;
use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hybrid_aoi::experiment::{
    fmt_sig6, run_policy_map, run_sweep, solve_policy, write_sweep, ExperimentSpec,
};
use hybrid_aoi::mdp::build_kernel;
use hybrid_aoi::policies::{extract_boundaries, verify_subadditivity, verify_switching};
use hybrid_aoi::{
    analytic_aoi, feasible_actions, simulate, Error, OutageTable, PolicyKind, PolicyTable, Result,
};

#[derive(Parser)]
#[command(
    name = "hybrid-aoi",
    version,
    about = "AoI-optimal hybrid NOMA/OMA scheduling for two clients"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one policy at a single SNR point and print its summary.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "optimal-adaptive")]
        kind: PolicyKind,
        /// Also write the policy map here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Write policy-map CSVs and metadata for every selected policy.
    Map {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate every selected policy across the SNR grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate one policy and print the report.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(
            long,
            default_value = "optimal-adaptive",
            conflicts_with = "policy_file"
        )]
        kind: PolicyKind,
        /// Simulate a policy map read from CSV instead of solving one.
        #[arg(long)]
        policy_file: Option<PathBuf>,
    },
    /// Check the switching structure and the subadditivity conditions.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Truncation bound for the subadditivity check.
        #[arg(long, default_value_t = 8)]
        subadditivity_m: u32,
    },
}

#[derive(Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<String>,
    /// `start:stop:step` or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    snr_grid_db: Option<String>,
    #[arg(long)]
    d1: Option<String>,
    #[arg(long)]
    d2: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    rate: Option<String>,
    #[arg(long)]
    n_levels: Option<String>,
    #[arg(long)]
    w1: Option<String>,
    #[arg(long)]
    w2: Option<String>,
    #[arg(long)]
    m_trunc: Option<String>,
    /// Comma list of policy kinds.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long)]
    sim_horizon: Option<String>,
    #[arg(long)]
    output_dir: Option<String>,
    /// Keep the full action set for the optimal-adaptive policy.
    #[arg(long)]
    no_eliminate: bool,
    /// Any config key, as `key=value`. Applied after the other flags.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::from_file(path)?,
            None => ExperimentSpec::default(),
        };
        let flags = [
            ("snr_db", &self.snr_db),
            ("snr_grid_db", &self.snr_grid_db),
            ("d1", &self.d1),
            ("d2", &self.d2),
            ("tau", &self.tau),
            ("rate", &self.rate),
            ("n_levels", &self.n_levels),
            ("w1", &self.w1),
            ("w2", &self.w2),
            ("m_trunc", &self.m_trunc),
            ("policies", &self.policies),
            ("sim_horizon", &self.sim_horizon),
            ("output_dir", &self.output_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                spec.set(key, v)?;
            }
        }
        if self.no_eliminate {
            spec.eliminate = false;
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("--set expects KEY=VALUE, got `{kv}`"),
            })?;
            spec.set(k.trim(), v.trim())?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn single_point(spec: &ExperimentSpec) -> Result<f64> {
    match spec.snr_grid_db.as_slice() {
        [snr] => Ok(*snr),
        grid => Err(Error::InvalidConfig(format!(
            "this command takes a single SNR point, got {}",
            grid.len()
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut out = io::stdout().lock();
    match cli.command {
        Command::Solve { common, kind, csv } => {
            let spec = common.spec()?;
            let cfg = spec.config_at(single_point(&spec)?);
            let p = solve_policy(&cfg, kind, spec.eliminate)?;
            let outage = OutageTable::new(&cfg)?;
            let analytic = analytic_aoi(&p.table, &outage, cfg.weights())?;
            writeln!(out, "policy={kind}")?;
            writeln!(out, "j_star={}", p.j_star.map_or("na".into(), fmt_sig6))?;
            writeln!(out, "analytic_aoi={}", fmt_sig6(analytic))?;
            writeln!(
                out,
                "iterations={}",
                p.iterations.map_or("na".into(), |n| n.to_string())
            )?;
            let used: Vec<String> = p
                .table
                .distinct_actions()
                .iter()
                .map(|a| a.to_string())
                .collect();
            writeln!(out, "actions_used={}", used.join(","))?;
            if let Some(path) = csv {
                p.table
                    .write_csv(io::BufWriter::new(fs::File::create(path)?))?;
            }
        }
        Command::Map { common } => {
            let spec = common.spec()?;
            let report = run_policy_map(&spec)?;
            for path in &report.written {
                writeln!(out, "{}", path.display())?;
            }
            if let Some((kind, e)) = report.failures.into_iter().next() {
                return Err(relabel(e, &format!("{kind}")));
            }
        }
        Command::Sweep { common, seed } => {
            let mut spec = common.spec()?;
            if let Some(seed) = seed {
                spec.sim_seed = seed;
            }
            let table = run_sweep(&spec)?;
            let path = write_sweep(&spec, &table)?;
            writeln!(out, "{}", path.display())?;
            for flag in &table.monotonicity_flags {
                eprintln!("warning: monotonicity: {flag}");
            }
            let failed = table.rows.iter().filter(|r| r.failure.is_some()).count();
            if failed > 0 {
                eprintln!(
                    "warning: {failed} sweep points failed; see the fail: markers in {}",
                    path.display()
                );
            }
        }
        Command::Simulate {
            common,
            seed,
            kind,
            policy_file,
        } => {
            let spec = common.spec()?;
            let cfg = spec.config_at(single_point(&spec)?);
            let outage = OutageTable::new(&cfg)?;
            let table = match policy_file {
                Some(path) => PolicyTable::read_csv(
                    BufReader::new(fs::File::open(path)?),
                    PolicyKind::Custom,
                )?,
                None => solve_policy(&cfg, kind, spec.eliminate)?.table,
            };
            if table.m() != cfg.m_trunc {
                return Err(Error::InvalidConfig(format!(
                    "policy grid is {0}x{0} but m_trunc is {1}",
                    table.m(),
                    cfg.m_trunc
                )));
            }
            let horizon = spec.sim_horizon.max(1);
            let report = simulate(&table, &outage, &cfg, horizon, seed)?;
            write!(out, "{}", report.to_record())?;
        }
        Command::Verify {
            common,
            subadditivity_m,
        } => {
            let spec = common.spec()?;
            let cfg = spec.config_at(single_point(&spec)?);
            let p = solve_policy(&cfg, PolicyKind::OptimalAdaptive, spec.eliminate)?;
            let switching = verify_switching(&p.table);
            writeln!(out, "switching_violations={}", switching.violations.len())?;
            if switching.passed() {
                let boundary = extract_boundaries(&p.table)?;
                writeln!(out, "boundary_entries={}", boundary.len())?;
            }

            let outage = OutageTable::new(&cfg)?;
            let kernel = build_kernel(
                subadditivity_m,
                &feasible_actions(&cfg, false),
                &outage,
                usize::MAX,
            )?;
            let sub = verify_subadditivity(&kernel, cfg.weights())?;
            writeln!(out, "subadditivity_m={subadditivity_m}")?;
            writeln!(
                out,
                "reward_monotone_violations={}",
                sub.reward_monotone.len()
            )?;
            writeln!(out, "tail_monotone_violations={}", sub.tail_monotone.len())?;
            writeln!(
                out,
                "tail_subadditive_violations={}",
                sub.tail_subadditive.len()
            )?;
            if !switching.passed() {
                return Err(Error::NotSwitching {
                    violations: switching.violations.len(),
                });
            }
            if !sub.passed() {
                return Err(Error::InvalidConfig(format!(
                    "subadditivity conditions fail on the m = {subadditivity_m} kernel"
                )));
            }
        }
    }
    Ok(())
}

fn relabel(e: Error, kind: &str) -> Error {
    match e {
        Error::InvalidConfig(msg) => Error::InvalidConfig(format!("{kind}: {msg}")),
        Error::SteadyState(msg) => Error::SteadyState(format!("{kind}: {msg}")),
        Error::InstanceTooLarge(msg) => Error::InstanceTooLarge(format!("{kind}: {msg}")),
        other => other,
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {}: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
