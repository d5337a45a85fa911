use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use conductance_lab::config::{parse_config, ExperimentSpec};
use conductance_lab::estimators::{homogeneous_speed, estimate_steady_state, SteadyRoute};
use conductance_lab::harness::{execute, selected, Format, RunManifest, RunStatus, Suite};
use conductance_lab::regen::{calibrate_l0, SlabProblem};

#[derive(Parser)]
#[command(name = "conductance-lab", version, about = "Biased random walks among random conductances")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "CONDUCTANCE_LAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite and write results, seed ledger and manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "all")]
        suite: Suite,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
        seed_override: Option<u64>,
    },
    /// Smallest L0 for which P(T_1 < T_-1) >= 2/3 on every sampled environment.
    #[command(name = "calibrate-l0")]
    CalibrateL0 {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 2000)]
        walks: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
        seed_override: Option<u64>,
    },
    /// Exact values for the configured field: homogeneous speed, torus
    /// stationary means, slab exit-law decomposition.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "torus")]
        kind: OracleKind,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=i64::MAX as u64))]
        seed_override: Option<u64>,
    },
    /// Summarize the manifest of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleKind {
    Homogeneous,
    Torus,
    ExitLaw,
}

fn load(path: &Path, seed_override: Option<u64>) -> Result<ExperimentSpec, ExitCode> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return Err(ExitCode::from(1));
        }
    };
    match parse_config(&text) {
        Ok(s) => Ok(match seed_override {
            Some(seed) => s.with_seed(seed),
            None => s,
        }),
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(1))
        }
    }
}

fn run(config: &Path, suite: Suite, out: &Path, format: Format, seed_override: Option<u64>) -> ExitCode {
    let spec = match load(config, seed_override) {
        Ok(s) => s,
        Err(c) => return c,
    };
    if selected(&spec, suite).is_empty() {
        eprintln!(
            "error: suite `{}` selects none of the configured estimators\nusage: conductance-lab run --config PATH --suite NAME --out DIR",
            suite.name()
        );
        return ExitCode::from(1);
    }
    match execute(&spec, suite, out, format) {
        Ok(m) => {
            print_checks(&m);
            ExitCode::from(m.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_checks(m: &RunManifest) {
    for c in &m.checks {
        let status = match (c.pass, c.asserted) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "note",
        };
        println!("{status:4} {}/{} {}", c.experiment_id, c.name, c.detail);
    }
}

fn calibrate(config: &Path, seeds: u64, walks: u64, seed_override: Option<u64>) -> anyhow::Result<ExitCode> {
    let spec = match load(config, seed_override) {
        Ok(s) => s,
        Err(c) => return Ok(c),
    };
    let lambda = spec
        .positive_lambdas()
        .first()
        .copied()
        .context("calibration needs a positive lambda")?;
    let cal = calibrate_l0(&spec.field()?, &spec.bias(lambda)?, seeds, walks, spec.seed)?;
    println!("{}", serde_json::to_string_pretty(&cal)?);
    Ok(ExitCode::SUCCESS)
}

fn oracle(config: &Path, kind: OracleKind, seed_override: Option<u64>) -> anyhow::Result<ExitCode> {
    let spec = match load(config, seed_override) {
        Ok(s) => s,
        Err(c) => return Ok(c),
    };
    let mut out = serde_json::Map::new();
    match kind {
        OracleKind::Homogeneous => {
            for &l in &spec.lambda {
                out.insert(format!("{l}"), serde_json::to_value(homogeneous_speed(&spec.bias(l)?))?);
            }
        }
        OracleKind::Torus => {
            let f = spec.local_function()?;
            for &l in &spec.lambda {
                let route = SteadyRoute::TorusOracle {
                    period: spec.torus_period,
                };
                let e = estimate_steady_state(&spec.run_spec(l)?, &f, route)?;
                out.insert(format!("{l}"), serde_json::to_value(e)?);
            }
        }
        OracleKind::ExitLaw => {
            let field = spec.field()?;
            for l in spec.positive_lambdas() {
                let slab = SlabProblem::new(field, spec.bias(l)?, spec.slab_cross, spec.slab_backstop)?;
                let dec = slab.mu_decomposition(0, None)?;
                out.insert(
                    format!("{l}"),
                    serde_json::json!({
                        "beta_max": dec.beta_max,
                        "c4_hat": dec.c4_hat,
                        "nu": dec.nu,
                        "mu1": dec.mu1,
                    }),
                );
            }
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(ExitCode::SUCCESS)
}

fn report(out: &Path) -> ExitCode {
    let m = match RunManifest::read(out) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: cannot read manifest in {}: {e}", out.display());
            return ExitCode::from(1);
        }
    };
    println!(
        "suite {} config {} version {} status {:?}",
        m.suite, m.config_hash, m.tool_version, m.status
    );
    for (k, v) in &m.outputs {
        println!("  {k}: {v}");
    }
    print_checks(&m);
    if m.status == RunStatus::Incomplete {
        return ExitCode::from(1);
    }
    ExitCode::from(m.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Run {
            config,
            suite,
            out,
            format,
            seed_override,
        } => Ok(run(&config, suite, &out, format, seed_override)),
        Command::CalibrateL0 {
            config,
            seeds,
            walks,
            seed_override,
        } => calibrate(&config, seeds, walks, seed_override),
        Command::Oracle {
            config,
            kind,
            seed_override,
        } => oracle(&config, kind, seed_override),
        Command::Report { out } => Ok(report(&out)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
