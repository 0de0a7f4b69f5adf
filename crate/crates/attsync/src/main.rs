//! Command-line simulator: `simulate`, `check-params`, `montecarlo`, and
//! `gradcheck` over TOML scenario configs (bundled names or paths).
//!
//! Exit codes: 0 converged/pass, 1 config error, 2 not converged / check
//! failed, 3 internal certificate violation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use attsync::config::{ConfigError, ScenarioConfig};
use attsync::engine::{self, EngineError};
use attsync::harness;

const EXIT_OK: u8 = 0;
const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CERTIFICATE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "attsync",
    version,
    about = "Distributed attitude-synchronization simulator on SO(3)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Bundled scenario name (seven_sat_hybrid, seven_sat_continuous,
    /// seven_sat_vfree, seven_sat_kw_zero) or path to a TOML config.
    #[arg(long)]
    config: String,
    /// Override the integration step size.
    #[arg(long)]
    h: Option<f64>,
    /// Override the flow-time horizon.
    #[arg(long)]
    t_end: Option<f64>,
    /// Override the config seed (also the Monte Carlo master seed).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; write CSV + JSON summary when --out is given.
    Simulate {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory for timeseries.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize/validate potential parameters and verify Condition 1.
    CheckParams {
        #[command(flatten)]
        cfg: ConfigArg,
    },
    /// Batch of runs from Haar-random initial attitudes at rest.
    Montecarlo {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Output file for the JSON report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference verification of gradients and torque identities.
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long, default_value_t = 200)]
        points: usize,
        /// Negative control: flip analytic gradient signs (must fail).
        #[arg(long, hide = true)]
        flip_sign: bool,
    },
}

fn load(arg: &ConfigArg) -> Result<ScenarioConfig, ConfigError> {
    let mut cfg = harness::load_config(&arg.config)?;
    if let Some(h) = arg.h {
        cfg.integration.h = h;
    }
    if let Some(t_end) = arg.t_end {
        cfg.integration.t_end = t_end;
    }
    if let Some(seed) = arg.seed {
        cfg.integration.seed = seed;
    }
    Ok(cfg)
}

fn config_fail(e: &ConfigError) -> ExitCode {
    eprintln!("config error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn simulate(arg: &ConfigArg, out: Option<&PathBuf>) -> ExitCode {
    let cfg = match load(arg) {
        Ok(c) => c,
        Err(e) => return config_fail(&e),
    };
    let spec = match cfg.to_run_spec() {
        Ok(s) => s,
        Err(e) => return config_fail(&e),
    };
    match engine::run(&spec) {
        Ok(record) => {
            let summary_json =
                serde_json::to_string_pretty(&record.summary).expect("summary serializes");
            if let Some(dir) = out {
                if let Err(e) = std::fs::create_dir_all(dir)
                    .and_then(|_| std::fs::write(dir.join("timeseries.csv"), record.to_csv()))
                    .and_then(|_| std::fs::write(dir.join("summary.json"), &summary_json))
                {
                    eprintln!("failed to write outputs: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            println!("{summary_json}");
            if record.summary.converged {
                ExitCode::from(EXIT_OK)
            } else {
                if let Some(d) = &record.summary.diagnostic {
                    eprintln!("not converged: {d}");
                } else {
                    eprintln!(
                        "not converged by t = {} (max edge dist_sq {:.3e}, max |omega| {:.3e})",
                        record.summary.t_final,
                        record.summary.final_max_dist_sq,
                        record.summary.final_max_omega_norm
                    );
                }
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(e @ (EngineError::DimensionMismatch | EngineError::Rotation(_))) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(e) => {
            eprintln!("certificate violation: {e}");
            ExitCode::from(EXIT_CERTIFICATE)
        }
    }
}

fn check_params(arg: &ConfigArg) -> ExitCode {
    let cfg = match load(arg) {
        Ok(c) => c,
        Err(e) => return config_fail(&e),
    };
    match harness::check_params(&cfg) {
        Ok(report) => {
            println!("case:        {}", report.case);
            println!("Delta*:      {:.6}", report.delta_star);
            println!(
                "gamma bound: {:.6}  (gamma = {:.6})",
                report.gamma_bound, report.gamma
            );
            println!(
                "delta bound: {:.6}  (delta = {:.6})",
                report.delta_bound, report.delta
            );
            println!(
                "u:           [{:.6}, {:.6}, {:.6}]",
                report.u[0], report.u[1], report.u[2]
            );
            for (beta, g, margin) in &report.condition1_margins {
                println!("critical point {beta}: gap {g:.6}, margin {margin:.6}");
            }
            if report.condition1_pass {
                println!("Condition 1: PASS");
                ExitCode::from(EXIT_OK)
            } else {
                println!("Condition 1: FAIL");
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(ConfigError::Parse(e)) => config_fail(&ConfigError::Parse(e)),
        Err(ConfigError::Io(e)) => config_fail(&ConfigError::Io(e)),
        Err(e) => {
            // infeasible parameters
            eprintln!("parameter check failed: {e}");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
    }
}

fn montecarlo(arg: &ConfigArg, trials: usize, out: Option<&PathBuf>) -> ExitCode {
    let cfg = match load(arg) {
        Ok(c) => c,
        Err(e) => return config_fail(&e),
    };
    let master_seed = arg.seed.unwrap_or(cfg.integration.seed);
    match harness::montecarlo(&cfg, trials, master_seed) {
        Ok(report) => {
            let json = serde_json::to_string_pretty(&report).expect("report serializes");
            if let Some(path) = out {
                if let Err(e) = std::fs::write(path, &json) {
                    eprintln!("failed to write report: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            println!("{json}");
            if report.guard_trips > 0 {
                eprintln!(
                    "{} trial(s) tripped a certificate guard",
                    report.guard_trips
                );
                ExitCode::from(EXIT_CERTIFICATE)
            } else {
                ExitCode::from(EXIT_OK)
            }
        }
        Err(e) => config_fail(&e),
    }
}

fn gradcheck(arg: &ConfigArg, points: usize, flip_sign: bool) -> ExitCode {
    let cfg = match load(arg) {
        Ok(c) => c,
        Err(e) => return config_fail(&e),
    };
    match harness::gradcheck(&cfg, points, flip_sign) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            if report.pass {
                ExitCode::from(EXIT_OK)
            } else {
                ExitCode::from(EXIT_NOT_CONVERGED)
            }
        }
        Err(e) => config_fail(&e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { cfg, out } => simulate(cfg, out.as_ref()),
        Command::CheckParams { cfg } => check_params(cfg),
        Command::Montecarlo { cfg, trials, out } => montecarlo(cfg, *trials, out.as_ref()),
        Command::Gradcheck {
            cfg,
            points,
            flip_sign,
        } => gradcheck(cfg, *points, *flip_sign),
    }
}
