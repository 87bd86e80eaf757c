use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use kirchwell::assembly::assemble;
use kirchwell::config::{parse_config, parse_preset, RunConfig};
use kirchwell::geometry::build_mesh;
use kirchwell::kernels::validate_hypotheses;
use kirchwell::scenario::{decay_for_series, read_trajectory_csv, run_mms, run_scenario, run_sweep, ScenarioError};
use kirchwell::stableset::compute_well_constants;

#[derive(Parser)]
#[command(name = "kirchwell", version, about = "Viscoelastic Kirchhoff wave laboratory")]
struct Cli {
    /// Worker threads for sweeps and multi-start searches (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a configuration and write every artifact.
    Run {
        /// Run configuration or scenario preset (JSON).
        config: PathBuf,
        /// Overrides `output_dir`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Print the potential-well constants of a configuration.
    Constants {
        config: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check the kernel and boundary coefficients against (H1)/(H2).
    CheckKernel {
        config: PathBuf,
        /// Horizon of the sampling grid; defaults to the configured one.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Decay analysis of an existing trajectory CSV.
    DecayReport {
        /// CSV with at least the columns `t` and `E`.
        trajectory: PathBuf,
        /// Configuration supplying the kernel, t_tail, t0 and tolerances.
        #[arg(long, short)]
        config: PathBuf,
        /// Monotonicity slack for E; defaults to 0.
        #[arg(long, default_value_t = 0.0)]
        tol_e: f64,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Manufactured-solution convergence ladder (needs an `mms` section).
    Mms {
        config: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// One run per initial amplitude, each in its own subdirectory.
    Sweep {
        config: PathBuf,
        /// Comma-separated amplitudes for `initial.u0`.
        #[arg(long, value_delimiter = ',', required = true)]
        amplitudes: Vec<f64>,
        /// Root directory; defaults to `output_dir`.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

/// Accepts a bare run configuration or a preset wrapping one.
fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_preset = serde_json::from_str::<serde_json::Value>(&text).is_ok_and(|v| v.get("config").is_some());
    let parsed = if is_preset { parse_preset(&text).map(|p| p.config) } else { parse_config(&text) };
    parsed.with_context(|| format!("in {}", path.display()))
}

fn emit(json: String, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            match writeln!(out, "{json}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => r.context("writing to stdout"),
            }
        }
    }
}

fn status(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = load_config(&config)?;
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            let outcome = match run_scenario(&cfg) {
                Ok(o) => o,
                Err(e @ ScenarioError::Aborted { .. }) => {
                    eprintln!("{e}");
                    return Ok(ExitCode::from(2));
                }
                Err(e) => return Err(e.into()),
            };
            for (name, ok) in &outcome.verdicts {
                println!("{:<16} {}", name, if *ok { "pass" } else { "FAIL" });
            }
            println!("artifacts in {}", cfg.output_dir.display());
            Ok(status(outcome.verdicts.values().all(|&v| v)))
        }
        Command::Constants { config, output } => {
            let cfg = load_config(&config)?;
            let mesh = build_mesh(&cfg.domain)?;
            let ops = assemble(&mesh, &cfg.physics);
            let kernel = cfg.build_kernel().map_err(anyhow::Error::msg)?;
            let constants = compute_well_constants(&mesh, &ops, &cfg.physics, &kernel, &cfg.analysis.optimizer)?;
            emit(serde_json::to_string_pretty(&constants)?, output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckKernel { config, horizon, output } => {
            let cfg = load_config(&config)?;
            if cfg.kernel.is_none() {
                bail!("configuration has no kernel section");
            }
            let kernel = cfg.build_kernel().map_err(anyhow::Error::msg)?;
            let report = validate_hypotheses(&kernel, cfg.physics.boundary(), horizon.unwrap_or(cfg.analysis.hypothesis_horizon));
            emit(serde_json::to_string_pretty(&report)?, output.as_deref())?;
            Ok(status(report.all_passed))
        }
        Command::DecayReport { trajectory, config, tol_e, output } => {
            let cfg = load_config(&config)?;
            let text = fs::read_to_string(&trajectory).with_context(|| format!("reading {}", trajectory.display()))?;
            let (t, e) = read_trajectory_csv(&text).map_err(anyhow::Error::msg)?;
            let kernel = cfg.build_kernel().map_err(anyhow::Error::msg)?;
            let report = decay_for_series(t, e, &cfg, &kernel, tol_e).map_err(anyhow::Error::msg)?;
            emit(serde_json::to_string_pretty(&report)?, output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Mms { config, output } => {
            let cfg = load_config(&config)?;
            let report = run_mms(&cfg)?;
            emit(serde_json::to_string_pretty(&report)?, output.as_deref())?;
            Ok(status(report.passed))
        }
        Command::Sweep { config, amplitudes, output } => {
            let cfg = load_config(&config)?;
            let root = output.unwrap_or_else(|| cfg.output_dir.clone());
            let mut all_ok = true;
            for (amp, dir, result) in run_sweep(&cfg, &amplitudes, &root) {
                let line = match result {
                    Ok(o) => {
                        let failed: Vec<_> = o.verdicts.iter().filter(|(_, ok)| !**ok).map(|(k, _)| k.as_str()).collect();
                        all_ok &= failed.is_empty();
                        if failed.is_empty() { "all pass".to_string() } else { format!("FAIL {}", failed.join(",")) }
                    }
                    Err(e) => {
                        all_ok = false;
                        format!("error: {e}")
                    }
                };
                println!("amplitude {amp}: {line} ({})", dir.display());
            }
            Ok(status(all_ok))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
