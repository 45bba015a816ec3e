use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lfc_core::experiment::{self, load_config, CaseList, ExperimentConfig};

/// Load-frequency control experiments: centralized LQG versus its
/// consensus-based distributed approximation.
#[derive(Parser)]
#[command(name = "lfc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a config, then print a summary.
    Validate { config: PathBuf },
    /// Run the scenarios of a config.
    Run {
        config: PathBuf,
        /// Run only this scenario.
        #[arg(long)]
        scenario: Option<String>,
        /// Base seed; trial k uses seed + k.
        #[arg(long)]
        seed: Option<u64>,
        /// Trials for every scenario.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Output directory (default: the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare distributed and centralized cost over a list of noise levels.
    Compare {
        config: PathBuf,
        #[arg(long)]
        cases: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the assembled A, B, C, Q, R as CSV.
    DumpMatrices {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const NOT_CONVERGED: u8 = 2;

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output_dir.clone())
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    load_config(path).with_context(|| format!("invalid config {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let cfg = load(&config)?;
            let comm = cfg.comm_graph()?;
            let mix = comm.check_mixing(cfg.consensus.delta);
            println!("areas: {}", cfg.n_areas());
            println!(
                "horizon: {} s, dt: {} s, grid points: {}",
                cfg.horizon,
                cfg.dt,
                cfg.grid().len()
            );
            println!(
                "consensus: delta {}, sigma {:e}, inner cap {}, outer cap {}",
                cfg.consensus.delta,
                cfg.consensus.sigma_tol,
                cfg.consensus.max_inner,
                cfg.consensus.max_outer
            );
            println!(
                "communication graph: {} edges, algebraic connectivity {:.6}, mixing spectral radius {:.6}",
                comm.edges().len(),
                mix.algebraic_connectivity,
                mix.spectral_radius
            );
            for s in &cfg.scenarios {
                println!(
                    "scenario {}: {} controller, {} trials",
                    s.name,
                    s.controller.as_str(),
                    cfg.trials_for(s)
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            config,
            scenario,
            seed,
            trials,
            dt,
            out,
        } => {
            let cfg = load(&config)?.with_overrides(seed, trials, dt)?;
            let out = out_dir(&cfg, out);
            let report = experiment::run_experiment(&cfg, scenario.as_deref(), &out)?;
            for r in &report.scenarios {
                match (&r.error, &r.cost) {
                    (Some(e), _) => println!("{}: FAILED: {e}", r.scenario),
                    (None, Some(c)) => println!(
                        "{}: J = {:.6} +- {:.6} ({} trials){}",
                        r.scenario,
                        c.mean,
                        c.std_error,
                        r.trials,
                        if r.ok() {
                            ""
                        } else {
                            ", consensus not within tolerance"
                        }
                    ),
                    (None, None) => println!("{}: no cost", r.scenario),
                }
            }
            println!("artifacts in {}", out.display());
            if report.scenarios.iter().any(|r| r.error.is_some()) {
                return Ok(ExitCode::FAILURE);
            }
            Ok(if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(NOT_CONVERGED)
            })
        }
        Command::Compare {
            config,
            cases,
            seed,
            out,
        } => {
            let cfg = load(&config)?.with_overrides(seed, None, None)?;
            let list = CaseList::load(&cases)
                .with_context(|| format!("invalid case list {}", cases.display()))?;
            let out = out_dir(&cfg, out);
            let rows = experiment::run_comparison(&cfg, &list, &out)?;
            println!(
                "{:>8} {:>8} {:>12} {:>12} {:>9}",
                "R_w", "R_v", "J_dist", "J_cent", "gap %"
            );
            for r in &rows {
                println!(
                    "{:>8} {:>8} {:>12.6} {:>12.6} {:>9.4}",
                    r.rw,
                    r.rv,
                    r.distributed.mean,
                    r.centralized.mean,
                    100.0 * r.relative_gap
                );
            }
            println!("table in {}", out.join("comparison.csv").display());
            Ok(if rows.iter().all(|r| r.within_tolerance) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(NOT_CONVERGED)
            })
        }
        Command::DumpMatrices { config, out } => {
            let cfg = load(&config)?;
            let out = out_dir(&cfg, out);
            for f in experiment::dump_matrices(&cfg, &out)? {
                println!("{}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
