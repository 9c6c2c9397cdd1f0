use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use stircal::calibrate::{infer, posterior_grid, InferenceSetup};
use stircal::config::Config;
use stircal::fluid::FluidParams;
use stircal::harness::{run_twin, sweep, write_atomic, write_summary};
use stircal::pour::optimize_pour;
use stircal::scenario::{liquid_preset, run_stir, InclinationTrace};

#[derive(Parser)]
#[command(
    version,
    about = "Calibrate a particle fluid from stirring traces and optimize pours"
)]
struct Cli {
    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Concurrent sweep cells (overrides the config).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One stirring rollout, written as trace.csv.
    Stir {
        /// Liquid preset; otherwise --viscosity and --cohesion.
        #[arg(long)]
        liquid: Option<String>,
        #[arg(long)]
        viscosity: Option<f64>,
        #[arg(long)]
        cohesion: Option<f64>,
    },
    /// Calibrate against a reference trace CSV; writes inference.json and posterior.csv.
    Calibrate {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 20)]
        budget: usize,
    },
    /// Optimize a pour for parameters read from JSON; writes pour_history.json.
    Pour {
        /// Either `{"viscosity":..,"cohesion":..}` or an inference.json.
        #[arg(long)]
        theta: PathBuf,
    },
    /// Full twin experiment for one preset and calibration budget.
    Twin {
        #[arg(long)]
        liquid: String,
        #[arg(long)]
        budget: usize,
    },
    /// Twin experiments over liquids x budgets; writes reports and summary.csv.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        liquids: Option<Vec<String>>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
    },
}

fn read_theta(path: &Path) -> Result<FluidParams> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let value = value.get("theta_star").cloned().unwrap_or(value);
    serde_json::from_value(value).context("parameters must be {\"viscosity\", \"cohesion\"}")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    let out = &cli.out;

    match cli.command {
        Command::Stir {
            liquid,
            viscosity,
            cohesion,
        } => {
            let theta = match (liquid, viscosity, cohesion) {
                (Some(name), None, None) => liquid_preset(&name)?.params,
                (None, Some(v), Some(k)) => FluidParams::new(v, k)?,
                _ => bail!("give either --liquid or both --viscosity and --cohesion"),
            };
            let trace = run_stir(&theta, &cfg.stir, &cfg.scene, cli.seed)?;
            let mut buf = Vec::new();
            trace.write_csv(&mut buf)?;
            let path = out.join("trace.csv");
            write_atomic(&path, &buf)?;
            println!(
                "{} samples{} -> {}",
                trace.len(),
                if trace.failed { " (capsized)" } else { "" },
                path.display()
            );
        }
        Command::Calibrate { reference, budget } => {
            let file = std::fs::File::open(&reference)
                .with_context(|| format!("opening {}", reference.display()))?;
            let trace = InclinationTrace::read_csv(file, None)?;
            let setup = InferenceSetup {
                stir: &cfg.stir,
                scene: &cfg.scene,
                gp: &cfg.gp,
                discrepancy: &cfg.discrepancy,
                calibrate: &cfg.calibrate,
            };
            let result = infer(&trace, &setup, budget, cli.seed)?;
            let grid = posterior_grid(
                &result.model,
                result.epsilon,
                cfg.calibrate.posterior_resolution,
            )?;
            write_atomic(
                &out.join("inference.json"),
                serde_json::to_string_pretty(&result)?.as_bytes(),
            )?;
            let mut buf = Vec::new();
            grid.write_csv(&mut buf)?;
            write_atomic(&out.join("posterior.csv"), &buf)?;
            let t = result.theta_star;
            println!(
                "theta* = ({}, {}), epsilon = {:.3e}",
                t.viscosity(),
                t.cohesion(),
                result.epsilon
            );
        }
        Command::Pour { theta } => {
            let theta = read_theta(&theta)?;
            let result = optimize_pour(&theta, &cfg.pour, &cfg.scene, &cfg.gp, cli.seed)?;
            write_atomic(
                &out.join("pour_history.json"),
                serde_json::to_string_pretty(&result)?.as_bytes(),
            )?;
            println!(
                "best action omega = {:.3} rad/s, p = {:.4} m, Z = {:.4}",
                result.action.omega, result.action.p, result.predicted_z
            );
        }
        Command::Twin { liquid, budget } => {
            let report = run_twin(&liquid, budget, cli.seed, &cfg)?;
            let path = out.join(report.file_name());
            write_atomic(&path, report.to_json()?.as_bytes())?;
            println!("mean Z = {:.4} -> {}", report.mean_z, path.display());
        }
        Command::Sweep { liquids, budgets } => {
            let liquids = liquids.unwrap_or_else(|| cfg.harness.liquids.clone());
            let budgets = budgets.unwrap_or_else(|| cfg.harness.budgets.clone());
            let workers = cli.workers.unwrap_or(cfg.harness.workers);
            let cells = sweep(&liquids, &budgets, cli.seed, &cfg, workers)?;
            let mut failures = 0;
            for cell in &cells {
                match &cell.outcome {
                    Ok(report) => {
                        write_atomic(&out.join(report.file_name()), report.to_json()?.as_bytes())?
                    }
                    Err(e) => {
                        failures += 1;
                        eprintln!("{} N={}: {e}", cell.liquid, cell.budget);
                    }
                }
            }
            let mut buf = Vec::new();
            write_summary(&cells, &mut buf)?;
            write_atomic(&out.join("summary.csv"), &buf)?;
            println!(
                "{} cells, {failures} failed -> {}",
                cells.len(),
                out.join("summary.csv").display()
            );
        }
    }
    Ok(())
}
