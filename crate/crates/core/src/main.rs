use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use log::info;

use osar::harness::{export, run_experiment, target_ratios, validation, ExperimentConfig, DEFAULT_TARGET_GRID};
use osar::Result;

#[derive(Parser)]
#[command(name = "osar", version, about = "Sequential input and simulation budget allocation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment file and write curve.csv and report.json.
    Run {
        config: PathBuf,
        /// Override the number of macroruns.
        #[arg(long)]
        runs: Option<usize>,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print the limiting allocation for the experiment's problem.
    Targets {
        config: PathBuf,
        /// Floor ε; defaults to the experiment's setting.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Points per axis of the grid over a continuous support.
        #[arg(long, default_value_t = DEFAULT_TARGET_GRID)]
        grid: usize,
    },
    /// Run the randomized property checks.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

fn run_cmd(config: &Path, runs: Option<usize>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut exp = ExperimentConfig::from_file(config)?;
    exp.runs = runs.unwrap_or(exp.runs);
    exp.base_seed = seed.unwrap_or(exp.base_seed);
    let t0 = Instant::now();
    let report = run_experiment(&exp, base_dir(config))?;
    let elapsed = t0.elapsed();
    let (csv, json) = export(&report, out)?;
    println!("{} on {}: PCS {:.4} (se {:.4}) over {} runs", report.algorithm, report.problem, report.pcs, report.se, report.runs);
    println!("mean input counts {:?}, mean simulations {:.1}", report.mean_input_counts, report.mean_simulations);
    println!("mean beta {:?}", report.mean_beta);
    println!("wrote {} and {}", csv.display(), json.display());
    info!("wall clock {:.2?} ({:.3?} per run)", elapsed, elapsed / report.runs as u32);
    Ok(())
}

fn targets_cmd(config: &Path, epsilon: Option<f64>, grid: usize) -> Result<()> {
    let exp = ExperimentConfig::from_file(config)?;
    let problem = exp.problem.build(base_dir(config))?;
    let eps = epsilon.unwrap_or_else(|| exp.settings.resolve(&problem).epsilon);
    let t = target_ratios(&problem, eps, grid)?;
    println!("problem {} with epsilon {eps}", problem.name);
    println!("objective {:.6e}", t.objective);
    for (l, b) in t.beta.iter().enumerate() {
        println!("beta_{} {:.6}", l + 1, b);
    }
    for (p, a) in t.points.iter().zip(&t.alpha) {
        if *a > eps * (1.0 + 1e-9) {
            println!("alpha {:?} {:.6}", p, a);
        }
    }
    if t.grid_rows > 0 {
        println!("grid rows {}", t.grid_rows);
    }
    Ok(())
}

fn validate_cmd(seed: u64) -> Result<bool> {
    let mut ok = true;
    for c in validation::default_suite(seed)? {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        ok &= c.passed();
        let rel = if c.upper { "<=" } else { ">=" };
        println!("{tag} {}: observed {:.3e}, required {rel} {:.1e}", c.name, c.observed, c.bound);
    }
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, runs, seed, out } => run_cmd(&config, runs, seed, &out).map(|_| true),
        Command::Targets { config, epsilon, grid } => targets_cmd(&config, epsilon, grid).map(|_| true),
        Command::Validate { seed } => validate_cmd(seed),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
