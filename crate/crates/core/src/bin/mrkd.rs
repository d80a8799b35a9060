//! Batch front end: run experiments, verify gradients, sweep
//! hyperparameters, and render result tables.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrkd::experiment::{run_experiment, run_sweep, ExperimentSpec, SweepMode, SweepSpec};
use mrkd::gradcheck::{self, GradcheckOptions};
use mrkd::report::write_report;

#[derive(Parser)]
#[command(name = "mrkd", version, about = "Distillation-loss training kit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON spec file.
    Train {
        /// Path to the experiment spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output root; overrides the spec's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of seeded runs; overrides the spec (default 4).
        #[arg(long)]
        runs: Option<usize>,
        /// Base seed; overrides the spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare every analytic loss gradient against finite differences.
    Gradcheck {
        /// Pass threshold on the normalized gradient error.
        #[arg(long, default_value_t = gradcheck::DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Random cases per loss variant and class count.
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Finite-difference step on the logits.
        #[arg(long, default_value_t = gradcheck::DEFAULT_STEP)]
        step: f64,
        /// Class counts to cover.
        #[arg(long, value_delimiter = ',', default_value = "2,10,100")]
        classes: Vec<usize>,
    },
    /// Expand a sweep spec and run every cell, resuming finished ones.
    Sweep {
        /// Path to the sweep spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output root; overrides the base spec's out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for sweep cells.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Run the full cartesian grid instead of one axis at a time.
        #[arg(long)]
        full_grid: bool,
        /// Runs per cell; overrides the base spec.
        #[arg(long)]
        runs: Option<usize>,
        /// Base seed; overrides the base spec.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render markdown and CSV tables from a directory of results.
    Report {
        /// Directory containing aggregate.json files (searched recursively).
        #[arg(long)]
        dir: PathBuf,
        /// Where to write report.md and report.csv (default: the input dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_root(flag: Option<PathBuf>, spec_dir: &Option<PathBuf>) -> Result<PathBuf, String> {
    flag.or_else(|| spec_dir.clone())
        .ok_or_else(|| "no output directory: pass --out or set out_dir in the spec".to_string())
}

fn cmd_train(
    spec_path: PathBuf,
    out: Option<PathBuf>,
    runs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), String> {
    let mut spec = ExperimentSpec::from_file(&spec_path).map_err(|e| e.to_string())?;
    if let Some(r) = runs {
        spec.runs = r;
    }
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    let root = out_root(out, &spec.out_dir)?;
    let artifacts = run_experiment(&spec, &root).map_err(|e| e.to_string())?;
    let record = &artifacts.record;
    let status = if artifacts.resumed { " (resumed)" } else { "" };
    println!(
        "{} on {}: {:.2} (±{:.2}) over {} runs{status}",
        record.method,
        record.task,
        record.mean,
        record.std.unwrap_or(0.0),
        record.runs
    );
    println!("artifacts: {}", artifacts.cell_dir.display());
    Ok(())
}

fn cmd_gradcheck(
    tolerance: f64,
    cases: usize,
    seed: u64,
    step: f64,
    classes: Vec<usize>,
) -> Result<bool, String> {
    let opts = GradcheckOptions {
        cases,
        class_counts: classes,
        tolerance,
        step,
        seed,
        teacher_count: 3,
    };
    let report = gradcheck::run(&opts).map_err(|e| e.to_string())?;
    print!("{}", report.table());
    println!("worst: {:.3e} (tolerance {:.1e})", report.worst(), tolerance);
    if report.passed() {
        println!("gradcheck: PASS");
        Ok(true)
    } else {
        for failure in report.failures() {
            eprintln!(
                "gradcheck: FAIL {} (M={}) at {:.3e}",
                failure.method.name(),
                failure.class_count,
                failure.max_rel_err
            );
        }
        Ok(false)
    }
}

fn cmd_sweep(
    spec_path: PathBuf,
    out: Option<PathBuf>,
    parallel: usize,
    full_grid: bool,
    runs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), String> {
    let mut sweep = SweepSpec::from_file(&spec_path).map_err(|e| e.to_string())?;
    if full_grid {
        sweep.mode = SweepMode::FullGrid;
    }
    if let Some(r) = runs {
        sweep.base.runs = r;
    }
    if let Some(s) = seed {
        sweep.base.train.seed = s;
    }
    let cells = sweep.expand().map_err(|e| e.to_string())?;
    println!("sweep: {} cells", cells.len());
    let root = out_root(out, &sweep.base.out_dir)?;
    let outcome = run_sweep(&sweep, &root, parallel).map_err(|e| e.to_string())?;
    for row in &outcome.rows {
        println!(
            "  {:<24} {} {:.2} (±{:.2})",
            row.label,
            row.method,
            row.mean,
            row.std.unwrap_or(0.0)
        );
    }
    println!("summary: {}", outcome.summary_path.display());
    Ok(())
}

fn cmd_report(dir: PathBuf, out: Option<PathBuf>) -> Result<(), String> {
    let out = out.unwrap_or_else(|| dir.clone());
    let (md, csv) = write_report(&dir, &out).map_err(|e| e.to_string())?;
    println!("wrote {} and {}", md.display(), csv.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            spec,
            out,
            runs,
            seed,
        } => cmd_train(spec, out, runs, seed).map(|()| true),
        Command::Gradcheck {
            tolerance,
            cases,
            seed,
            step,
            classes,
        } => cmd_gradcheck(tolerance, cases, seed, step, classes),
        Command::Sweep {
            spec,
            out,
            parallel,
            full_grid,
            runs,
            seed,
        } => cmd_sweep(spec, out, parallel, full_grid, runs, seed).map(|()| true),
        Command::Report { dir, out } => cmd_report(dir, out).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        // a completed check that found violations (gradcheck breach)
        Ok(false) => ExitCode::from(1),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}
