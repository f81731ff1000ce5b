//! Command-line front end: experiment sweeps, the certification suite,
//! rate fitting on recorded traces, and random-instance generation.
//!
//! Exit codes: 0 success, 1 failed numerical assertion (a certification
//! report with negative slack, or failed math mid-run), 2 malformed
//! input (bad JSON, invalid model, unwritable paths).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use pmdlab::bench::{
    fit_rate, load_experiment_config, random_instance, run_experiment, RandomClassKind,
    RandomSpec,
};
use pmdlab::mdp::mdp_to_json;
use pmdlab::policy::class_to_json;
use pmdlab::verify::{full_suite, LemmaReport};
use pmdlab::{Error, Tolerances};

#[derive(Parser)]
#[command(
    name = "pmdlab",
    about = "Exact policy-mirror-descent runs and numerical certification \
             on finite discounted MDPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured experiment sweep and write its artifacts
    Run {
        /// Experiment config JSON (schema documented in the README)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for run traces, gap table, and summary
        #[arg(long)]
        out: PathBuf,
        /// Override the config's RNG seed
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent sweep cells
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Also run the certification suite and embed its reports
        #[arg(long)]
        with_verify: bool,
    },
    /// Run the lemma-certification suite and report slacks
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where the JSON report array is written
        #[arg(long, default_value = "verify_report.json")]
        out: PathBuf,
    },
    /// Fit a tail power law to the gap column of a run trace
    Rate {
        /// CSV written by `run` (the per-cell trace)
        csv: PathBuf,
        /// Trailing fraction of iterations to fit
        #[arg(long, default_value_t = 0.5)]
        tail_frac: f64,
    },
    /// Generate a seeded random instance as mdp.json + class.json
    Gen {
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 3)]
        actions: usize,
        #[arg(long, default_value_t = 0.95)]
        gamma: f64,
        /// Generation is fully determined by this seed
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ClassKind::Complete)]
        class: ClassKind,
        /// Hull size (ignored for the complete class)
        #[arg(long, default_value_t = 3)]
        n_bases: usize,
        /// Per-action probability floor for hull bases
        #[arg(long, default_value_t = 0.05)]
        floor: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassKind {
    Complete,
    Hull,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn dispatch(command: Command) -> pmdlab::Result<ExitCode> {
    let tol = Tolerances::default();
    match command {
        Command::Run { config, out, seed, jobs, with_verify } => {
            let text = std::fs::read_to_string(&config)?;
            let mut config = load_experiment_config(&text)?;
            if let Some(seed) = seed {
                config.pmd.seed = seed;
            }
            config.with_verify |= with_verify;
            let summary = run_experiment(&config, &out, jobs, &tol)?;
            println!("instance: {}", summary.instance);
            for cell in &summary.cells {
                let rate = if cell.rate.converged_exactly {
                    "converged exactly".to_string()
                } else {
                    format!("slope {:+.3} (r2 {:.4})", cell.rate.slope, cell.rate.r_squared)
                };
                println!(
                    "  {}: final gap {:.6e}, {rate}{}",
                    cell.label,
                    cell.final_gap,
                    if cell.descent_certified { "" } else { ", step above certified range" },
                );
            }
            if let Some(reports) = &summary.lemma_reports {
                print_report_table(reports);
                if reports.iter().any(|r| !r.pass) {
                    return Ok(ExitCode::from(1));
                }
            }
            println!("artifacts in {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { seed, out } => {
            let reports = full_suite(seed, &tol)?;
            print_report_table(&reports);
            let json = serde_json::to_string_pretty(&reports).map_err(Error::from)?;
            std::fs::write(&out, json + "\n")?;
            println!("report written to {}", out.display());
            let failed = reports.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                eprintln!("{failed} of {} checks failed", reports.len());
                Ok(ExitCode::from(1))
            } else {
                println!("all {} checks passed", reports.len());
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::Rate { csv, tail_frac } => {
            let gaps = read_gap_column(&csv)?;
            let fit = fit_rate(&gaps, tail_frac, tol.gap_floor)?;
            if fit.converged_exactly {
                println!(
                    "converged exactly: fewer than 10 positive gaps in the tail window \
                     (k in [{}, {}])",
                    fit.start_k, fit.end_k
                );
            } else {
                println!(
                    "k in [{}, {}] ({} points): slope {:+.4}, intercept {:+.4}, r2 {:.6}",
                    fit.start_k, fit.end_k, fit.n_points, fit.slope, fit.intercept, fit.r_squared
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { states, actions, gamma, seed, class, n_bases, floor, out } => {
            let spec = RandomSpec {
                n_states: states,
                n_actions: actions,
                gamma,
                seed,
                class: match class {
                    ClassKind::Complete => RandomClassKind::Complete,
                    ClassKind::Hull => RandomClassKind::Hull,
                },
                n_bases,
                floor,
            };
            let (mdp, class) = random_instance(&spec, &tol)?;
            std::fs::create_dir_all(&out)?;
            let mdp_path = out.join("mdp.json");
            let class_path = out.join("class.json");
            std::fs::write(&mdp_path, mdp_to_json(&mdp)?)?;
            std::fs::write(&class_path, class_to_json(&class)?)?;
            println!("wrote {} and {}", mdp_path.display(), class_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_report_table(reports: &[LemmaReport]) {
    println!(
        "{:<24} {:>13} {:>13} {:>13}  {:<4}  instance",
        "check", "lhs", "rhs", "slack", "ok"
    );
    for r in reports {
        println!(
            "{:<24} {:>13.4e} {:>13.4e} {:>13.4e}  {:<4}  {}",
            r.lemma_id,
            r.lhs,
            r.rhs,
            r.slack,
            if r.pass { "pass" } else { "FAIL" },
            r.instance,
        );
    }
}

fn read_gap_column(path: &PathBuf) -> pmdlab::Result<Vec<f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::from)?;
    let gap_col = reader
        .headers()
        .map_err(Error::from)?
        .iter()
        .position(|h| h == "gap")
        .ok_or_else(|| Error::Config(format!("{} has no `gap` column", path.display())))?;
    let mut gaps = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::from)?;
        let field = record.get(gap_col).unwrap_or("");
        if field.is_empty() {
            continue;
        }
        let value: f64 = field
            .parse()
            .map_err(|_| Error::Config(format!("non-numeric gap entry `{field}`")))?;
        gaps.push(value);
    }
    if gaps.is_empty() {
        return Err(Error::Config(format!(
            "{} has no gap entries",
            path.display()
        )));
    }
    Ok(gaps)
}
