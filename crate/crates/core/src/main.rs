use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vpbound::report::ClauseStatus;
use vpbound::run;
use vpbound::scenario::load_scenario;

#[derive(Parser)]
#[command(
    name = "vpbound",
    version,
    about = "Perturbations of a homogeneous Vlasov-Poisson background"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write diagnostics into a directory
    Run {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a scenario and print its condition reports
    Validate { scenario: PathBuf },
    /// Compare the field solver against direct quadrature
    Oracle { scenario: PathBuf },
    /// Recompute profile diagnostics from an existing run directory
    Diagnose { dir: PathBuf },
}

fn configure_threads() {
    if let Some(n) = std::env::var("VPBOUND_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        // a second init fails harmlessly; the pool keeps its first size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn dispatch(cmd: Command) -> vpbound::Result<()> {
    match cmd {
        Command::Run { scenario, out } => {
            let v = load_scenario(&scenario)?;
            let output = run::run(&v, &out)?;
            println!(
                "{}: {} snapshots, {} Picard sweeps, output in {}",
                v.scenario.name,
                output.records.len(),
                output.summary.picard.iterations,
                out.display()
            );
        }
        Command::Validate { scenario } => {
            let v = load_scenario(&scenario)?;
            for rep in &v.reports {
                for c in &rep.clauses {
                    let tag = match c.status {
                        ClauseStatus::Pass => "pass",
                        ClauseStatus::Fail => "FAIL",
                        ClauseStatus::Deviates => "deviates",
                    };
                    let measured = c.measured.map(|m| format!(" measured {m:e}")).unwrap_or_default();
                    println!("{:<4} {:<26} {tag}{measured} {}", rep.condition, c.name, c.note);
                }
            }
        }
        Command::Oracle { scenario } => {
            let v = load_scenario(&scenario)?;
            let rows = run::oracle(&v.scenario)?;
            println!("radius,fast,oracle,rel_err");
            for r in rows {
                println!("{:e},{:e},{:e},{:e}", r.radius, r.fast, r.oracle, r.rel_err);
            }
        }
        Command::Diagnose { dir } => {
            let report = run::diagnose(&dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
