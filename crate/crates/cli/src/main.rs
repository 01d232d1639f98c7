use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use segsolve_cli::run::{load_config, run, thread_cap, Command, Overrides};

#[derive(Parser)]
#[command(name = "segsolve", version, about = "Segregated multi-density minimizers on 2D grids")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Minimize, write fields and manifest, run enabled checks.
    Solve(Args),
    /// Re-run the checks on the stored fields of the output directory.
    Verify(Args),
    /// Interfaces, multiple points and partition image of the stored fields.
    Analyze(Args),
    /// Refinement and boundary-perturbation tables.
    Sweep(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid: Option<usize>,
    /// Validate the configuration and data assumptions without solving.
    #[arg(long)]
    check_only: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.command {
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Verify(a) => (Command::Verify, a),
        Cmd::Analyze(a) => (Command::Analyze, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
    };
    let ov = Overrides { seed: args.seed, grid: args.grid, out: args.out, check_only: args.check_only };
    let result = thread_cap().and_then(|cap| {
        if let Some(n) = cap {
            // a second initialization only fails if a pool already exists
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        let cfg = load_config(&args.config, &ov)?;
        run(cmd, &cfg, &ov)
    });
    match result {
        Ok(outcome) => {
            println!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            let msg = serde_json::json!({ "status": "error", "exit_code": code, "error": e.to_string() });
            println!("{msg}");
            ExitCode::from(code as u8)
        }
    }
}
