use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use floatcbf::cli::{cmd_run, cmd_sweep, cmd_validate, write_sweep, Grid, DEFAULT_OUT_ROOT, OUT_ENV};

/// Safety-filtered force/position control of a floating manipulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario config; exit 0 iff every check passes.
    Validate { config: PathBuf },
    /// Run one scenario; exit 0 iff no safety violation and no lost contact.
    Run {
        config: PathBuf,
        /// Noise seed (defaults to the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to `<root>/<hash>-seed<S>`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT_ROOT)]
        out_root: PathBuf,
    },
    /// Run a parameter grid and write an aggregated CSV.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Seeds per combination.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Output CSV (defaults to `<root>/sweep.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, env = OUT_ENV, default_value = DEFAULT_OUT_ROOT)]
        out_root: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> floatcbf::Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let ok = cmd_validate(&config, &mut std::io::stdout())?;
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Run { config, seed, out, out_root } => {
            let o = cmd_run(&config, seed, out.as_deref(), &out_root)?;
            let s = &o.summary;
            println!("output: {}", o.manifest.out_dir.display());
            println!(
                "steps {} violations {} contact_lost {} infeasible {} f in [{:.4}, {:.4}]",
                s.steps, s.violations, s.contact_lost, s.infeasible, s.min_force, s.max_force
            );
            if let Some(reason) = &o.abort {
                eprintln!("error: run aborted: {reason}");
                return Ok(ExitCode::from(2));
            }
            Ok(if s.is_safe() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { config, grid, seeds, out, out_root } => {
            let grid = Grid::load(&grid)?;
            let rows = cmd_sweep(&config, &grid, seeds)?;
            let path = out.unwrap_or_else(|| out_root.join("sweep.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            write_sweep(std::fs::File::create(&path)?, &grid, &rows)?;
            println!("{} combinations written to {}", rows.len(), path.display());
            let failed = rows.iter().any(|r| r.failed_runs > 0 || r.unsafe_runs > 0);
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}
