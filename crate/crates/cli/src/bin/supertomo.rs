use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use supertomo::commands::{self, SELECTION_WINDOW};
use supertomo::config::{Algorithm, Config, RawConfig};
use supertomo::{configure_threads, CliError, THREADS_VAR};
use supertomo_core::RunStatus;

/// Superiorized CG tomography experiments.
#[derive(Parser)]
#[command(name = "supertomo", version)]
struct Cli {
    #[command(flatten)]
    common: Common,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Noise seed; same as --set seed=N.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the phantom to phantom.vec and phantom.pgm.
    Phantom,
    /// Simulate measurements into sinogram.vec.
    Simulate {
        /// Also save the projection matrix as matrix.csr.
        #[arg(long)]
        save_matrix: bool,
    },
    /// Run one algorithm; writes recon.vec, recon.pgm, curve.csv, summary.csv.
    Reconstruct,
    /// Rank parameter sets by their smallest selective error.
    Sweep {
        /// Grid file: one line of KEY=VALUE overrides per parameter set.
        #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
        grid: Option<PathBuf>,
        /// Built-in full grid for one algorithm.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Run several configs on one phantom; writes compare.csv.
    Compare {
        /// Config files; --set and --seed apply to each.
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
    },
}

fn read_raw(path: Option<&PathBuf>, common: &Common) -> Result<RawConfig, CliError> {
    let mut raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                context: p.display().to_string(),
                source,
            })?;
            RawConfig::parse(&text)
                .map_err(|e| CliError::Config(format!("{}: {}", p.display(), strip(e))))?
        }
        None => RawConfig::default(),
    };
    for pair in &common.overrides {
        raw.set(pair)?;
    }
    if let Some(seed) = common.seed {
        raw.set(&format!("seed={seed}"))?;
    }
    Ok(raw)
}

fn strip(e: CliError) -> String {
    match e {
        CliError::Config(m) => m,
        other => other.to_string(),
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    configure_threads(std::env::var(THREADS_VAR).ok().as_deref())?;
    let common = &cli.common;
    let out = &common.out;
    match cli.command {
        Command::Phantom => {
            let cfg = read_raw(common.config.as_ref(), common)?.resolve()?;
            commands::cmd_phantom(&cfg, out)?;
        }
        Command::Simulate { save_matrix } => {
            let cfg = read_raw(common.config.as_ref(), common)?.resolve()?;
            commands::cmd_simulate(&cfg, out, save_matrix)?;
        }
        Command::Reconstruct => {
            let cfg = read_raw(common.config.as_ref(), common)?.resolve()?;
            let outcome = commands::cmd_reconstruct(&cfg, out)?;
            let s = &outcome.summary;
            match (s.argmin_k, s.min_se) {
                (Some(k), Some(se)) => {
                    println!("{}: k={} min SE {se} at k={k} (first {SELECTION_WINDOW})", s.label, outcome.k)
                }
                _ => println!("{}: k={}", s.label, outcome.k),
            }
            if outcome.status == RunStatus::Breakdown {
                eprintln!(
                    "breakdown: pᵀh vanished at iteration {}; the last iterate was written",
                    outcome.k
                );
            }
            return Ok(outcome.status.exit_code());
        }
        Command::Sweep { grid, preset } => {
            let base = read_raw(common.config.as_ref(), common)?;
            let lines = match (grid, preset) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
                        context: path.display().to_string(),
                        source,
                    })?;
                    commands::parse_grid(&text)
                }
                (None, Some(name)) => {
                    let alg: Algorithm = name.parse().map_err(CliError::Config)?;
                    commands::preset_grid(alg)
                }
                (None, None) => unreachable!("clap requires --grid or --preset"),
            };
            let rows = commands::cmd_sweep(&base, &lines, out)?;
            let best = &rows[0];
            println!("best of {}: SE {} at k={} [{}]", rows.len(), best.min_se, best.argmin_k, best.parameters);
        }
        Command::Compare { configs } => {
            let cfgs = configs
                .iter()
                .map(|p| read_raw(Some(p), common)?.resolve())
                .collect::<Result<Vec<Config>, _>>()?;
            let cmp = commands::cmd_compare(&cfgs, out)?;
            for s in &cmp.summaries {
                if let (Some(k), Some(se)) = (s.argmin_k, s.min_se) {
                    println!("{}: min SE {se} at k={k}", s.label);
                }
            }
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("supertomo: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
