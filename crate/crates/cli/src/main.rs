use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use topocavity::em::ResolutionProfile;
use topocavity_cli::{
    cmd_disorder, cmd_dynamics, cmd_optimize, cmd_probe_green, cmd_spectrum, describe, CliResult, Context, Failure,
    RunConfig,
};

#[derive(Parser, Debug)]
#[command(name = "topocavity", version, about = "Inverse-designed dielectric cavities for topological qubit chains")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "topocavity.toml")]
    config: PathBuf,
    /// Output directory, overriding `out_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Random seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Resolution profile, overriding the config.
    #[arg(long, global = true, value_parser = ["coarse", "default"])]
    profile: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the two-stage optimisation and write snapshots and the trace.
    Optimize,
    /// Eigenvalues, edge wavefunctions and the eigenbasis dissipator of a snapshot.
    Spectrum {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Single-excitation population dynamics for a snapshot.
    Dynamics {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Disorder fidelity tables for a snapshot.
    Disorder {
        #[arg(long)]
        snapshot: PathBuf,
    },
    /// Green's function between two points, e.g. `--r1 0,0,-180 --r2 0,0,180` (nm).
    ProbeGreen {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long, value_parser = parse_point)]
        r1: [f64; 3],
        #[arg(long, value_parser = parse_point)]
        r2: [f64; 3],
    },
    /// Print the config hash and chain geometry.
    Info,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected x,y,z, got {s:?}"))
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot configure {n} threads: {e}"))?;
    }
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(out) = cli.out {
        config.out_dir = out;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.profile.as_deref() {
        Some("coarse") => config.profile = ResolutionProfile::Coarse,
        Some("default") => config.profile = ResolutionProfile::Default,
        _ => {}
    }
    let ctx = Context::new(config)?;
    match cli.command {
        Command::Optimize => {
            let a = cmd_optimize(&ctx)?;
            println!("trace {}", a.trace.display());
            println!("final {}", a.final_grid.display());
        }
        Command::Spectrum { snapshot } => {
            for p in cmd_spectrum(&ctx, &snapshot)? {
                println!("{}", p.display());
            }
        }
        Command::Dynamics { snapshot } => println!("{}", cmd_dynamics(&ctx, &snapshot)?.display()),
        Command::Disorder { snapshot } => {
            for p in cmd_disorder(&ctx, &snapshot)? {
                println!("{}", p.display());
            }
        }
        Command::ProbeGreen { snapshot, r1, r2 } => {
            let probe = cmd_probe_green(&ctx, snapshot.as_deref(), r1, r2)?;
            println!("{}", serde_json::to_string_pretty(&probe).map_err(anyhow::Error::from)?);
        }
        Command::Info => println!("{}", describe(&ctx)),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code as u8)
        }
    }
}
