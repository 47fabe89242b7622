mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "async-explore", version, about = "Multi-agent grid exploration experiments")]
struct Cli {
    /// Worker threads for episode fan-out (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config: per-episode logs and a results row.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Play every episode on this ASCII map.
        #[arg(long)]
        map_file: Option<PathBuf>,
    },
    /// Run several configs on the same episodes and tabulate them.
    Compare {
        /// A matrix file, or several experiment files (repeat the flag).
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Play every episode on this ASCII map.
        #[arg(long)]
        map_file: Option<PathBuf>,
    },
    /// Train a policy; resumes when the output directory holds a state.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Start over even if a trainer state exists.
        #[arg(long)]
        fresh: bool,
    },
    /// Render an episode log as ASCII frames.
    Replay {
        log: PathBuf,
        /// Emit a frame every K events.
        #[arg(long, default_value_t = 1)]
        every: usize,
    },
    /// Generate maps.
    MapGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn overrides(seed: Option<u64>, map_file: Option<PathBuf>) -> commands::Overrides {
    commands::Overrides { seed, map_file }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            map_file,
        } => commands::run(&config, &overrides(seed, map_file), out),
        Command::Compare {
            config,
            seed,
            out,
            map_file,
        } => commands::compare(&config, &overrides(seed, map_file), out),
        Command::Train {
            config,
            seed,
            out,
            fresh,
        } => commands::train(config.as_deref(), seed, &out, fresh),
        Command::Replay { log, every } => commands::replay(&log, every),
        Command::MapGen { config, seed, out } => commands::map_gen(config.as_deref(), seed, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return ExitCode::from(2);
        }
        pool = pool.num_threads(j);
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(cli)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
