use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use herglotz_cli::commands::run;
use herglotz_cli::{AppError, RunConfig};

#[derive(Parser)]
#[command(
    name = "herglotz",
    version,
    about = "Herglotz variational problems and contact Hamilton-Jacobi evolution"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Two-point problem: direct minimizer plus characteristic shot.
    Bvp(Common),
    /// Lax-Oleinik evolution of grid data.
    Evolve(Common),
    /// Residual suites on a minimizer.
    Verify(Common),
    /// Sampling audit of the model's assumption constants.
    Audit(Common),
    /// A-priori bound chain and search radius.
    Bounds(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn execute(name: &str, args: &Common) -> Result<Option<String>, AppError> {
    let mut cfg = RunConfig::load(&args.config)?;
    let block = cfg.command()?.name();
    if block != name {
        return Err(AppError::Config(format!(
            "`{name}` needs a `{name}` block, the config has `{block}`"
        )));
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(args.threads)
            .build_global()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    }
    let out_dir = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let base = args.config.parent().map(|p| p.to_path_buf()).unwrap_or_default();
    let outcome = run(&cfg, &base)?;
    for path in outcome.outputs.write(&out_dir)? {
        println!("{}", path.display());
    }
    Ok(outcome.failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Cmd::Bvp(a) => ("bvp", a),
        Cmd::Evolve(a) => ("evolve", a),
        Cmd::Verify(a) => ("verify", a),
        Cmd::Audit(a) => ("audit", a),
        Cmd::Bounds(a) => ("bounds", a),
    };
    match execute(name, args) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(failure)) => {
            eprintln!("solver failure: {failure}");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
