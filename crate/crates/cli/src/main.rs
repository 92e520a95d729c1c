use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;
use tailforge::commands::{self, Command, Outputs, POOL_FILE};
use tailforge::config::{RunConfig, Workers, SEED_ENV};
use tailforge::error::CliError;
use tailforge::output::write_atomic;

/// Tail analysis of fixed points of the smoothing transform.
#[derive(Debug, Parser)]
#[command(name = "tailforge", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; created on success.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads, or "auto". Results do not depend on it.
    #[arg(long, value_parser = Workers::parse)]
    workers: Option<Workers>,
}

fn execute(cli: &Cli) -> Result<Outputs, CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    let env = commands::seed_env();
    let configured = cfg.seed;
    let source = cfg.apply_seed_env(env.as_deref())?;
    if source == "env" {
        eprintln!("tailforge: seed {} from {SEED_ENV} (config: {configured:?})", cfg.seed.unwrap_or_default());
    }
    let workers = cli.workers.or(cfg.workers).unwrap_or(Workers::parse("auto").expect("auto parses"));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.threads())
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} workers: {e}", workers.threads())))?;
    pool.install(|| commands::run(cli.command, &mut cfg, &cli.out, source))
}

fn write_outputs(out: &Path, o: &Outputs) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    if let Some(pool) = &o.pool {
        let tmp = out.join(format!(".{POOL_FILE}.tmp"));
        pool.save(&tmp)?;
        std::fs::rename(tmp, out.join(POOL_FILE))?;
    }
    write_atomic(out, "grid.csv", &o.csv)?;
    write_atomic(out, "run.json", &o.json)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli).and_then(|o| write_outputs(&cli.out, &o).map(|_| o)) {
        Ok(o) => {
            eprintln!("tailforge {}: {}", cli.command.name(), o.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("tailforge {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
