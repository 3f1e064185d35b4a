use clap::Parser;
use maglab::config::{parse_config, Command};
use maglab::run::{output_dir, run};
use maglab::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Magnetic Schrödinger laboratory runner.
#[derive(Parser, Debug)]
#[command(name = "maglab", version)]
struct Args {
    /// forward | bounds | carleman | klibanov | stability-sweep | reconstruct
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the configured one).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed (overrides the configured one).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("maglab {}: {e}", args.command);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: &Args) -> Result<String, Error> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(c) = cfg.command {
        if c != args.command {
            return Err(Error::config(format!("config names command {c} but {} was requested", args.command)));
        }
    }
    cfg.command = Some(args.command);
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = output_dir(&cfg, args.out.as_deref());
    cfg.output = out.display().to_string();
    let m = run(&cfg, &out)?;
    let summary = serde_json::to_string(&m.summary).unwrap_or_default();
    Ok(format!("{} -> {} {summary}", m.command, out.display()))
}
