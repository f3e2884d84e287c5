//! `roughctl`: runs one experiment stage from a TOML config.
//!
//! Exit status is 0 on success, 1 on a runtime failure (details in
//! `error.json` under the output directory) and 2 on an invalid config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use roughcontrol::experiment::{load_config, run, write_error, Subcommand};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stage {
    Gen,
    Integrate,
    Solve,
    Chatter,
    Optimize,
    Verify,
}

impl From<Stage> for Subcommand {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Gen => Subcommand::Gen,
            Stage::Integrate => Subcommand::Integrate,
            Stage::Solve => Subcommand::Solve,
            Stage::Chatter => Subcommand::Chatter,
            Stage::Optimize => Subcommand::Optimize,
            Stage::Verify => Subcommand::Verify,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "roughctl", version, about = "Young integration and relaxed control experiments")]
struct Args {
    #[arg(value_enum)]
    stage: Stage,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let sub = Subcommand::from(args.stage);
    let mut cfg = match load_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("roughctl: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = args.out {
        cfg.output = out;
    }
    let out = cfg.output.clone();
    match run(sub, &cfg, &out) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("roughctl {}: {e}", sub.as_str());
            match write_error(&out, sub, &e) {
                Ok(p) => eprintln!("details in {}", p.display()),
                Err(io) => eprintln!("could not write error.json: {io}"),
            }
            ExitCode::from(1)
        }
    }
}
