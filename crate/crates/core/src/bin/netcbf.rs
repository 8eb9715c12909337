use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use netcbf::config::{preset_names, preset_source, ExperimentConfig};
use netcbf::runner::{execute, exit_code_for, Command, RunOptions};

/// CBF safety-filter experiments on networked systems.
#[derive(Parser)]
#[command(name = "netcbf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one configuration and write trajectory CSVs.
    Run(Common),
    /// Sweep the time-scale parameter and write the violation heatmap.
    Sweep(Common),
    /// Check the tracking and deviation bounds; exit 0 iff all hold.
    Verify(Common),
    /// List the shipped presets, or print one.
    Presets {
        /// Preset to print.
        name: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Shipped preset name (see `netcbf presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel work.
    #[arg(long)]
    jobs: Option<usize>,
    /// Sampling seed (overrides `analysis.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Presets { name: None } => {
            for name in preset_names() {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Cmd::Presets { name: Some(name) } => {
            return match preset_source(&name) {
                Ok(src) => {
                    print!("{src}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    let cfg = match (&common.config, &common.preset) {
        (Some(path), _) => ExperimentConfig::from_path(path),
        (None, Some(name)) => ExperimentConfig::preset(name),
        (None, None) => unreachable!("clap requires one of --config/--preset"),
    };
    let opts = RunOptions {
        out: common.out,
        jobs: common.jobs,
        seed: common.seed,
    };
    let result = cfg.and_then(|cfg| execute(command, cfg, &opts));
    match result {
        Ok(outcome) => {
            for line in &outcome.messages {
                println!("{line}");
            }
            println!(
                "wrote {} files to {}",
                outcome.manifest.files.len() + 1,
                outcome.out_dir.display()
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
