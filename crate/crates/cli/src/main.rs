use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use vlp_cli::{
    cmd_bench, cmd_report, cmd_simulate, cmd_track, load_config, resolve_track_config, BenchSpec, CliError,
};
use vlp_core::config::ConfigFile;
use vlp_core::scene_sim::SceneConfig;

/// Visible-light positioning: simulate rolling-shutter frames, track two
/// lamps through them, and benchmark the tracker.
#[derive(Debug, Parser)]
#[command(name = "vlp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a scene to frame_NNNNNN.pgm files plus groundtruth.jsonl.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track lamps through a directory of frames and write fixes.jsonl.
    Track {
        #[arg(long)]
        frames: PathBuf,
        /// Defaults to the config.json written by `simulate`.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the frames directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run paired pipeline/baseline experiments on simulated scenes.
    Bench {
        /// Defaults to the built-in reference scene.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scenario spec; defaults to reference, occlusion and height runs.
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a tracked run against its ground truth.
    Report {
        /// Directory holding groundtruth.jsonl and fixes.jsonl.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to <frames>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(summary: &impl Serialize) {
    println!("{}", serde_json::to_string(summary).expect("summary serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    let quiet = cli.quiet;
    let progress = move |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let config = load_config(&config, seed)?;
            print_summary(&cmd_simulate(&config, &out, &progress)?);
        }
        Command::Track { frames, config, out } => {
            let config = load_config(&resolve_track_config(&frames, config.as_deref())?, None)?;
            print_summary(&cmd_track(&frames, &config, out.as_deref().unwrap_or(&frames))?);
        }
        Command::Bench { config, scenarios, out, seed } => {
            let mut config = match config {
                Some(p) => load_config(&p, None)?,
                None => ConfigFile::from_scene(&SceneConfig::reference()),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            let spec = match scenarios {
                Some(p) => BenchSpec::load(&p)?,
                None => BenchSpec::default(),
            };
            print_summary(&cmd_bench(&config, &spec, &out, &progress)?);
        }
        Command::Report { frames, config, out } => {
            let config = load_config(&resolve_track_config(&frames, config.as_deref())?, None)?;
            let out = out.unwrap_or_else(|| frames.join("report"));
            print_summary(&cmd_report(&frames, &config, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
