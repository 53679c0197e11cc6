use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "netfbm", version, about = "Diffusion on metric graphs driven by fractional Brownian node noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the study named in a config file and write CSV/JSON artifacts.
    Run {
        /// Path to the experiment config (TOML).
        config: PathBuf,
        /// Override the config's noise seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's output_dir, else "out").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a config without running anything.
    Validate {
        /// Path to the experiment config (TOML).
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    // NETFBM_THREADS caps the Monte Carlo thread pool; BLAS stays
    // single-threaded for reproducible reductions.
    if std::env::var_os("OPENBLAS_NUM_THREADS").is_none() {
        std::env::set_var("OPENBLAS_NUM_THREADS", "1");
    }
    if let Ok(threads) = std::env::var("NETFBM_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .ok();
        }
    }

    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> netfbm::Result<ExitCode> {
    match cli.command {
        Command::Validate { config } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = netfbm::config::validate_config(&text)?;
            println!("ok: study = {}, config hash = {}", cfg.study.name(), cfg.hash());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, seed, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = netfbm::config::validate_config(&text)?;
            let out_dir = out
                .or_else(|| cfg.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let result = netfbm::study::run_study(&cfg, &out_dir, seed)?;
            for a in &result.assertions {
                println!(
                    "{} {} ({})",
                    if a.passed { "PASS" } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            if let Some(err) = &result.error {
                eprintln!("study error: {err}");
            }
            println!(
                "manifest: {} ({} artifacts)",
                result.manifest_path.display(),
                result.csv_paths.len()
            );
            Ok(if result.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}
