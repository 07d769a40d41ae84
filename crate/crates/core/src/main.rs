use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use smallgeo::pipeline::{load_config, run_command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Generate a synthetic scene and a config that runs on it.
    Synth,
    /// Split polygons, rasterize them and draw training pixels.
    Sample,
    /// Train the configured pathway.
    Train,
    /// Classify the input raster with a saved model.
    Predict,
    /// Score a class map against held-out truth.
    Evaluate,
    /// Sample, train, predict and evaluate one pathway.
    Run,
    /// Run rf, svm and unet on one shared split and report them side by side.
    Compare,
}

#[derive(Debug, Parser)]
#[command(name = "smallgeo", version, about = "Desk-scale land-cover segmentation")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML config, or a manifest.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random stage, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let name = cli.command.to_possible_value().expect("named").get_name().to_string();
    let result = load_config(&cli.config)
        .map_err(|e| e.in_stage("config"))
        .and_then(|mut cfg| {
            if let Some(out) = cli.out {
                cfg.run.out = std::path::absolute(&out).unwrap_or(out);
            }
            if let Some(seed) = cli.seed {
                cfg.set_seed(seed);
            }
            run_command(&name, &cfg)
        });
    match result {
        Ok(m) => {
            for a in &m.artifacts {
                println!("{}  {}", a.sha256, a.path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("smallgeo {name}: {e}");
            ExitCode::FAILURE
        }
    }
}
