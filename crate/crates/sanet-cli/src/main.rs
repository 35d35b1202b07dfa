use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use sanet::config::PipelineConfig;
use sanet::runner::{self, RunOverrides};

/// Unsupervised image clustering with a spectral analysis network.
#[derive(Parser)]
#[command(name = "sanet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write metrics, features and the resolved config.
    Run {
        /// Config file or preset name (mnist-default, usps-default, ar-default, fashion-default).
        config: String,
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cluster first-layer spectral features and tile the nearest patches.
    VisualizePatterns {
        config: String,
        #[arg(long)]
        centers: usize,
        #[arg(long)]
        subsample: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config against its dataset without running anything heavy.
    Validate { config: String },
}

fn load(spec: &str, overrides: &RunOverrides) -> sanet::Result<PipelineConfig> {
    let mut config = PipelineConfig::load_or_preset(spec)?;
    overrides.apply(&mut config);
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            subsample,
            seed,
            out,
        } => {
            let overrides = RunOverrides { subsample, seed, out };
            load(&config, &overrides).and_then(|c| runner::run(&c)).map(|s| {
                println!(
                    "acc {:.4}  nmi {:.4}  ({} images, {} features) -> {}",
                    s.metrics.acc,
                    s.metrics.nmi,
                    s.info.images,
                    s.info.feature_dim,
                    s.out_dir.display()
                );
                if let Some(b) = s.baseline {
                    println!("raw pixels: acc {:.4}  nmi {:.4}", b.acc, b.nmi);
                }
            })
        }
        Command::VisualizePatterns {
            config,
            centers,
            subsample,
            seed,
            out,
        } => {
            let overrides = RunOverrides { subsample, seed, out };
            load(&config, &overrides)
                .and_then(|c| runner::visualize_patterns(&c, centers))
                .map(|p| println!("{}", p.display()))
        }
        Command::Validate { config } => load(&config, &RunOverrides::default())
            .and_then(|c| runner::validate(&c))
            .map(|d| println!("ok: {} images, {} classes", d.len(), d.class_count)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
