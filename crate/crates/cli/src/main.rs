use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use evpool::pipeline::{self, PipelineConfig};
use evpool::preprocess::ResponseTransform;
use evpool::synth::{generate_world, SynthConfig};
use evpool::{Error, Result};

#[derive(Parser)]
#[command(name = "evpool", version, about = "Spatial lasso analysis of charging-pool energy demand")]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline config (TOML), or a manifest.json from an earlier run.
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Bootstrap replicates B.
    #[arg(long)]
    replicates: Option<usize>,
    /// Cross-validation folds k.
    #[arg(long)]
    folds: Option<usize>,
    /// Buffer radius in metres.
    #[arg(long)]
    radius: Option<f64>,
    /// Worker threads (0: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Response transform: identity, sqrt, square, log or box-cox(λ).
    #[arg(long)]
    transform: Option<ResponseTransform>,
}

#[derive(Subcommand)]
enum Command {
    /// Apply missing-value rules and extract buffer features.
    Extract(Common),
    /// Aggregate events into usage metrics and fit the decomposition models.
    Decompose(Common),
    /// Drop uninformative, correlated and collinear features; transform; Cook's filter.
    Preprocess(Common),
    /// Cross-validated Lasso fit.
    Fit(Common),
    /// Bootstrap stability analysis.
    Bootstrap(Common),
    /// Distribution model scan and fit of the response.
    Distfit(Common),
    /// Summarise the run.
    Report(Common),
    /// Run every stage in order.
    Run(Common),
    /// Generate a synthetic world and a matching pipeline config.
    Synth {
        /// Synth config (TOML); defaults when omitted.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Directory for the world files.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(c: &Common) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(&c.config)?;
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.output {
        cfg.output_dir = std::path::absolute(v)?;
    }
    if let Some(v) = c.replicates {
        cfg.bootstrap.replicates = v;
    }
    if let Some(v) = c.folds {
        cfg.lasso.folds = v;
    }
    if let Some(v) = c.radius {
        cfg.buffer_radius_m = v;
    }
    if let Some(v) = c.workers {
        cfg.workers = v;
    }
    if let Some(v) = c.transform {
        cfg.response_transform = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(config: Option<PathBuf>, output: PathBuf, seed: Option<u64>) -> Result<()> {
    let mut cfg = match config {
        Some(p) => SynthConfig::from_toml(&std::fs::read_to_string(&p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let world = generate_world(&cfg)?;
    world.write(&output)?;
    let pc = pipeline::synthetic_pipeline_config(&output, &cfg);
    std::fs::write(output.join("pipeline.toml"), pc.to_toml()?)?;
    log::info!("world written to {}; run with --config {}", output.display(), output.join("pipeline.toml").display());
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    let (stage, common) = match cmd {
        Command::Synth { config, output, seed } => return synth(config, output, seed),
        Command::Run(c) => {
            let cfg = load(&c)?;
            let s = pipeline::run_pipeline(&cfg)?;
            let text = serde_json::to_string_pretty(&s)?;
            // A closed pipe (e.g. `| head`) is not a pipeline failure.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            return Ok(());
        }
        Command::Extract(c) => ("extract", c),
        Command::Decompose(c) => ("decompose", c),
        Command::Preprocess(c) => ("preprocess", c),
        Command::Fit(c) => ("fit", c),
        Command::Bootstrap(c) => ("bootstrap", c),
        Command::Distfit(c) => ("distfit", c),
        Command::Report(c) => ("report", c),
    };
    let cfg = load(&common)?;
    pipeline::run_stage(&cfg, stage)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
