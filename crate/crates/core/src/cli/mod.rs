//! Command-line pipeline: ingest, cluster, classify, screen, estimate,
//! recover costs, solve counterfactuals, compute welfare and report.

mod artifacts;
mod config;
mod report;
mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use log::error;

pub use artifacts::{Envelope, Stamp, Workspace, ARTIFACT_VERSION};
pub use config::PipelineConfig;
pub use report::{report, SellerGroup, Summary, FIG7, FIG8, SUMMARY, TABLE10, TABLE6, TABLE8, TABLE9};
pub use stages::{
    classify, cluster, costs, counterfactual, estimation, ingest, screen, synth, welfare, ClusterArtifact,
    MarketCosts, MarketEquilibria, SpArtifact, CLUSTERS, COSTS, EQUILIBRIA, ESTIMATES, LISTINGS, MARKETS, SP_FLAGS,
    SYNTH_LISTINGS, SYNTH_TRUTH, WELFARE,
};

use crate::dataio::CompetitionMode;
use crate::error::{Error, ErrorKind, Result};
use crate::supply::Scenario;

/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "CONDUCTSIM_LOG";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "conductsim", version, about = "Platform conduct counterfactuals on differentiated-product markets")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for market-level work.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Scenarios to solve; repeat or separate with commas.
    #[arg(long, global = true, value_delimiter = ',')]
    pub scenario: Vec<Scenario>,
    /// `with-hotels` or `only-airbnb`.
    #[arg(long, global = true)]
    pub mode: Option<CompetitionMode>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Read, validate and merge listing CSVs.
    Ingest,
    /// Cluster pooled prices.
    Cluster,
    /// Flag smart-pricing listings.
    ClassifySp,
    /// Build markets and drop products below the share threshold.
    Screen,
    /// Estimate demand by two-step GMM.
    Estimate,
    /// Recover marginal costs under baseline conduct.
    Costs,
    /// Solve equilibria for each scenario.
    Counterfactual,
    /// Consumer, producer and total surplus per market.
    Welfare,
    /// Generate a synthetic listing panel with known parameters.
    Synth,
    /// Write report tables and figure data.
    Report,
    /// Every stage in order; runs `synth` first when no input is configured.
    Run,
}

impl Cli {
    /// Loads the configuration file and applies flag overrides.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if !self.scenario.is_empty() {
            c.scenarios = self.scenario.clone();
        }
        if let Some(mode) = self.mode {
            c.mode = mode;
        }
        if let Some(out) = &self.output {
            c.output_dir = out.clone();
        }
        c.validate()?;
        Ok(c.resolved())
    }
}

pub fn workspace(config: &PipelineConfig) -> Workspace {
    Workspace::new(&config.output_dir, config.hash(), config.seed)
}

fn run_stage(command: Command, config: &PipelineConfig, ws: &Workspace) -> Result<()> {
    match command {
        Command::Ingest => ingest(config, ws).map(drop),
        Command::Cluster => cluster(config, ws).map(drop),
        Command::ClassifySp => classify(config, ws).map(drop),
        Command::Screen => screen(config, ws).map(drop),
        Command::Estimate => estimation(config, ws).map(drop),
        Command::Costs => costs(config, ws).map(drop),
        Command::Counterfactual => counterfactual(config, ws).map(drop),
        Command::Welfare => welfare(config, ws).map(drop),
        Command::Synth => synth(config, ws).map(drop),
        Command::Report => report(config, ws).map(drop),
        Command::Run => {
            if config.inputs.is_empty() {
                synth(config, ws)?;
            }
            for stage in [
                Command::Ingest,
                Command::Cluster,
                Command::ClassifySp,
                Command::Screen,
                Command::Estimate,
                Command::Costs,
                Command::Counterfactual,
                Command::Welfare,
                Command::Report,
            ] {
                run_stage(stage, config, ws)?;
            }
            Ok(())
        }
    }
}

/// Runs one subcommand with an optional thread budget.
pub fn run(command: Command, config: &PipelineConfig, jobs: Option<usize>) -> Result<()> {
    let ws = workspace(config);
    match jobs {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
            pool.install(|| run_stage(command, config, &ws))
        }
        None => run_stage(command, config, &ws),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Io => EXIT_FAILURE,
    }
}

/// Binary entry point; returns the process exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).try_init();
    let cli = Cli::parse();
    let outcome = cli
        .pipeline_config()
        .and_then(|config| run(cli.command, &config, cli.jobs));
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
