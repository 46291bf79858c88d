use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cohort_mtl_cli::{CliError, CliResult, ExperimentConfig, Outcome, Pipeline, Stage};

#[derive(Parser)]
#[command(name = "cohort-mtl", version, about = "Cohort discovery and multi-task mortality prediction")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rerun stages even when their artifacts are up to date.
    #[arg(long, global = true)]
    force: bool,
    #[arg(long, global = true, default_value = "stages")]
    stage_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Synth,
    Ingest,
    Embed,
    Cluster,
    Train,
    Evaluate,
    Report,
    /// Every stage in order.
    Run,
    /// Print the effective configuration.
    ShowConfig,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    let stage = match cli.command {
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            println!("# digest {}", cfg.digest());
            return Ok(());
        }
        Command::Run => None,
        Command::Synth => Some(Stage::Synth),
        Command::Ingest => Some(Stage::Ingest),
        Command::Embed => Some(Stage::Embed),
        Command::Cluster => Some(Stage::Cluster),
        Command::Train => Some(Stage::Train),
        Command::Evaluate => Some(Stage::Evaluate),
        Command::Report => Some(Stage::Report),
    };
    let mut p = Pipeline::open(cfg, &cli.stage_dir, cli.force)?;
    match stage {
        None => p.run_all()?,
        Some(s) => {
            let o = p.run(s)?;
            if o == Outcome::UpToDate {
                eprintln!("{}: up to date (use --force to rerun)", s.name());
            }
        }
    }
    if matches!(stage, None | Some(Stage::Report)) {
        let path = p.path(cohort_mtl_cli::stages::files::REPORT_MD);
        print!("{}", std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
