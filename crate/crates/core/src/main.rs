use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mechnum::experiments::{
    self, run_esem_misreport_suite, run_sem_suite, EsemMisreportParams, ExperimentConfig, ExperimentKind, Report,
    SemSuiteParams,
};
use mechnum::Result;

#[derive(Debug, Parser)]
#[command(name = "mechnum", version, about = "Dual pricing and subsidized exchange experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its CSV artifacts and summary.json.
    Run {
        experiment: ExperimentKind,
        /// TOML overrides on top of the experiment's pinned defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a property audit and print its JSON summary.
    Check {
        suite: Suite,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the audit's artifacts here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Oracle,
    Lemmas,
    Sem,
    Esem,
}

fn load(kind: ExperimentKind, config: Option<&PathBuf>) -> Result<ExperimentConfig> {
    match config {
        Some(path) => {
            let cfg = ExperimentConfig::from_toml_str(&std::fs::read_to_string(path)?)?;
            if cfg.experiment != kind {
                return Err(mechnum::Error::Config(format!(
                    "config names experiment {} but {} was requested",
                    cfg.experiment.as_str(),
                    kind.as_str()
                )));
            }
            Ok(cfg)
        }
        None => Ok(ExperimentConfig::defaults(kind)),
    }
}

fn execute(cli: Cli) -> Result<bool> {
    let (report, out): (Report, Option<PathBuf>) = match cli.command {
        Command::Run { experiment, config, seed, out } => {
            let mut cfg = load(experiment, config.as_ref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            (experiments::run(&cfg)?, Some(dir))
        }
        Command::Check { suite, seed, out } => {
            let kind = match suite {
                Suite::Oracle => ExperimentKind::OracleCheck,
                Suite::Lemmas => ExperimentKind::DualAudit,
                Suite::Sem => ExperimentKind::Example2,
                Suite::Esem => ExperimentKind::Example3,
            };
            let mut cfg = ExperimentConfig::defaults(kind);
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let report = match suite {
                Suite::Oracle | Suite::Lemmas => experiments::run(&cfg)?,
                Suite::Sem => run_sem_suite(&cfg, &SemSuiteParams::default())?,
                Suite::Esem => run_esem_misreport_suite(&cfg, &EsemMisreportParams::default())?,
            };
            (report, out)
        }
    };
    if let Some(dir) = out {
        report.write_to(&dir)?;
    }
    println!("{}", serde_json::to_string_pretty(&report.summary)?);
    Ok(report.summary.all_passed())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
