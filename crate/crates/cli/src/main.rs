use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_cli::run::{
    bound_artifacts, parse_sweep_value, set_path, simulate_artifacts, split_values, sweep_artifacts,
    timebin_artifacts, timeline_artifacts,
};
use afc_cli::timeline::{build_timeline_with, parse_override, TimelineKind};
use afc_cli::{Artifacts, CliError, Format, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "afcmem", version, about = "Stark-modulated AFC quantum memory simulator")]
struct Cli {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "AFC_OUT_DIR", default_value = "afc_out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Echo train, readout-efficiency table and optional pump run.
    Simulate,
    /// Time-bin fidelity table versus mean photon number.
    Timebin,
    /// Classical fidelity bound.
    Bound {
        /// Mean photon numbers; defaults to the scenario's qubit.mu.
        #[arg(long, value_delimiter = ',')]
        mu: Vec<f64>,
        /// Memory efficiency; defaults to the scenario's simulated value.
        #[arg(long)]
        eta: Option<f64>,
    },
    /// Re-runs the scenario for each value of one parameter.
    Sweep {
        /// Dotted key path, e.g. `comb.finesse`.
        #[arg(long)]
        param: String,
        /// Comma-separated TOML values.
        #[arg(long)]
        values: String,
    },
    /// Experimental time sequence.
    Timeline {
        #[arg(long, value_enum, default_value_t = TimelineKind::SingleAfc)]
        kind: TimelineKind,
        /// Repetition override `phase=count`; zero removes the phase.
        #[arg(long = "set")]
        overrides: Vec<String>,
    },
    /// Checks the scenario without running it.
    Validate,
}

fn load(cli: &Cli) -> Result<Scenario, CliError> {
    let path = cli.scenario.as_deref().ok_or_else(|| CliError::Config("--scenario is required".into()))?;
    let mut s = Scenario::load(path)?;
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read scenario {}: {e}", path.display())))
}

fn execute(cli: &Cli) -> Result<Option<Artifacts>, CliError> {
    let art = match &cli.command {
        Command::Simulate => simulate_artifacts(&load(cli)?, cli.format)?,
        Command::Timebin => timebin_artifacts(&load(cli)?, cli.format)?,
        Command::Bound { mu, eta } => {
            let scenario = if mu.is_empty() || eta.is_none() { Some(load(cli)?) } else { None };
            let mus = if mu.is_empty() {
                let s = scenario.as_ref().expect("loaded above");
                s.qubit.as_ref().map(|q| q.mu.clone()).ok_or_else(|| CliError::Config("missing [qubit] section".into()))?
            } else {
                mu.clone()
            };
            let eta = match eta {
                Some(e) => *e,
                None => {
                    let s = scenario.as_ref().expect("loaded above");
                    s.validate()?;
                    s.timebin_setup()?.bench.simulate()?.storage_efficiency
                }
            };
            bound_artifacts(&mus, eta, cli.format)?
        }
        Command::Sweep { param, values } => {
            let path = cli.scenario.as_deref().ok_or_else(|| CliError::Config("--scenario is required".into()))?;
            let mut text = read_text(path)?;
            // Surface schema errors of the base file with its own path.
            Scenario::from_toml_str(&text, path)?;
            if let Some(seed) = cli.seed {
                let mut doc: toml::Value = toml::from_str(&text).expect("parsed above");
                set_path(&mut doc, "seed", parse_sweep_value(&seed.to_string()))?;
                text = toml::to_string(&doc).map_err(|e| CliError::Config(e.to_string()))?;
            }
            sweep_artifacts(&text, param, &split_values(values), cli.format)?
        }
        Command::Timeline { kind, overrides } => {
            let overrides = overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>, _>>()?;
            timeline_artifacts(&build_timeline_with(*kind, &overrides)?, cli.format)?
        }
        Command::Validate => {
            load(cli)?.validate()?;
            println!("scenario ok");
            return Ok(None);
        }
    };
    Ok(Some(art))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli).and_then(|art| match art {
        Some(a) => a.write(&cli.out).map(|()| a.files.len() + 1),
        None => Ok(0),
    }) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            println!("wrote {n} files to {}", cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
