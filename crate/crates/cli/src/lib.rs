//! The `expca` command-line tool.
//!
//! Subcommands: `fit` (components of a CSV matrix), `expectile` (scalar statistics),
//! `simulate` (Monte-Carlo benchmark grid) and `weather` (temperature residual curves).
//! Each run writes one JSON manifest describing its parameters and convergence.

mod commands;
mod input;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize};

pub use commands::{ExpectileOutput, FitOutput};

const EXIT_HELP: &str = "Exit status:
  0  success
  1  invalid input, usage or configuration error
  2  outputs were written but at least one fit did not converge";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Fit(#[from] expca::Error),
    #[error(transparent)]
    Sim(#[from] expca_simbench::SimError),
    #[error(transparent)]
    Weather(#[from] expca_weather::WeatherError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Whether every fit in a run converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    Unconverged,
}

#[derive(Debug, Parser)]
#[command(name = "expca", version, about = "Principal components in asymmetric norms", after_help = EXIT_HELP)]
pub struct Cli {
    /// TOML file with a table per subcommand whose keys mirror the flags; flags win on conflict
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages [default: all cores]
    #[arg(long, global = true, env = "EXPCA_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit k components to the rows of a numeric CSV matrix
    #[command(after_help = EXIT_HELP)]
    Fit(FitArgs),
    /// Expectile, quantile and dispersion statistics of a sample
    #[command(after_help = EXIT_HELP)]
    Expectile(ExpectileArgs),
    /// Run the simulation study over a grid of configurations
    #[command(after_help = EXIT_HELP)]
    Simulate(SimulateArgs),
    /// Detrend station temperatures and analyze the residual curves
    #[command(after_help = EXIT_HELP)]
    Weather(WeatherArgs),
}

fn one_or_many<'de, D, T>(d: D) -> Result<Option<Vec<T>>, D::Error>
where
    D: Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Some(match OneOrMany::deserialize(d)? {
        OneOrMany::One(t) => vec![t],
        OneOrMany::Many(v) => v,
    }))
}

macro_rules! fill_from {
    ($a:expr, $b:expr; $($f:ident),*) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f.take(); } )*
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    /// Numeric CSV, one observation per row
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Skip the first line of the input
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    /// Expectile level in (0, 1) [default: 0.5]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Number of components, 1 <= k < columns [default: 1]
    #[arg(long)]
    pub k: Option<usize>,
    /// topdown, bottomup or pec [default: topdown]
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Seed for random restarts [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output JSON path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Manifest path [default: next to --out, else standard error]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExpectileArgs {
    /// Comma-separated sample values
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(deserialize_with = "one_or_many")]
    pub values: Option<Vec<f64>>,
    /// CSV file to read the sample from instead of --values
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Column of --input, counting from 1 [default: 1]
    #[arg(long)]
    pub column: Option<usize>,
    /// Skip the first line of the input
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub header: Option<bool>,
    /// Level in (0, 1) [default: 0.5]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Manifest path [default: standard error]
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Settings 1 or 2 [default: 1]
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub setting: Option<Vec<u8>>,
    /// Error scenarios 1 to 5 [default: 1]
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub scenario: Option<Vec<u8>>,
    /// small, medium or large [default: small]
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub size: Option<Vec<String>>,
    /// Expectile levels [default: 0.95]
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub tau: Option<Vec<f64>>,
    /// Algorithms among topdown, bottomup, pec [default: all]
    #[arg(long, alias = "algorithms", value_delimiter = ',')]
    #[serde(alias = "algorithms", deserialize_with = "one_or_many")]
    pub algorithm: Option<Vec<String>>,
    /// Replications per configuration [default: 100]
    #[arg(long)]
    pub replications: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Record wall-clock times (outputs are then no longer byte-stable)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
    /// Eigenvector sign rule inside the PEC iteration: largest-positive, tau-variance or solver [default: largest-positive]
    #[arg(long)]
    pub pec_sign: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct WeatherArgs {
    /// Long CSV with header station_id,date,temp
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Expectile levels [default: 0.05,0.5,0.95]
    #[arg(long, value_delimiter = ',')]
    #[serde(deserialize_with = "one_or_many")]
    pub tau: Option<Vec<f64>>,
    /// Components per fit [default: 2]
    #[arg(long)]
    pub k: Option<usize>,
    /// Algorithms among topdown, bottomup, pec [default: all]
    #[arg(long, alias = "algorithms", value_delimiter = ',')]
    #[serde(alias = "algorithms", deserialize_with = "one_or_many")]
    pub algorithm: Option<Vec<String>>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl FitArgs {
    fn fill(&mut self, mut c: Self) {
        fill_from!(self, c; input, header, tau, k, algorithm, seed, out, manifest);
    }
}

impl ExpectileArgs {
    fn fill(&mut self, mut c: Self) {
        fill_from!(self, c; values, input, column, header, tau, manifest);
    }
}

impl SimulateArgs {
    fn fill(&mut self, mut c: Self) {
        fill_from!(self, c; setting, scenario, size, tau, algorithm, replications, seed, out, timing, pec_sign);
    }
}

impl WeatherArgs {
    fn fill(&mut self, mut c: Self) {
        fill_from!(self, c; input, tau, k, algorithm, out);
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    threads: Option<usize>,
    fit: Option<FitArgs>,
    expectile: Option<ExpectileArgs>,
    simulate: Option<SimulateArgs>,
    weather: Option<WeatherArgs>,
}

fn read_config(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// One record per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub version: String,
    pub seed: u64,
    pub wall_seconds: f64,
    pub convergence: BTreeMap<String, bool>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            parameters: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            wall_seconds: 0.0,
            convergence: BTreeMap::new(),
        }
    }

    fn param(&mut self, key: &str, value: impl Serialize) {
        self.parameters.insert(
            key.into(),
            serde_json::to_value(value).expect("parameters serialize to JSON"),
        );
    }

    fn status(&self) -> Status {
        if self.convergence.values().all(|&c| c) {
            Status::Converged
        } else {
            Status::Unconverged
        }
    }

    fn emit(&mut self, started: Instant, path: Option<&Path>) -> Result<(), CliError> {
        self.wall_seconds = started.elapsed().as_secs_f64();
        match path {
            Some(p) => std::fs::write(p, serde_json::to_string_pretty(self)? + "\n")?,
            None => eprintln!("{}", serde_json::to_string(self)?),
        }
        Ok(())
    }
}

fn execute(cli: Cli) -> Result<Status, CliError> {
    let mut config = match &cli.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        // A pool may already exist when the library is driven in-process more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Fit(mut a) => {
            a.fill(config.fit.take().unwrap_or_default());
            commands::fit(a)
        }
        Command::Expectile(mut a) => {
            a.fill(config.expectile.take().unwrap_or_default());
            commands::expectile(a)
        }
        Command::Simulate(mut a) => {
            a.fill(config.simulate.take().unwrap_or_default());
            commands::simulate(a)
        }
        Command::Weather(mut a) => {
            a.fill(config.weather.take().unwrap_or_default());
            commands::weather(a)
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(Status::Converged) => 0,
        Ok(Status::Unconverged) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
