//! Subcommands of the `obpuf` binary.
//!
//! Every subcommand resolves its configuration from built-in defaults, an
//! optional TOML file (`--config`) and command-line flags, in that order of
//! increasing precedence.

pub mod attack;
pub mod capability;
pub mod design;
pub mod device;
pub mod distances;
pub mod protocol;

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(name = "obpuf", version, about = "Obfuscated arbiter PUF authentication workbench")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Root seed; drawn at random and echoed when omitted.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with parameters for the subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an OB-PUF and write its device record.
    Device(device::DeviceArgs),
    /// Calibrate the noise scale for a target flip rate.
    Calibrate(device::CalibrateArgs),
    /// Design a pattern set and report pairwise FHD statistics.
    Design(design::DesignArgs),
    /// Minimum rounds per EER target from the analytic estimators.
    Capability(capability::CapabilityArgs),
    /// Monte Carlo inter- and intra-distance estimates with histograms.
    Distances(distances::DistancesArgs),
    /// Run genuine and impostor authentication sessions.
    Protocol(protocol::ProtocolArgs),
    /// Modeling-attack campaigns and the plain-APUF baseline.
    Attack(attack::AttackArgs),
}

#[derive(Debug)]
pub enum CliError {
    /// Bad parameters; exit code 2.
    Usage(String),
    /// Anything that went wrong while running; exit code 1.
    Runtime(anyhow::Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CmdResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Maps parameter-validation failures from the core to usage errors.
pub fn params<T>(r: obpuf_core::Result<T>) -> CmdResult<T> {
    use obpuf_core::Error as E;
    r.map_err(|e| match e {
        E::TooManyPatterns { patterns, bits } => usage(format!(
            "p = {patterns} patterns need pairwise distinct inserted values, but m = {bits} bits only allow {} of them; \
             raise m or lower p",
            1u128 << bits.min(127)
        )),
        E::ZeroStages | E::InvalidParameter(_) | E::LengthMismatch { .. } | E::EmptyGroup => usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    })
}

/// What a subcommand produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub seed: u64,
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
}

/// Reads the TOML config or returns defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CmdResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| usage(format!("invalid config {}: {e}", p.display())))
        }
    }
}

/// Flag value, else config value, else a freshly drawn seed that is echoed
/// to stderr so the run can be repeated.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> u64 {
    flag.or(file).unwrap_or_else(|| {
        let s = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

/// Copies every flag that was given over the config value.
macro_rules! apply_flags {
    ($args:expr, $cfg:expr; $($field:ident),* $(,)?) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = v; } )*
    };
}
pub(crate) use apply_flags;

pub fn run(cli: Cli) -> CmdResult<Outcome> {
    let c = &cli.common;
    match &cli.command {
        Command::Device(a) => device::run_device(c, a),
        Command::Calibrate(a) => device::run_calibrate(c, a),
        Command::Design(a) => design::run(c, a),
        Command::Capability(a) => capability::run(c, a),
        Command::Distances(a) => distances::run(c, a),
        Command::Protocol(a) => protocol::run(c, a),
        Command::Attack(a) => attack::run(c, a),
    }
}
