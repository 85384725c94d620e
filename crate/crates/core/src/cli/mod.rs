//! Command-line front end. Every command writes its resolved configuration
//! into the output so runs can be audited and repeated.

mod commands;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::Error;
use crate::ode::Method;

/// Comma-separated list of numbers, e.g. `0,0,1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Vector(pub Vec<f64>);

impl FromStr for Vector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("'{}': {e}", x.trim())))
            .collect::<Result<Vec<_>, _>>()
            .map(Vector)
    }
}

impl<'de> Deserialize<'de> for Vector {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            List(Vec<f64>),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::List(v) => Ok(Vector(v)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Time interval `a,b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl FromStr for Span {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.parse::<Vector>()?.0.as_slice() {
            [a, b] => Ok(Span(*a, *b)),
            v => Err(format!("expected two numbers a,b, got {}", v.len())),
        }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Adaptive,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Options shared by all commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct Common {
    /// Builtin model (flat, heisenberg, martinet) or path to a JSON model file.
    #[arg(long, global = true, default_value = "heisenberg")]
    pub model: String,
    #[arg(long, global = true, value_enum, default_value = "adaptive")]
    pub method: MethodKind,
    /// Error tolerance of the adaptive integrator.
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    /// Step count of the fixed-step integrator.
    #[arg(long, global = true, default_value_t = 1000)]
    pub steps: usize,
    /// Seed for every random multistart.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to SRKIT_THREADS, then all cores).
    #[arg(long, global = true, env = "SRKIT_THREADS")]
    pub threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

impl Common {
    pub fn integrator(&self) -> Method {
        match self.method {
            MethodKind::Adaptive => Method::adaptive(self.tol),
            MethodKind::Rk4 => Method::rk4(self.steps),
        }
    }
}

/// Where a control curve comes from (exactly one source).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Args)]
pub struct ControlArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub q0: Vector,
    #[arg(long, allow_hyphen_values = true, default_value = "0,1")]
    pub span: Span,
    #[arg(long, default_value_t = 64)]
    pub intervals: usize,
    /// Constant control vector (one entry per frame field).
    #[arg(long, allow_hyphen_values = true)]
    pub constant: Option<Vector>,
    /// Controls as `;`-separated expressions in `t`, sampled at interval midpoints.
    #[arg(long)]
    pub control_expr: Option<String>,
    /// CSV file with one control vector per interval.
    #[arg(long)]
    pub controls: Option<PathBuf>,
    /// Controls of the normal geodesic with this initial covector.
    #[arg(long, allow_hyphen_values = true)]
    pub from_p0: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Integrate a normal geodesic.
    Geodesic {
        #[arg(long, allow_hyphen_values = true)]
        q0: Vector,
        #[arg(long, allow_hyphen_values = true)]
        p0: Vector,
        #[arg(long, allow_hyphen_values = true, default_value = "0,1")]
        span: Span,
        /// Output intervals on a uniform grid.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Solve a geodesic boundary-value problem by shooting.
    Bvp {
        #[arg(long, allow_hyphen_values = true)]
        q0: Vector,
        /// Target point (also the anchor guess for --submanifold).
        #[arg(long, allow_hyphen_values = true)]
        q1: Option<Vector>,
        #[arg(long, allow_hyphen_values = true, default_value = "0,1")]
        span: Span,
        /// Target set as level-set expressions in q1..qn (repeatable).
        #[arg(long)]
        submanifold: Vec<String>,
        /// Start set as level-set expressions (repeatable), anchored near --q0.
        #[arg(long)]
        source: Vec<String>,
        #[arg(long, default_value_t = 32)]
        seeds: usize,
        #[arg(long, default_value_t = 50)]
        max_iter: usize,
        #[arg(long, default_value_t = 1e-10)]
        bvp_tol: f64,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Cross-check with direct minimization.
        #[arg(long)]
        oracle: bool,
        /// Control intervals of the oracle.
        #[arg(long, default_value_t = 256)]
        oracle_intervals: usize,
        #[arg(long, default_value_t = 6)]
        oracle_starts: usize,
    },
    /// Rank of the endpoint differential and abnormality verdict.
    Abnormal {
        #[command(flatten)]
        #[serde(flatten)]
        curve: ControlArgs,
        #[arg(long, default_value_t = 1e3)]
        rank_factor: f64,
        /// Test this covector at the start for being characteristic.
        #[arg(long, allow_hyphen_values = true)]
        characteristic: Option<Vector>,
    },
    /// Unit-speed reparameterization of a horizontal curve.
    Reparam {
        #[command(flatten)]
        #[serde(flatten)]
        curve: ControlArgs,
    },
    /// Endpoints of unit-speed normal geodesics of a given length.
    Ball {
        #[arg(long, allow_hyphen_values = true)]
        q0: Vector,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 200)]
        rays: usize,
    },
    /// Wavefront chart of a hypersurface and its calibration check.
    Wavefront {
        /// Hypersurface as a single expression in q1..qn.
        #[arg(long)]
        surface: String,
        /// Anchor guess on the hypersurface (origin when absent).
        #[arg(long, allow_hyphen_values = true)]
        origin: Option<Vector>,
        /// Covector choosing the side of the hypersurface.
        #[arg(long, allow_hyphen_values = true)]
        seed_covector: Vector,
        #[arg(long, allow_hyphen_values = true, default_value = "0,0.2")]
        t_range: Span,
        #[arg(long, default_value_t = 0.05)]
        half_width: f64,
        #[arg(long, default_value_t = 0.01)]
        spacing: f64,
        /// Finite-difference step of the calibration check (grid spacing when absent).
        #[arg(long)]
        fd_step: Option<f64>,
        #[arg(long)]
        no_calibration: bool,
        /// Random test curves for the length lower bound.
        #[arg(long, default_value_t = 0)]
        curves: usize,
    },
    /// Empirical minimality certificate for a geodesic segment.
    Certify {
        #[arg(long, allow_hyphen_values = true)]
        q0: Vector,
        #[arg(long, allow_hyphen_values = true)]
        p0: Vector,
        #[arg(long)]
        epsilon: f64,
        /// Start set as level-set expressions (a point when absent).
        #[arg(long)]
        source: Vec<String>,
        #[arg(long, default_value_t = 256)]
        oracle_intervals: usize,
        #[arg(long, default_value_t = 6)]
        oracle_starts: usize,
        #[arg(long, default_value_t = 1e-3)]
        calibration_tol: f64,
        #[arg(long, default_value_t = 1e-4)]
        oracle_tol: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Geodesic { .. } => "geodesic",
            Command::Bvp { .. } => "bvp",
            Command::Abnormal { .. } => "abnormal",
            Command::Reparam { .. } => "reparam",
            Command::Ball { .. } => "ball",
            Command::Wavefront { .. } => "wavefront",
            Command::Certify { .. } => "certify",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Parser)]
#[command(name = "srkit", version, about = "Sub-Riemannian geodesics, endpoint maps and abnormal extremals")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
    /// JSON file whose keys override the flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

/// Exit statuses.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERIC: i32 = 3;
    pub const HYPOTHESIS: i32 = 4;
}

/// Why a command failed.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Engine(Error::Io(e))
    }
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => exit::CONFIG,
            Failure::Engine(e) => match e {
                Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::OutOfChart { .. } | Error::DegenerateFrame { .. } => {
                    exit::CONFIG
                }
                Error::TransversalityFailure { .. } | Error::NonHorizontal { .. } | Error::NormalizationFailure { .. } | Error::ZeroLength => exit::HYPOTHESIS,
                Error::StepFailure { .. }
                | Error::EnergyDrift { .. }
                | Error::NoConvergence { .. }
                | Error::SingularJacobian { .. }
                | Error::SingularTransition { .. } => exit::NUMERIC,
            },
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Engine(e) => write!(f, "{e}"),
        }
    }
}

/// Checks the arity of a vector flag.
pub(crate) fn vector_arg(v: &Vector, n: usize, flag: &str) -> Result<DVector<f64>, Failure> {
    if v.0.len() != n {
        return Err(Failure::Config(format!("--{flag} expects {n} values, got {}", v.0.len())));
    }
    Ok(DVector::from_column_slice(&v.0))
}

/// Applies the keys of a JSON config object over the parsed flags. Keys
/// name shared options, options of the active command, or the command
/// itself with a nested object.
pub fn merge_config(cli: &Cli, file: &serde_json::Value) -> Result<Cli, Failure> {
    let overrides = file.as_object().ok_or_else(|| Failure::Config("config file must hold a JSON object".into()))?;
    let mut value = serde_json::to_value(cli).map_err(|e| Failure::Config(e.to_string()))?;
    let name = cli.command.name();
    for (key, v) in overrides {
        if key == name {
            let nested = v
                .as_object()
                .ok_or_else(|| Failure::Config(format!("config key '{key}' must hold an object")))?;
            for (k, v) in nested {
                set_key(&mut value["command"][name], k, v)?;
            }
        } else if value["common"].get(key).is_some() {
            value["common"][key] = v.clone();
        } else if value["command"][name].get(key).is_some() {
            value["command"][name][key] = v.clone();
        } else {
            return Err(Failure::Config(format!("unknown config key '{key}' for command {name}")));
        }
    }
    let mut merged: Cli = serde_json::from_value(value).map_err(|e| Failure::Config(format!("config file: {e}")))?;
    merged.config = cli.config.clone();
    Ok(merged)
}

fn set_key(obj: &mut serde_json::Value, key: &str, v: &serde_json::Value) -> Result<(), Failure> {
    if obj.get(key).is_none() {
        return Err(Failure::Config(format!("unknown config key '{key}'")));
    }
    obj[key] = v.clone();
    Ok(())
}

/// Output of a command: the payload, a short summary and the exit status.
pub(crate) struct Emitted {
    pub body: Vec<u8>,
    pub summary: serde_json::Value,
    pub status: i32,
}

/// Audit block echoed into every output.
pub(crate) fn meta(cli: &Cli) -> serde_json::Value {
    serde_json::json!({
        "tool": "srkit",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cli.command.name(),
        "config": cli,
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Payloads go to `--out` or `stdout`; diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = if code == exit::OK { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(code) => code,
        // A closed pipe (`srkit ... | head`) is not an error.
        Err(Failure::Engine(Error::Io(e))) if e.kind() == std::io::ErrorKind::BrokenPipe => exit::OK,
        Err(f) => {
            let _ = writeln!(stderr, "srkit: {f}");
            f.code()
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let cli = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
            merge_config(&cli, &file)?
        }
        None => cli,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.common.threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| Failure::Config(e.to_string()))?;
    let emitted = pool.install(|| commands::dispatch(&cli))?;
    match &cli.common.out {
        Some(path) => {
            std::fs::write(path, &emitted.body)?;
            writeln!(stdout, "{}", emitted.summary)?;
        }
        None => stdout.write_all(&emitted.body)?,
    }
    Ok(emitted.status)
}
