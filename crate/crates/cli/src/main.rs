//! `qlimit`: batch front end for limiter design, spectral worst-case search,
//! key-rate sweeps and the attenuation and blinding calculators.

mod commands;
mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use qlimit_core::CoreError;
use serde::Serialize;
use thiserror::Error;

use report::Format;

pub const COMMANDS: [&str; 5] = ["threshold", "worstcase", "keyrate", "budget", "blinding"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("every point failed")]
    AllFailed,
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(CoreError::Numerical(_) | CoreError::SolverFailure { .. } | CoreError::Conic(_)) => 1,
            CliError::AllFailed => 1,
            _ => 2,
        }
    }
}

/// Comma-separated numbers; an empty string is an empty list.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List(pub Vec<f64>);

impl FromStr for List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().is_empty() {
            return Ok(List(Vec::new()));
        }
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qlimit",
    version,
    about = "Power-limiter design and Trojan-horse key-rate tool"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML file supplying defaults for any flag; flags given on the command
    /// line win. Keys may sit at top level or in a table named after the
    /// command.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Write `<command>.<format>` into this directory instead of stdout.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Output format; tables default to csv, calculators to json.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads for grid evaluation. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Limiting threshold and insertion loss over a prism length x diaphragm width grid.
    Threshold(ThresholdArgs),
    /// Photon flux behind the limiter and filters per wavelength, and its maximum.
    Worstcase(WorstcaseArgs),
    /// Optimized key rate over distance x Trojan intensity grids.
    Keyrate(KeyrateArgs),
    /// Attenuation needed for a Trojan photon budget, and the resulting source intensity.
    Budget(BudgetArgs),
    /// Whether the limiter keeps a blinding laser below the detector blinding power.
    Blinding(BlindingArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MaterialArgs {
    /// Thermo-optical coefficient at the reference wavelength, 1/K.
    #[arg(long, default_value_t = -1.3e-4, allow_hyphen_values = true)]
    pub toc: f64,
    /// Thermal conductivity, W/(m K).
    #[arg(long, default_value_t = 0.19)]
    pub conductivity: f64,
    /// Radius where the input beam intensity falls to 1/e, mm.
    #[arg(long, default_value_t = 0.14)]
    pub beam_radius_mm: f64,
    /// Input power that damages the prism, W. Also the threshold scan ceiling.
    #[arg(long, default_value_t = 0.4)]
    pub damage_w: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BulkArgs {
    /// Absorption coefficient, 1/m.
    #[arg(long, default_value_t = 25.95)]
    pub alpha_per_m: f64,
    #[arg(long, default_value_t = 1.47)]
    pub index: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct ThresholdArgs {
    /// Prism lengths, mm.
    #[arg(long, default_value = "25.4,50.8,101.6")]
    pub lengths_mm: List,
    /// Diaphragm widths, um.
    #[arg(long, default_value = "25,50,380,750,1300")]
    pub widths_um: List,
    #[command(flatten)]
    pub bulk: BulkArgs,
    #[command(flatten)]
    pub material: MaterialArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct WorstcaseArgs {
    #[arg(long, default_value_t = 100.0)]
    pub length_mm: f64,
    #[arg(long, default_value_t = 750.0)]
    pub width_um: f64,
    /// Acrylic loss and index table; defaults to $QLIMIT_DATA_DIR/acrylic.csv
    /// or the built-in table.
    #[arg(long, value_name = "FILE")]
    pub acrylic: Option<PathBuf>,
    /// Silicon absorber table; defaults like --acrylic.
    #[arg(long, value_name = "FILE")]
    pub silicon: Option<PathBuf>,
    /// Silicon absorber thickness, mm; 0 removes it.
    #[arg(long, default_value_t = 1.0)]
    pub silicon_mm: f64,
    /// Extra filter elements as FILE:MM pairs separated by commas.
    #[arg(long, value_name = "FILE:MM")]
    pub filters: Option<String>,
    /// Wavelength band, nm.
    #[arg(long, default_value = "300,2100")]
    pub band_nm: List,
    #[arg(long, default_value_t = 1.0)]
    pub step_nm: f64,
    #[command(flatten)]
    pub material: MaterialArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamSet {
    /// 10 % detectors, dark counts 1e-5.
    A,
    /// 85 % detectors, dark counts 1e-7.
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverChoice {
    Builtin,
    /// cvxpy with Clarabel through python3.
    Cvxpy,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct KeyrateArgs {
    /// Alice to Bob distances, km. An empty list gives an empty table.
    #[arg(long, default_value = "0,25,50,75,100,125,150")]
    pub distances_km: List,
    /// Trojan photon numbers per pulse.
    #[arg(long, default_value = "1e-5,1e-6,1e-7,0")]
    pub nus: List,
    #[arg(long, value_enum, default_value_t = ParamSet::B)]
    pub set: ParamSet,
    /// Overrides the set's detector efficiency.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Overrides the set's dark count probability.
    #[arg(long)]
    pub dark_count: Option<f64>,
    #[arg(long, default_value_t = 0.02)]
    pub misalignment: f64,
    #[arg(long, default_value_t = 0.2)]
    pub fiber_loss_db_per_km: f64,
    /// Search interval for the source intensity.
    #[arg(long, default_value = "1e-3,1")]
    pub mu_range: List,
    /// Observed statistics (JSON) to certify instead of the channel model;
    /// requires --mu and ignores distances.
    #[arg(long, value_name = "FILE")]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = SolverChoice::Builtin)]
    pub solver: SolverChoice,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BudgetArgs {
    /// Limiter threshold, mW.
    #[arg(long, default_value_t = 1.0)]
    pub p_limit_mw: f64,
    #[arg(long, default_value_t = 1e9)]
    pub clock_hz: f64,
    #[arg(long, default_value_t = 1260.0)]
    pub wavelength_nm: f64,
    /// Target Trojan photons per pulse after the double pass.
    #[arg(long, default_value_t = 1e-7)]
    pub nu: f64,
    /// Source laser power, uW; enables the intensity calculation.
    #[arg(long)]
    pub laser_uw: Option<f64>,
    /// Attenuation used for the intensity; defaults to the computed budget.
    #[arg(long, allow_hyphen_values = true)]
    pub atten_db: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BlindingArgs {
    #[arg(long, default_value_t = 50.8)]
    pub length_mm: f64,
    #[arg(long, default_value_t = 380.0)]
    pub width_um: f64,
    /// Power needed to blind the detectors, mW.
    #[arg(long, default_value_t = 10.0)]
    pub blinding_mw: f64,
    #[command(flatten)]
    pub bulk: BulkArgs,
    #[command(flatten)]
    pub material: MaterialArgs,
}

/// Finds `--config` and splices its entries in right after the subcommand,
/// so that anything given on the command line overrides them.
fn splice_config(args: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if let Some(p) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(p));
        } else if a == "--config" {
            path = args.get(i + 1).map(PathBuf::from);
        }
    }
    let Some(path) = path else {
        return Ok(args);
    };
    let Some(pos) = args.iter().position(|a| COMMANDS.contains(&a.as_str())) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let flags = config_flags(&text, &args[pos]).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn config_flags(text: &str, command: &str) -> Result<Vec<String>, String> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    let mut flags = Vec::new();
    let mut scoped = None;
    for (k, v) in &table {
        match v {
            toml::Value::Table(t) if k == command => scoped = Some(t),
            toml::Value::Table(_) if COMMANDS.contains(&k.as_str()) => {}
            _ => flags.push(flag(k, v)?),
        }
    }
    if let Some(t) = scoped {
        for (k, v) in t {
            flags.push(flag(k, v)?);
        }
    }
    Ok(flags)
}

fn flag(key: &str, v: &toml::Value) -> Result<String, String> {
    if key == "config" {
        return Err("a config file cannot name another config file".into());
    }
    let text = match v {
        toml::Value::Array(items) => items.iter().map(value_text).collect::<Result<Vec<_>, _>>()?.join(","),
        other => value_text(other)?,
    };
    Ok(format!("--{}={text}", key.replace('_', "-")))
}

fn value_text(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(format!("{f:e}")),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(format!("unsupported value {other}")),
    }
}

fn write_output(text: &str, out_dir: Option<&Path>, command: &str, format: Format) -> Result<(), CliError> {
    match out_dir {
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Output(e.to_string()))
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("{}: {e}", dir.display())))?;
            let file = dir.join(format!("{command}.{}", format.extension()));
            std::fs::write(&file, text).map_err(|e| CliError::Output(format!("{}: {e}", file.display())))
        }
    }
}

fn run(raw: Vec<OsString>) -> Result<(), CliError> {
    let args = raw
        .into_iter()
        .map(|a| {
            a.into_string()
                .map_err(|a| CliError::Usage(format!("argument is not UTF-8: {a:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cli = match Cli::try_parse_from(splice_config(args)?) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            return e.print().map_err(|e| CliError::Output(e.to_string()));
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    if cli.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let (name, default_format, outcome) = match &cli.command {
        Command::Threshold(a) => ("threshold", Format::Csv, commands::threshold(a, cli.workers)?),
        Command::Worstcase(a) => ("worstcase", Format::Csv, commands::worstcase(a, cli.workers)?),
        Command::Keyrate(a) => ("keyrate", Format::Csv, commands::keyrate(a, cli.workers)?),
        Command::Budget(a) => ("budget", Format::Json, commands::budget(a)?),
        Command::Blinding(a) => ("blinding", Format::Json, commands::blinding(a)?),
    };
    let format = cli.format.unwrap_or(default_format);
    let text = outcome.report.render(format)?;
    write_output(&text, cli.out_dir.as_deref(), name, format)?;
    if outcome.all_failed {
        return Err(CliError::AllFailed);
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string();
            eprintln!("qlimit: {}", msg.trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn lists_parse_and_allow_empty() {
        assert_eq!("1, 2.5,1e-7".parse::<List>().unwrap(), List(vec![1.0, 2.5, 1e-7]));
        assert_eq!("".parse::<List>().unwrap(), List(vec![]));
        assert!("1,x".parse::<List>().is_err());
    }

    #[test]
    fn config_scopes_and_arrays() {
        let text = "workers = 2\nnus = [1e-7, 0]\n[keyrate]\nset = \"a\"\n[threshold]\nlengths_mm = [10]\n";
        let f = config_flags(text, "keyrate").unwrap();
        assert_eq!(f, strings(&["--nus=1e-7,0", "--workers=2", "--set=a"]));
    }

    #[test]
    fn command_line_flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        std::fs::write(&cfg, "length_mm = 20\nwidth_um = 100\n").unwrap();
        let args = strings(&[
            "qlimit",
            "blinding",
            "--width-um=200",
            "--config",
            cfg.to_str().unwrap(),
        ]);
        let spliced = splice_config(args).unwrap();
        let cli = Cli::try_parse_from(spliced).unwrap();
        let Command::Blinding(b) = cli.command else { panic!() };
        assert_eq!(b.length_mm, 20.0);
        assert_eq!(b.width_um, 200.0);
    }
}
