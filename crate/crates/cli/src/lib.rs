//! The `em` command-line tool and HTTP service.

pub mod commands;
pub mod config;
pub mod error;
pub mod resolve;
pub mod runtime;
pub mod scaffold;
pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use em_core::catalog::PerformanceProfile;
use em_core::harness::{Mode, SourceFormat};
use em_core::tools::MATCH_SCOPE;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "em", version, about = "Entity matching with tool-using language models")]
pub struct Cli {
    /// TOML config file (default: $EM_CONFIG, then ./em.toml).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Human-readable output instead of JSON.
    #[arg(long, global = true)]
    pub pretty: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decide whether two entity descriptions refer to the same real-world entity.
    Match(MatchArgs),
    /// Score the matcher on a labelled dataset.
    Benchmark(BenchmarkArgs),
    /// Learn rules and experiences and search parameters on a training set.
    Tune(TuneArgs),
    /// Show which catalog profile a run would use.
    Calibrate(CalibrateArgs),
    /// Show the effective settings and parameter defaults.
    Config,
    /// Run the HTTP matching service.
    Serve(ServeArgs),
    /// Generate a stub module for a new tool.
    Scaffold(ScaffoldArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// JSONL script of canned model replies; replaces the live model API.
    #[arg(long, value_name = "PATH")]
    pub mock_script: Option<PathBuf>,
    /// Recorded search results (JSONL) used by the browse tool.
    #[arg(long, value_name = "PATH")]
    pub search_fixture: Option<PathBuf>,
    /// Send every request to the backend, bypassing the response cache.
    #[arg(long)]
    pub no_cache: bool,
    /// Append trace events as JSON lines to this file.
    #[arg(long, value_name = "PATH")]
    pub trace_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// Catalog profile to start from (default: matched by attribute names).
    #[arg(long, value_name = "KEY")]
    pub profile: Option<String>,
    /// Performance profile applied after calibration.
    #[arg(long, value_name = "accuracy|fast|cheap", value_parser = parse_performance)]
    pub optimize: Option<PerformanceProfile>,
    /// Web search tool.
    #[arg(long, value_name = "on|off", value_parser = parse_toggle)]
    pub browse: Option<bool>,
    /// Attribute names in entity descriptions.
    #[arg(long, value_name = "on|off", value_parser = parse_toggle)]
    pub schema: Option<bool>,
    /// Step-by-step reasoning before the answer.
    #[arg(long, value_name = "on|off", value_parser = parse_toggle)]
    pub cot: Option<bool>,
    /// Model name sent to the backend.
    #[arg(long)]
    pub model: Option<String>,
    /// Any parameter, e.g. `--set libem.match.max_tool_rounds=2`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE", value_parser = parse_assignment)]
    pub settings: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Left entity: a JSON object, or a path to a file holding one.
    #[arg(long)]
    pub left: String,
    /// Right entity: a JSON object, or a path to a file holding one.
    #[arg(long)]
    pub right: String,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Labelled pairs: JSONL, or CSV with ltable_/rtable_ column prefixes.
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    /// Dataset format (default: from the file extension).
    #[arg(long, value_name = "jsonl|csv", value_parser = parse_format)]
    pub format: Option<SourceFormat>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Write the full result, including per-pair outcomes, as JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Pairs matched concurrently.
    #[arg(long, default_value_t = 8)]
    pub parallelism: usize,
    #[arg(long, default_value = "compound", value_parser = parse_mode)]
    pub mode: Mode,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Search space as JSON: `{"axes": [{"path": .., "values": [..]}]}`.
    #[arg(long, value_name = "PATH")]
    pub space: Option<PathBuf>,
    /// Comma-separated subset of rules, experiences, search
    /// (default: rules,experiences plus search when --space is given).
    #[arg(long, value_delimiter = ',')]
    pub strategies: Vec<String>,
    /// Maximum number of search trials.
    #[arg(long, default_value_t = 16)]
    pub budget: usize,
    /// Sampling seed (default: the configured seed, else 0).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Store the result in the catalog under this key.
    #[arg(long, value_name = "KEY")]
    pub save_profile: Option<String>,
    #[arg(long, default_value_t = 8)]
    pub parallelism: usize,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Profile to load explicitly.
    #[arg(long, value_name = "KEY")]
    pub profile: Option<String>,
    /// Dataset whose attribute names select a profile.
    #[arg(long, value_name = "PATH")]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_name = "jsonl|csv", value_parser = parse_format)]
    pub format: Option<SourceFormat>,
    /// List stored profile keys.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct ScaffoldArgs {
    /// Tool name (an identifier).
    pub name: String,
    /// Scope the tool lives under.
    #[arg(long, default_value = MATCH_SCOPE)]
    pub parent: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

fn parse_toggle(s: &str) -> Result<bool, String> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err("expected on or off".into()),
    }
}

fn parse_performance(s: &str) -> Result<PerformanceProfile, String> {
    s.parse().map_err(|e: em_core::catalog::CatalogError| e.to_string())
}

fn parse_format(s: &str) -> Result<SourceFormat, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_assignment(s: &str) -> Result<(String, String), String> {
    let (path, value) = s.split_once('=').ok_or("expected PATH=VALUE")?;
    Ok((path.trim().to_string(), value.to_string()))
}
