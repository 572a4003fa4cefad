//! The `covslice` command line.
//!
//! [`run`] parses arguments, dispatches to one subcommand and maps the
//! result to an exit code: 0 on success, 1 on a domain error (with a JSON
//! error object on stderr), 2 on a usage error.

pub mod commands;
pub mod config;
pub mod error;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "covslice",
    version,
    about = "Slice RTL around coverage holes and close them with generated stimuli"
)]
pub struct Cli {
    /// Config file (defaults to ./covslice.toml when present)
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Log verbosity on stderr
    #[arg(long, global = true, value_enum, default_value_t = LogLevel::Warn)]
    pub log_level: LogLevel,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Off,
    Error,
    Warn,
    Info,
    Debug,
    Trace,
}

impl LogLevel {
    fn filter(self) -> log::LevelFilter {
        match self {
            LogLevel::Off => log::LevelFilter::Off,
            LogLevel::Error => log::LevelFilter::Error,
            LogLevel::Warn => log::LevelFilter::Warn,
            LogLevel::Info => log::LevelFilter::Info,
            LogLevel::Debug => log::LevelFilter::Debug,
            LogLevel::Trace => log::LevelFilter::Trace,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a design and print its statement model
    DumpModel(DumpModelArgs),
    /// Slice a design backwards from seed signals
    Trace(TraceArgs),
    /// Rebuild a slice into compilable Verilog
    Patch(PatchArgs),
    /// Summarize a coverage report and its open items
    Analyze(AnalyzeArgs),
    /// Work with IR documents
    #[command(subcommand)]
    Ir(IrCommand),
    /// Fill protocol skeletons for the interfaces of an IR document
    Specialize(SpecializeArgs),
    /// Run the coverage refinement loop
    Refine(RefineArgs),
    /// Print a saved refinement report
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum IrCommand {
    /// Check an IR document, optionally against a design
    Validate(IrValidateArgs),
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Format {
    /// Machine-readable JSON output
    #[arg(long, conflicts_with = "text")]
    pub json: bool,
    /// Human-readable output (default)
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DesignArgs {
    /// Verilog files or directories holding them
    #[arg(long, required = true, num_args = 1.., value_name = "FILES")]
    pub design: Vec<PathBuf>,
    /// Top module name
    #[arg(long, value_name = "MODULE")]
    pub top: String,
}

#[derive(Debug, Args)]
pub struct DumpModelArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Seed signals, `name` or `module.name`, comma separated
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',', value_name = "SIG")]
    pub seed: Vec<String>,
    /// Also write the slice JSON to this file
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Slice JSON written by `trace`
    #[arg(long, value_name = "FILE")]
    pub slice: PathBuf,
    /// Output directory for the Filtered DUT
    #[arg(short, long = "out-dir", value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Directory of `.tpl` files overriding the built-in templates
    #[arg(long, value_name = "DIR")]
    pub templates: Option<PathBuf>,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Coverage report (normalized text or covtable HTML)
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// Design used to resolve hierarchy and derive seed signals
    #[arg(long, num_args = 1.., value_name = "FILES", requires = "top")]
    pub design: Vec<PathBuf>,
    /// Top module of the design
    #[arg(long, value_name = "MODULE", requires = "design")]
    pub top: Option<String>,
    /// Items listed per group
    #[arg(long, value_name = "N")]
    pub budget: Option<usize>,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct IrValidateArgs {
    /// IR document
    #[arg(value_name = "FILE")]
    pub file: PathBuf,
    /// Design to cross-check ports against
    #[arg(long, num_args = 1.., value_name = "FILES")]
    pub design: Vec<PathBuf>,
    /// Top module (defaults to the IR module name)
    #[arg(long, value_name = "MODULE", requires = "design")]
    pub top: Option<String>,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct SpecializeArgs {
    /// IR document
    #[arg(long, value_name = "FILE")]
    pub ir: PathBuf,
    /// Skeleton library directory (defaults to the built-in library)
    #[arg(long, value_name = "DIR")]
    pub protocol_lib: Option<PathBuf>,
    /// Model client: mock:<transcript.json>, echo, or http:<endpoint>[#model]
    #[arg(long, value_name = "SPEC")]
    pub llm: String,
    /// Output directory for the specialized components
    #[arg(short, long = "out-dir", value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Only this interface
    #[arg(long, value_name = "NAME")]
    pub interface: Option<String>,
    /// Also specialize the env skeleton (experimental)
    #[arg(long)]
    pub env: bool,
    /// Attempts per skeleton before giving up
    #[arg(long, default_value_t = 3, value_name = "N")]
    pub max_attempts: u32,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Baseline coverage report
    #[arg(long, value_name = "FILE")]
    pub report: PathBuf,
    /// Labeled model client, LABEL=SPEC; repeat per model
    #[arg(long, value_name = "LABEL=SPEC", value_parser = parse_labeled)]
    pub llm: Vec<(String, String)>,
    /// Simulator: mock:<script.json> or exec:<command>
    #[arg(long, value_name = "SPEC")]
    pub sim: Option<String>,
    /// Stop once the effective score reaches this percentage
    #[arg(long, value_name = "PERCENT")]
    pub target: Option<f64>,
    /// Prompt size limit in estimated tokens
    #[arg(long, value_name = "TOKENS")]
    pub context_budget: Option<usize>,
    /// Coverage items attempted per iteration
    #[arg(long, value_name = "N")]
    pub points_per_iter: Option<usize>,
    /// Error-feedback retries per failed candidate
    #[arg(long, value_name = "N")]
    pub repair_attempts: Option<usize>,
    /// Models that must agree before an item is waived
    #[arg(long, value_name = "N")]
    pub waiver_quorum: Option<usize>,
    /// Iteration cap
    #[arg(long, value_name = "N")]
    pub max_iters: Option<usize>,
    /// Write the report JSON here
    #[arg(short, long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Report JSON written by `refine`
    #[arg(value_name = "FILE")]
    pub file: PathBuf,
    #[command(flatten)]
    pub format: Format,
}

fn parse_labeled(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((l, spec)) if !l.is_empty() && !spec.is_empty() => {
            Ok((l.to_string(), spec.to_string()))
        }
        _ => Err(format!("expected LABEL=SPEC, got `{s}`")),
    }
}

/// Runs one command with the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 2;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(cli.log_level.filter())
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(&cli, out) {
        Ok(()) => 0,
        Err(commands::Failure::Usage(e)) => {
            let _ = write!(err, "{}", e.render());
            2
        }
        Err(commands::Failure::Domain(e)) => {
            let json = serde_json::to_string(&e.report()).expect("serializable");
            let _ = writeln!(err, "{json}");
            1
        }
    }
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
