//! Command-line front end: `verify`, `oracle`, `emit` and `lut-build`.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use thiserror::Error;

use crate::fixedpoint::QuantSpec;
use crate::lut::build_lut;
use crate::model::Activation;
use crate::oracle::DEFAULT_GRID_LIMIT;
use crate::pipeline::{run_pipeline, EmitTargets, Mode, ModelFormat, PropertySource, RunConfig};
use crate::solver::SolverSpec;

const DEFAULT_QUANT: &str = "fxp:7.8";
const DEFAULT_TIMEOUT: f64 = 300.0;

#[derive(Debug, Parser)]
#[command(name = "qnnv", version, about = "Bit-exact verification of quantized neural networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode and solve every property with every configured solver.
    Verify(CommonArgs),
    /// Decide properties by exhaustive enumeration of the input grid.
    Oracle {
        #[command(flatten)]
        common: CommonArgs,
        /// Refuse grids with more points than this.
        #[arg(long)]
        grid_limit: Option<u64>,
    },
    /// Write SMT-LIB2 / C / invariant artifacts without running a solver.
    Emit(CommonArgs),
    /// Build a step lookup table for an activation function.
    LutBuild(LutArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// Network file (.nnet, .json or export bundle).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Force the model format: auto, json, nnet, bundle.
    #[arg(long)]
    pub format: Option<String>,
    /// Property file; repeatable.
    #[arg(long = "property")]
    pub properties: Vec<PathBuf>,
    /// CSV of reference points; one robustness property per row.
    #[arg(long)]
    pub robustness: Option<PathBuf>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Class that must stay the strict arg-max.
    #[arg(long)]
    pub target: Option<usize>,
    /// fxp:<int>.<frac>[:wrap|sat][:rne|tn] or float32.
    #[arg(long)]
    pub quant: Option<String>,
    /// Solver as `name` or `name=path`; repeatable.
    #[arg(long = "solver")]
    pub solvers: Vec<String>,
    /// Per-job timeout in seconds.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long, short = 'j')]
    pub parallelism: Option<usize>,
    /// Comma-separated subset of smt2,c,invariants.
    #[arg(long)]
    pub emit: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Skip interval invariant inference.
    #[arg(long)]
    pub no_invariants: bool,
    /// Fold input normalization into the first layer.
    #[arg(long)]
    pub normalize: bool,
    /// Keep raw solver stdout/stderr next to the report.
    #[arg(long)]
    pub keep_artifacts: bool,
    /// Lookup table file replacing the default for its activation; repeatable.
    #[arg(long = "lut")]
    pub luts: Vec<PathBuf>,
    /// TOML file with defaults for the flags above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LutArgs {
    /// sigmoid or tanh.
    #[arg(long)]
    pub activation: String,
    /// Lower end of the sampled domain.
    #[arg(long, allow_negative_numbers = true)]
    pub lo: f64,
    /// Upper end of the sampled domain.
    #[arg(long, allow_negative_numbers = true)]
    pub hi: f64,
    /// Lipschitz constant; defaults to the activation's own.
    #[arg(long)]
    pub lipschitz: Option<f64>,
    /// Maximum absolute error of the table.
    #[arg(long)]
    pub epsilon: f64,
    /// Output table file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Keys accepted in a `--config` file; command-line flags win.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub format: Option<String>,
    #[serde(default)]
    pub properties: Vec<PathBuf>,
    pub robustness: Option<PathBuf>,
    pub radius: Option<f64>,
    pub target: Option<usize>,
    pub quant: Option<String>,
    #[serde(default)]
    pub solvers: Vec<String>,
    pub timeout: Option<f64>,
    pub parallelism: Option<usize>,
    pub emit: Option<String>,
    pub out: Option<PathBuf>,
    pub invariants: Option<bool>,
    pub normalize: Option<bool>,
    pub keep_artifacts: Option<bool>,
    #[serde(default)]
    pub luts: Vec<PathBuf>,
    pub grid_limit: Option<u64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Pipeline(#[from] crate::pipeline::PipelineError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Pipeline(e) => e.exit_code(),
            CliError::Io(_) => 2,
        }
    }
}

fn usage(msg: impl ToString) -> CliError {
    CliError::Usage(msg.to_string())
}

fn parse_format(s: &str) -> Result<ModelFormat, CliError> {
    Ok(match s {
        "auto" => ModelFormat::Auto,
        "json" => ModelFormat::Json,
        "nnet" => ModelFormat::Nnet,
        "bundle" => ModelFormat::Bundle,
        other => return Err(usage(format!("unknown model format `{other}`"))),
    })
}

fn parse_emit(s: &str) -> Result<EmitTargets, CliError> {
    let mut t = EmitTargets::default();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part {
            "smt2" => t.smt2 = true,
            "c" => t.c = true,
            "invariants" => t.invariants = true,
            other => return Err(usage(format!("unknown emit target `{other}`"))),
        }
    }
    Ok(t)
}

fn resolve_solver(s: &str) -> Result<SolverSpec, CliError> {
    if s.contains('=') {
        return SolverSpec::parse(s).map_err(usage);
    }
    let dir = std::env::var_os("QNNV_SOLVER_DIR").map(PathBuf::from);
    SolverSpec::discover(s, dir.as_deref())
        .ok_or_else(|| usage(format!("solver `{s}` not found in QNNV_SOLVER_DIR or PATH")))
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Merges flags over the config file into a pipeline configuration.
pub fn build_config(args: &CommonArgs, mode: Mode) -> Result<RunConfig, CliError> {
    let file = load_file_config(args.config.as_deref())?;
    let model = args.model.clone().or(file.model).ok_or_else(|| usage("--model is required"))?;
    let format = parse_format(args.format.as_deref().or(file.format.as_deref()).unwrap_or("auto"))?;
    let quant: QuantSpec =
        args.quant.as_deref().or(file.quant.as_deref()).unwrap_or(DEFAULT_QUANT).parse().map_err(usage)?;

    let mut properties: Vec<PropertySource> = if args.properties.is_empty() {
        file.properties.into_iter().map(PropertySource::File).collect()
    } else {
        args.properties.iter().cloned().map(PropertySource::File).collect()
    };
    if let Some(points) = args.robustness.clone().or(file.robustness) {
        let radius = args.radius.or(file.radius).ok_or_else(|| usage("--robustness needs --radius"))?;
        let target = args.target.or(file.target).ok_or_else(|| usage("--robustness needs --target"))?;
        properties.push(PropertySource::Robustness { points, radius, target });
    }
    if properties.is_empty() {
        return Err(usage("no property given (--property or --robustness)"));
    }

    let solver_names = if args.solvers.is_empty() { file.solvers } else { args.solvers.clone() };
    let solvers = if mode == Mode::Solve {
        if solver_names.is_empty() {
            return Err(usage("verify needs at least one --solver"));
        }
        solver_names.iter().map(|s| resolve_solver(s)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let timeout = args.timeout.or(file.timeout).unwrap_or(DEFAULT_TIMEOUT);
    if !(timeout > 0.0 && timeout.is_finite()) {
        return Err(usage(format!("invalid timeout {timeout}")));
    }
    let parallelism = args
        .parallelism
        .or(file.parallelism)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut emit = match args.emit.as_deref().or(file.emit.as_deref()) {
        Some(s) => parse_emit(s)?,
        None => EmitTargets::default(),
    };
    if mode == Mode::EmitOnly && emit == EmitTargets::default() {
        emit.smt2 = true;
    }
    let mode = match mode {
        Mode::Oracle { .. } => Mode::Oracle { limit: file.grid_limit.unwrap_or(DEFAULT_GRID_LIMIT) },
        m => m,
    };
    Ok(RunConfig {
        model,
        format,
        properties,
        quant,
        solvers,
        timeout: Duration::from_secs_f64(timeout),
        parallelism,
        emit,
        out_dir: args.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("qnnv-out")),
        invariants: !args.no_invariants && file.invariants.unwrap_or(true),
        apply_normalization: args.normalize || file.normalize.unwrap_or(false),
        keep_artifacts: args.keep_artifacts || file.keep_artifacts.unwrap_or(false),
        luts: if args.luts.is_empty() { file.luts } else { args.luts.clone() },
        mode,
    })
}

fn lut_build(args: &LutArgs) -> Result<i32, CliError> {
    let act = match args.activation.as_str() {
        "sigmoid" => Activation::Sigmoid,
        "tanh" => Activation::Tanh,
        other => return Err(usage(format!("no table support for activation `{other}`"))),
    };
    let table = build_lut(act, (args.lo, args.hi), args.lipschitz, args.epsilon).map_err(usage)?;
    std::fs::write(&args.out, table.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    if let Some(c) = table.certificate() {
        println!(
            "wrote {} samples to {} (max error {:.3e}, epsilon {:.3e})",
            table.sample_count(),
            args.out.display(),
            c.max_error,
            table.epsilon()
        );
    }
    Ok(0)
}

/// Runs a parsed command; the result is the process exit code.
pub fn execute(cli: Cli) -> Result<i32, CliError> {
    let (args, mode, grid_limit) = match &cli.command {
        Command::LutBuild(a) => return lut_build(a),
        Command::Verify(a) => (a, Mode::Solve, None),
        Command::Oracle { common, grid_limit } => (common, Mode::Oracle { limit: 0 }, *grid_limit),
        Command::Emit(a) => (a, Mode::EmitOnly, None),
    };
    let mut rc = build_config(args, mode)?;
    if let (Mode::Oracle { limit }, Some(g)) = (&mut rc.mode, grid_limit) {
        *limit = g;
    }
    let report = run_pipeline(&rc)?;
    print!("{}", report.table());
    for e in &report.entries {
        if let Some(v) = &e.verdict {
            for w in &v.warnings {
                eprintln!("warning: {}: {w}", e.property);
            }
            if let Some(d) = &v.diagnostics {
                eprintln!("{} [{}]: {d}", e.property, v.solver);
            }
        }
    }
    Ok(match rc.mode {
        Mode::EmitOnly => 0,
        _ => report.exit_code(),
    })
}

/// Parses `argv` and runs; usage errors exit 1, help and version exit 0.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
