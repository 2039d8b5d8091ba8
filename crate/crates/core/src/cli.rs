//! Command-line front end.
//!
//! Exit codes: 0 success, 2 solver did not converge, 64 usage error,
//! 65 bad data (unknown machine, malformed file contents, infeasible
//! query), 66 file could not be read or written.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::fault::{self, BitDomain, FaultInjector, FaultPolicy};
use crate::iso::{self, Composition, HybridSystem, IsoMode, IsoReference, IsoReport};
use crate::linalg::{gemv, gen_spd_diag_dominant, DenseMatrix, DenseVector, FlopCounter};
use crate::machine::{self, MachineSpec, ModelError, OperatingPoint, PerfSample, ProblemClass, SampleSet};
use crate::solver::{self, SolveConfig, SolveReport, SolverError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_NO_INPUT: i32 = 66;

/// Directory holding `paper.csv`/`paper.toml`; overrides the bundled fixture.
pub const DATA_DIR_ENV: &str = "ISOCG_DATA_DIR";

#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            code: EXIT_NO_INPUT,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Io { .. } => EXIT_NO_INPUT,
            _ => EXIT_DATA,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<iso::IsoError> for CliError {
    fn from(e: iso::IsoError) -> Self {
        Self::data(e.to_string())
    }
}

type CliResult = Result<i32, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "isocg",
    version,
    about = "Fault-tolerant CG experiments and iso-metric machine models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a dense SPD system with plain CG.
    Solve(SolveArgs),
    /// Solve with self-stabilizing CG under bit-flip injection.
    SolveSs(SolveSsArgs),
    /// Iso-performance, iso-power or iso-capacity matching.
    Iso(IsoArgs),
    /// Energy-to-solution curves and break-even degradation.
    Ets(EtsArgs),
    /// List machine specs with roofline bounds and on-chip problem sizes.
    Machines(MachinesArgs),
    /// Static-power regression of watts against active cores.
    Fit(FitArgs),
    /// Frequency scaling factors between two samples.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args)]
struct ProblemArgs {
    /// Generate an n×n diagonally dominant SPD matrix.
    #[arg(long)]
    size: Option<usize>,
    /// Read A (and optionally b) from a whitespace-separated text file.
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = solver::DEFAULT_TOL)]
    tol: f64,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Emit a single JSON document.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[command(flatten)]
    problem: ProblemArgs,
}

#[derive(Debug, Args)]
struct SolveSsArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = solver::DEFAULT_SS_PERIOD)]
    ss_period: usize,
    /// Probability that an unreliable gemv call is corrupted.
    #[arg(long, default_value_t = 0.0)]
    fault_rate: f64,
    #[arg(long, default_value = "sign-mantissa", value_parser = parse_bit_domain)]
    fault_bits: BitDomain,
    #[arg(long, default_value_t = 1)]
    flips: u32,
    #[arg(long, default_value_t = 0)]
    fault_seed: u64,
    /// Let exponent flips produce NaN or ±Inf.
    #[arg(long)]
    allow_non_finite: bool,
    /// Write fault events as JSON lines to this file.
    #[arg(long)]
    events: Option<PathBuf>,
}

fn parse_bit_domain(s: &str) -> Result<BitDomain, String> {
    s.parse::<BitDomain>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliIsoMode {
    Perf,
    Power,
    Capacity,
}

impl From<CliIsoMode> for IsoMode {
    fn from(m: CliIsoMode) -> Self {
        match m {
            CliIsoMode::Perf => IsoMode::IsoPerformance,
            CliIsoMode::Power => IsoMode::IsoPower,
            CliIsoMode::Capacity => IsoMode::IsoCapacity,
        }
    }
}

// Variant names are the accepted spellings (`iso-perf`, ...).
#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliEtsMode {
    IsoPerf,
    IsoPower,
    IsoCapacity,
}

impl From<CliEtsMode> for IsoMode {
    fn from(m: CliEtsMode) -> Self {
        match m {
            CliEtsMode::IsoPerf => IsoMode::IsoPerformance,
            CliEtsMode::IsoPower => IsoMode::IsoPower,
            CliEtsMode::IsoCapacity => IsoMode::IsoCapacity,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliComposition {
    Work,
    Time,
}

impl From<CliComposition> for Composition {
    fn from(c: CliComposition) -> Self {
        match c {
            CliComposition::Work => Composition::WorkWeighted,
            CliComposition::Time => Composition::TimeWeighted,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliClass {
    OnChip,
    OffChip,
}

impl From<CliClass> for ProblemClass {
    fn from(c: CliClass) -> Self {
        match c {
            CliClass::OnChip => ProblemClass::OnChip,
            CliClass::OffChip => ProblemClass::OffChip,
        }
    }
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Samples CSV; machine specs are read from the sibling `.toml`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "on-chip")]
    class: CliClass,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, conflicts_with = "csv")]
    json: bool,
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct HybridArgs {
    /// Fraction of iterations run on the reliable cluster.
    #[arg(long, default_value_t = iso::DEFAULT_SS_FRACTION)]
    ss_fraction: f64,
    #[arg(long, value_enum, default_value = "work")]
    composition: CliComposition,
}

#[derive(Debug, Args)]
struct IsoArgs {
    #[arg(long, value_enum)]
    mode: CliIsoMode,
    /// Reference configuration `name[:cores[:freq_ghz]]`.
    #[arg(long = "ref")]
    reference: String,
    /// Target cluster `name[:freq_ghz]`; uses all cores of one cluster.
    #[arg(long)]
    target: String,
    /// Compose one reliable cluster with n target clusters.
    #[arg(long)]
    hybrid: bool,
    /// Reliable cluster of the hybrid `name[:cores[:freq_ghz]]`; defaults to --ref.
    #[arg(long, requires = "hybrid")]
    reliable: Option<String>,
    /// Also report the result for a whole number of clusters.
    #[arg(long)]
    round: bool,
    #[command(flatten)]
    hybrid_args: HybridArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct EtsArgs {
    /// Degradation range in percent, `start:stop:step`.
    #[arg(long, default_value = "0:400:10")]
    degradation: String,
    #[arg(long, value_enum, default_value = "iso-perf")]
    mode: CliEtsMode,
    /// Reliable reference cluster, also the hybrid's reliable part.
    #[arg(long = "ref", default_value = "a15:4:1.6")]
    reference: String,
    /// Unreliable cluster `name[:freq_ghz]`.
    #[arg(long, default_value = "a7:0.5")]
    target: String,
    /// Problem dimension used to size the work (2n² flops per iteration).
    #[arg(long, default_value_t = 512)]
    size: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Fault-free iteration count; measured with CG when omitted.
    #[arg(long)]
    iterations: Option<usize>,
    #[command(flatten)]
    hybrid_args: HybridArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct MachinesArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = machine::GEMV_ARITHMETIC_INTENSITY)]
    intensity: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    machine: String,
    #[arg(long)]
    freq: f64,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct ScalingArgs {
    #[arg(long)]
    machine: String,
    #[arg(long)]
    cores: Option<u32>,
    #[arg(long)]
    low: f64,
    #[arg(long)]
    high: f64,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    json: bool,
}

/// Parses `args` (including the program name) and runs one subcommand.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };

    let result = match cli.command {
        Command::Solve(a) => cmd_solve(&a, out),
        Command::SolveSs(a) => cmd_solve_ss(&a, out),
        Command::Iso(a) => cmd_iso(&a, out),
        Command::Ets(a) => cmd_ets(&a, out, err),
        Command::Machines(a) => cmd_machines(&a, out),
        Command::Fit(a) => cmd_fit(&a, out),
        Command::Scaling(a) => cmd_scaling(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "isocg: {}", e.message);
            e.code
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    out.write_all(text.as_bytes()).map_err(|e| CliError {
        code: EXIT_NO_INPUT,
        message: format!("write failed: {e}"),
    })
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    emit(out, &text)
}

// ---------------------------------------------------------------------------
// solve / solve-ss

/// Parses a matrix file: `n` rows of `n` numbers form A; an optional extra
/// row is b. Without it, b = A·1. `#` starts a comment.
pub fn parse_matrix_file(text: &str) -> Result<(DenseMatrix, DenseVector), String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| format!("line {}: bad number '{tok}'", i + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!(
                    "line {}: expected {} values, found {}",
                    i + 1,
                    first.len(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.first().map(Vec::len).ok_or("matrix file is empty")?;
    let b = match rows.len() {
        r if r == n => None,
        r if r == n + 1 => rows.pop(),
        r => {
            return Err(format!(
                "expected {n} or {} rows for a {n}x{n} system, found {r}",
                n + 1
            ))
        }
    };
    let a = DenseMatrix::from_rows(&rows).map_err(|e| e.to_string())?;
    let b = match b {
        Some(b) => DenseVector::from_vec(b).map_err(|e| e.to_string())?,
        None => ones_rhs(&a),
    };
    Ok((a, b))
}

/// `b = A·1`, so the exact solution is the all-ones vector.
fn ones_rhs(a: &DenseMatrix) -> DenseVector {
    gemv(a, &DenseVector::filled(a.cols(), 1.0), &mut FlopCounter::new()).expect("square matrix")
}

fn load_problem(p: &ProblemArgs) -> Result<(DenseMatrix, DenseVector), CliError> {
    match (&p.matrix, p.size) {
        (None, None) => Err(CliError::usage("one of --size or --matrix is required")),
        (Some(path), size) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let (a, b) = parse_matrix_file(&text).map_err(|m| CliError::data(format!("{}: {m}", path.display())))?;
            if let Some(n) = size {
                if n != a.rows() {
                    return Err(CliError::usage(format!(
                        "--size {n} does not match the {}x{} matrix in {}",
                        a.rows(),
                        a.cols(),
                        path.display()
                    )));
                }
            }
            Ok((a, b))
        }
        (None, Some(0)) => Err(CliError::usage("--size must be >= 1")),
        (None, Some(n)) => {
            let a = gen_spd_diag_dominant(n, p.seed);
            let b = ones_rhs(&a);
            Ok((a, b))
        }
    }
}

fn solve_config(p: &ProblemArgs) -> Result<SolveConfig, CliError> {
    let cfg = SolveConfig {
        tol: p.tol,
        max_iter: p.max_iter,
        ..SolveConfig::default()
    };
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn render_report(report: &SolveReport, x: &DenseVector) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "method               {:?}", report.method);
    let _ = writeln!(s, "n                    {}", report.n);
    let _ = writeln!(s, "converged            {}", report.converged);
    let _ = writeln!(s, "iterations           {}", report.iterations);
    if let Some(r) = report.final_relative_residual() {
        let _ = writeln!(s, "relative residual    {r:.3e}");
    }
    let _ = writeln!(s, "true rel. residual   {:.3e}", report.true_relative_residual);
    let _ = writeln!(s, "flops                {}", report.flops);
    if report.corrections > 0 || report.gemv_flops != report.flops {
        let _ = writeln!(s, "gemv flops           {}", report.gemv_flops);
        let _ = writeln!(s, "corrections          {}", report.corrections);
    }
    if x.len() <= 16 {
        let xs: Vec<String> = x.as_slice().iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "x                    ({})", xs.join(", "));
    }
    s
}

fn exit_for(report: &SolveReport) -> i32 {
    if report.converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

fn cmd_solve(args: &SolveArgs, out: &mut dyn Write) -> CliResult {
    let (a, b) = load_problem(&args.problem)?;
    let cfg = solve_config(&args.problem)?;
    let solution = match solver::cg_solve(&a, &b, &cfg) {
        Ok(s) => s,
        Err(SolverError::Diverged { report, .. }) => {
            emit_json_or_text(
                out,
                args.problem.json,
                &json!({ "report": report }),
                "solver diverged\n",
            )?;
            return Ok(EXIT_NOT_CONVERGED);
        }
        Err(e) => return Err(CliError::data(e.to_string())),
    };
    if args.problem.json {
        emit_json(out, &json!({ "report": solution.report, "x": solution.x.as_slice() }))?;
    } else {
        emit(out, &render_report(&solution.report, &solution.x))?;
    }
    Ok(exit_for(&solution.report))
}

fn emit_json_or_text(
    out: &mut dyn Write,
    json_mode: bool,
    value: &serde_json::Value,
    text: &str,
) -> Result<(), CliError> {
    if json_mode {
        emit_json(out, value)
    } else {
        emit(out, text)
    }
}

fn cmd_solve_ss(args: &SolveSsArgs, out: &mut dyn Write) -> CliResult {
    let (a, b) = load_problem(&args.problem)?;
    let mut cfg = solve_config(&args.problem)?;
    cfg.ss_period = args.ss_period;
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;

    let mut policy = FaultPolicy::new(args.fault_rate, args.flips, args.fault_bits, args.fault_seed)
        .map_err(|e| CliError::usage(e.to_string()))?;
    policy.allow_non_finite = args.allow_non_finite;

    let baseline = solver::sscg_solve(&a, &b, &cfg, &mut FaultInjector::disabled())
        .map_err(|e| CliError::data(format!("fault-free baseline failed: {e}")))?;

    let mut injector = FaultInjector::new(policy).map_err(|e| CliError::usage(e.to_string()))?;
    let (report, x) = match solver::sscg_solve(&a, &b, &cfg, &mut injector) {
        Ok(s) => (s.report, Some(s.x)),
        Err(SolverError::Diverged { report, .. }) => (*report, None),
        Err(e) => return Err(CliError::data(e.to_string())),
    };

    if let Some(path) = &args.events {
        let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        fault::write_events_jsonl(&report.fault_events, std::io::BufWriter::new(file))
            .map_err(|e| CliError::io(path, e))?;
    }

    let base_iters = baseline.report.iterations;
    let overhead_pct = if base_iters == 0 {
        0.0
    } else {
        (report.iterations as f64 - base_iters as f64) / base_iters as f64 * 100.0
    };

    if args.problem.json {
        emit_json(
            out,
            &json!({
                "report": report,
                "baseline_iterations": base_iters,
                "overhead_pct": overhead_pct,
                "fault_event_count": report.fault_events.len(),
                "x": x.as_ref().map(|v| v.as_slice()),
            }),
        )?;
    } else {
        let mut text = match &x {
            Some(x) => render_report(&report, x),
            None => "solver diverged\n".to_string(),
        };
        let _ = writeln!(text, "fault events         {}", report.fault_events.len());
        let _ = writeln!(text, "baseline iterations  {base_iters}");
        let _ = writeln!(text, "iteration overhead   {overhead_pct:.1}%");
        emit(out, &text)?;
    }
    Ok(if x.is_some() {
        exit_for(&report)
    } else {
        EXIT_NOT_CONVERGED
    })
}

// ---------------------------------------------------------------------------
// machine-model commands

fn load_data(path: Option<&Path>) -> Result<SampleSet, CliError> {
    if let Some(p) = path {
        return Ok(machine::load_sampleset(p)?);
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => Ok(machine::load_sampleset(&Path::new(&dir).join("paper.csv"))?),
        None => Ok(SampleSet::bundled()),
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Address {
    machine: String,
    cores: Option<u32>,
    freq: Option<f64>,
}

fn parse_address(s: &str, with_cores: bool) -> Result<Address, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let max_parts = if with_cores { 3 } else { 2 };
    if parts.is_empty() || parts[0].is_empty() || parts.len() > max_parts {
        let shape = if with_cores {
            "name[:cores[:freq_ghz]]"
        } else {
            "name[:freq_ghz]"
        };
        return Err(CliError::usage(format!("bad machine address '{s}', expected {shape}")));
    }
    let bad = |what: &str, v: &str| CliError::usage(format!("bad {what} '{v}' in '{s}'"));
    let mut addr = Address {
        machine: parts[0].to_string(),
        cores: None,
        freq: None,
    };
    let freq_part = if with_cores {
        if let Some(c) = parts.get(1) {
            addr.cores = Some(c.parse().map_err(|_| bad("core count", c))?);
        }
        parts.get(2)
    } else {
        parts.get(1)
    };
    if let Some(f) = freq_part {
        addr.freq = Some(f.parse().map_err(|_| bad("frequency", f))?);
    }
    Ok(addr)
}

fn resolve_spec<'a>(set: &'a SampleSet, name: &str) -> Result<&'a MachineSpec, CliError> {
    set.spec(name).ok_or_else(|| {
        CliError::data(format!(
            "unknown machine '{name}'; available: {}",
            set.machine_names().join(", ")
        ))
    })
}

/// Missing cores default to one full unit, missing frequency to the
/// highest.
fn resolve_sample<'a>(
    set: &'a SampleSet,
    addr: &Address,
    class: ProblemClass,
) -> Result<(&'a MachineSpec, &'a PerfSample), CliError> {
    let spec = resolve_spec(set, &addr.machine)?;
    let cores = addr.cores.unwrap_or(spec.cores_per_unit);
    let freq = addr.freq.unwrap_or(spec.freq_max);
    let sample = set.find(&spec.name, cores, freq, class).ok_or_else(|| {
        let keys: Vec<String> = set
            .samples_for(&spec.name)
            .filter(|s| s.problem_class == class)
            .map(|s| format!("{}:{}:{}", s.machine, s.active_cores, s.freq))
            .collect();
        CliError::data(format!(
            "no {class} sample for {}:{cores}:{freq}; available: {}",
            spec.name,
            if keys.is_empty() {
                "none".to_string()
            } else {
                keys.join(", ")
            }
        ))
    })?;
    Ok((spec, sample))
}

fn render_iso(report: &IsoReport, label: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{label}");
    let _ = writeln!(s, "  mode              {}", report.mode);
    let _ = writeln!(s, "  clusters          {:.4}", report.cluster_count);
    let _ = writeln!(s, "  achieved GFLOPS   {:.4}", report.achieved_gflops);
    let _ = writeln!(s, "  achieved W        {:.4}", report.achieved_watts);
    for (k, v) in &report.ratios {
        let _ = writeln!(s, "  {k:<18}{v:.4}");
    }
    s
}

fn emit_iso(out: &mut dyn Write, output: &OutputArgs, reports: &[(&str, IsoReport)]) -> Result<(), CliError> {
    if output.json {
        let doc: serde_json::Map<String, serde_json::Value> = reports
            .iter()
            .map(|(k, r)| (k.to_string(), serde_json::to_value(r).expect("serializable")))
            .collect();
        emit_json(out, &doc)
    } else if output.csv {
        let mut text = format!("label,{}\n", IsoReport::CSV_HEADER);
        for (label, r) in reports {
            let _ = writeln!(text, "{label},{}", r.csv_row());
        }
        emit(out, &text)
    } else {
        let text: String = reports.iter().map(|(label, r)| render_iso(r, label)).collect();
        emit(out, &text)
    }
}

fn hybrid_template(reliable: &PerfSample, unreliable: &PerfSample, h: &HybridArgs) -> Result<HybridSystem, CliError> {
    let mut template = HybridSystem::new(reliable.into(), unreliable.into(), 1.0);
    template.ss_fraction = h.ss_fraction;
    template.composition = h.composition.into();
    template.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(template)
}

fn cmd_iso(args: &IsoArgs, out: &mut dyn Write) -> CliResult {
    let set = load_data(args.data.data.as_deref())?;
    let class: ProblemClass = args.data.class.into();
    let mode: IsoMode = args.mode.into();
    let ref_addr = parse_address(&args.reference, true)?;
    let target_addr = parse_address(&args.target, false)?;
    let (ref_spec, ref_sample) = resolve_sample(&set, &ref_addr, class)?;
    let target_spec = resolve_spec(&set, &target_addr.machine)?;
    let target_full = Address {
        cores: Some(target_spec.cores_per_unit),
        ..target_addr
    };
    let (_, target_sample) = resolve_sample(&set, &target_full, class)?;

    let mut reports = Vec::new();
    if args.hybrid {
        let reliable = match &args.reliable {
            Some(r) => resolve_sample(&set, &parse_address(r, true)?, class)?.1,
            None => ref_sample,
        };
        let template = hybrid_template(reliable, target_sample, &args.hybrid_args)?;
        let reference = IsoReference {
            point: ref_sample.into(),
            llc_bytes: ref_spec.llc_bytes,
        };
        let report = iso::solve_hybrid_for_mode(mode, &reference, &template, target_spec.llc_bytes)?;
        if args.round {
            let rounded = iso::round_clusters(&report, &reference, &template);
            reports.push(("hybrid", report));
            reports.push(("hybrid_rounded", rounded));
        } else {
            reports.push(("hybrid", report));
        }
    } else {
        let report = iso::iso_report(
            mode,
            ref_sample.into(),
            target_sample.into(),
            Some((ref_spec.llc_bytes, target_spec.llc_bytes)),
        )?;
        if args.round {
            let n = report.cluster_count.round().max(1.0);
            let rounded = iso::iso_report(
                mode,
                ref_sample.into(),
                OperatingPoint::new(n * target_sample.gflops, n * target_sample.watts),
                Some((ref_spec.llc_bytes, target_spec.llc_bytes * n as u64)),
            )
            .map(|mut r| {
                r.cluster_count = n;
                r
            })?;
            reports.push(("iso", report));
            reports.push(("iso_rounded", rounded));
        } else {
            reports.push(("iso", report));
        }
    }
    emit_iso(out, &args.output, &reports)?;
    Ok(EXIT_OK)
}

/// Parses `start:stop:step` (percent) into fractions.
pub fn parse_degradation_range(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("degradation range '{s}' must be start:stop:step"));
    }
    let nums = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad number '{p}' in range '{s}'"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !nums.iter().all(|v| v.is_finite()) || start < 0.0 || stop < start || step <= 0.0 {
        return Err(format!("range '{s}' needs 0 <= start <= stop and step > 0"));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(format!("range '{s}' has too many points"));
    }
    Ok((0..count).map(|i| (start + i as f64 * step) / 100.0).collect())
}

fn cmd_ets(args: &EtsArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let degradations = parse_degradation_range(&args.degradation).map_err(CliError::usage)?;
    if args.size == 0 {
        return Err(CliError::usage("--size must be >= 1"));
    }
    let set = load_data(args.data.data.as_deref())?;
    let class: ProblemClass = args.data.class.into();
    let mode: IsoMode = args.mode.into();
    let (ref_spec, ref_sample) = resolve_sample(&set, &parse_address(&args.reference, true)?, class)?;
    let target_addr = parse_address(&args.target, false)?;
    let target_spec = resolve_spec(&set, &target_addr.machine)?;
    let (_, target_sample) = resolve_sample(
        &set,
        &Address {
            cores: Some(target_spec.cores_per_unit),
            ..target_addr
        },
        class,
    )?;

    let iterations = match args.iterations {
        Some(0) => return Err(CliError::usage("--iterations must be >= 1")),
        Some(k) => k,
        None => {
            let a = gen_spd_diag_dominant(args.size, args.seed);
            let b = ones_rhs(&a);
            solver::cg_solve(&a, &b, &SolveConfig::default())
                .map_err(|e| CliError::data(e.to_string()))?
                .report
                .iterations
        }
    };
    let n = args.size as f64;
    let flops_total = iterations as f64 * 2.0 * n * n;

    let template = hybrid_template(ref_sample, target_sample, &args.hybrid_args)?;
    let reference = IsoReference {
        point: ref_sample.into(),
        llc_bytes: ref_spec.llc_bytes,
    };
    let report = iso::solve_hybrid_for_mode(mode, &reference, &template, target_spec.llc_bytes)?;
    let hybrid = template.with_clusters(report.cluster_count);
    let curve = iso::ets_curve(flops_total, reference.point, &hybrid, &degradations)?;
    let breakeven = iso::breakeven_degradation(reference.point, hybrid.operating_point());

    if args.output.json {
        emit_json(
            out,
            &json!({
                "mode": mode,
                "cluster_count": report.cluster_count,
                "reference": reference.point,
                "hybrid": hybrid.operating_point(),
                "size": args.size,
                "iterations": iterations,
                "flops_total": flops_total,
                "rows": curve,
                "breakeven_pct": breakeven.as_ref().ok().map(|d| d * 100.0),
            }),
        )?;
    } else if args.output.csv {
        let mut text = format!("{}\n", iso::EtsPair::CSV_HEADER);
        for row in &curve {
            let _ = writeln!(text, "{}", row.csv_row());
        }
        emit(out, &text)?;
        let _ = match &breakeven {
            Ok(d) => writeln!(err, "break-even degradation: {:.2}%", d * 100.0),
            Err(e) => writeln!(err, "{e}"),
        };
    } else {
        let mut text = String::new();
        let _ = writeln!(
            text,
            "{mode}: {:.4} unreliable clusters, hybrid {:.4} GFLOPS / {:.4} W vs reference {} GFLOPS / {} W",
            report.cluster_count,
            report.achieved_gflops,
            report.achieved_watts,
            reference.point.gflops,
            reference.point.watts
        );
        let _ = writeln!(
            text,
            "work: {iterations} iterations x 2*{}^2 flops = {flops_total} flops",
            args.size
        );
        let _ = writeln!(
            text,
            "{:>10}  {:>14}  {:>14}  {:>8}",
            "d (%)", "ETS ref (J)", "ETS hybrid (J)", "ratio"
        );
        for row in &curve {
            let _ = writeln!(
                text,
                "{:>10.2}  {:>14.6}  {:>14.6}  {:>8.4}",
                row.reference.degradation * 100.0,
                row.reference.ets,
                row.hybrid.ets,
                row.ratio()
            );
        }
        match &breakeven {
            Ok(d) => {
                let _ = writeln!(text, "break-even degradation: {:.2}%", d * 100.0);
            }
            Err(e) => {
                let _ = writeln!(text, "{e}");
            }
        }
        emit(out, &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_machines(args: &MachinesArgs, out: &mut dyn Write) -> CliResult {
    if !(args.intensity > 0.0 && args.intensity.is_finite()) {
        return Err(CliError::usage("--intensity must be > 0"));
    }
    let set = load_data(args.data.as_deref())?;
    let rows: Vec<serde_json::Value> = set
        .specs()
        .iter()
        .map(|s| {
            json!({
                "spec": s,
                "roofline_gflops": machine::roofline_gflops(s, args.intensity),
                "max_onchip_n": machine::max_onchip_n(s.llc_bytes),
            })
        })
        .collect();
    if args.json {
        emit_json(
            out,
            &json!({ "arithmetic_intensity": args.intensity, "machines": rows }),
        )?;
    } else {
        let mut text = format!(
            "{:<8} {:>5} {:>11} {:>10} {:>10} {:>10} {:>7}\n",
            "name", "cores", "freq (GHz)", "LLC (MiB)", "BW (GB/s)", "roofline", "max n"
        );
        for s in set.specs() {
            let _ = writeln!(
                text,
                "{:<8} {:>5} {:>5}-{:<5} {:>10.2} {:>10.2} {:>10.4} {:>7}",
                s.name,
                s.cores_per_unit,
                s.freq_min,
                s.freq_max,
                s.llc_bytes as f64 / machine::MIB as f64,
                s.stream_bandwidth,
                machine::roofline_gflops(s, args.intensity),
                machine::max_onchip_n(s.llc_bytes)
            );
        }
        emit(out, &text)?;
    }
    Ok(EXIT_OK)
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> CliResult {
    let set = load_data(args.data.data.as_deref())?;
    let class: ProblemClass = args.data.class.into();
    resolve_spec(&set, &args.machine)?;
    let points: Vec<PerfSample> = set
        .samples_for(&args.machine)
        .filter(|s| s.problem_class == class && (s.freq - args.freq).abs() < 1e-9)
        .cloned()
        .collect();
    let fit = machine::static_power_fit(&points)?;
    if args.json {
        emit_json(
            out,
            &json!({ "machine": args.machine, "freq_ghz": args.freq, "points": points.len(), "fit": fit }),
        )?;
    } else {
        emit(
            out,
            &format!(
                "{} @ {} GHz ({} points): static {:.4} W, {:.4} W/core, r^2 {:.6}\n",
                args.machine,
                args.freq,
                points.len(),
                fit.intercept,
                fit.slope,
                fit.r_squared
            ),
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_scaling(args: &ScalingArgs, out: &mut dyn Write) -> CliResult {
    let set = load_data(args.data.data.as_deref())?;
    let class: ProblemClass = args.data.class.into();
    let addr = |freq| Address {
        machine: args.machine.clone(),
        cores: args.cores,
        freq: Some(freq),
    };
    let (_, low) = resolve_sample(&set, &addr(args.low), class)?;
    let (_, high) = resolve_sample(&set, &addr(args.high), class)?;
    let f = machine::scaling_factors(low, high)?;
    if args.json {
        emit_json(
            out,
            &json!({ "low": low, "high": high, "factors": f, "efficiency_factor": f.efficiency_factor() }),
        )?;
    } else {
        emit(
            out,
            &format!(
                "{} {} -> {} GHz: perf x{:.3}, power x{:.3}, freq x{:.3}, GFLOPS/W x{:.3}\n",
                args.machine,
                args.low,
                args.high,
                f.perf_factor,
                f.power_factor,
                f.freq_factor,
                f.efficiency_factor()
            ),
        )?;
    }
    Ok(EXIT_OK)
}
