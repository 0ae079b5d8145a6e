//! Command-line front end. JSON is the canonical output; tables are views.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::attack::{certify_attack, fixed_dispatch_lb, multistart_attack, AttackConfig};
use crate::case::{load_case, NetworkCase};
use crate::defense::{
    defense_local, heuristic_simplex, rank1_policy, verify_policy, warm_start_defense, DefenseOptions, DefensePolicy,
    Rank1Kind,
};
use crate::error::{Error, Result};
use crate::model::{build_model, nominal_dispatch, FeasibilityMatrices};
use crate::numeric::NumericPolicy;
use crate::report::{delta_by_bus, delta_csv, AttackReport, DefenseReport, MatrixDump, RunManifest};
use crate::squeeze::{squeeze_run, BoundsReport, SqueezeConfig};

#[derive(Debug, Parser)]
#[command(name = "dcattack", version, about = "Certified bounds on the smallest load perturbation that makes DC-OPF infeasible")]
pub struct Cli {
    /// Worker threads for parallel restarts.
    #[arg(long, global = true, env = "DCATTACK_NUM_THREADS")]
    pub threads: Option<usize>,
    /// Feasibility tolerance (p.u.) for residual checks.
    #[arg(long, global = true, default_value_t = 1e-8)]
    pub tol_feas: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for the smallest certified infeasibility-inducing perturbation.
    Attack(AttackArgs),
    /// Compute a control policy with a guaranteed radius.
    Defend(DefendArgs),
    /// Alternate attack and defense until the bounds meet.
    Squeeze(SqueezeArgs),
    /// Squeeze several cases and print a summary table.
    Table(TableArgs),
    /// Convert a MATPOWER case to canonical JSON.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// MATPOWER `.m` or canonical `.json` case.
    pub case: PathBuf,
    /// Random seed; generated and recorded when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Also write A, B, c with row labels to this JSON file.
    #[arg(long)]
    pub dump_matrices: Option<PathBuf>,
    /// Index of the slack generator (default: widest output range).
    #[arg(long)]
    pub slack: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    /// Per-bus perturbation CSV (p.u. and percent of total load).
    #[arg(long)]
    pub delta_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    Optimized,
    WarmStart,
    Rank1Uniform,
    Rank1Proportional,
    Simplex,
}

#[derive(Debug, Args)]
pub struct DefendArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = PolicyArg::Optimized)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1000)]
    pub verify_samples: usize,
}

#[derive(Debug, Args)]
pub struct SqueezeOpts {
    /// Wall-clock budget in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub budget: f64,
    #[arg(long, default_value_t = 0.01)]
    pub match_threshold: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 5)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1000)]
    pub verify_samples: usize,
}

#[derive(Debug, Args)]
pub struct SqueezeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub opts: SqueezeOpts,
    /// Bound-versus-time CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Md,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct TableArgs {
    #[arg(required = true)]
    pub cases: Vec<PathBuf>,
    #[command(flatten)]
    pub opts: SqueezeOpts,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = TableFormat::Md)]
    pub format: TableFormat,
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    pub case: PathBuf,
    /// Output path (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command, writing reports to `out`.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let body = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&body).unwrap_or_default());
            exit_code(&e)
        }
    }
}

/// Bad input (unreadable, malformed or invalid case) exits 2 like a usage error.
fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        "io" | "parse" | "validation" => 2,
        _ => 1,
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let numeric = NumericPolicy::default().with_feasibility(cli.tol_feas);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.unwrap_or(0)).build().map_err(|e| Error::Io {
        path: "<thread pool>".into(),
        source: std::io::Error::other(e),
    })?;
    let mut buf: Vec<u8> = Vec::new();
    let result = pool.install(|| match &cli.command {
        Command::Attack(a) => cmd_attack(a, cli, numeric, &mut buf),
        Command::Defend(d) => cmd_defend(d, cli, numeric, &mut buf),
        Command::Squeeze(s) => cmd_squeeze(s, cli, numeric, &mut buf),
        Command::Table(t) => cmd_table(t, cli, numeric, &mut buf),
        Command::Convert(c) => cmd_convert(c, &mut buf),
    });
    out.write_all(&buf).map_err(io_err)?;
    result
}

fn read_case(path: &Path) -> Result<NetworkCase> {
    Ok(load_case(path)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

fn emit<T: Serialize>(doc: &T, target: Option<&PathBuf>, out: &mut dyn Write, summary: &str) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    match target {
        Some(p) => {
            write_file(p, &text)?;
            writeln!(out, "{summary}").map_err(io_err)?;
        }
        None => writeln!(out, "{text}").map_err(io_err)?,
    }
    Ok(())
}

fn io_err(source: std::io::Error) -> Error {
    Error::Io { path: "<stdout>".into(), source }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn manifest(cli: &Cli, command: &str, cases: Vec<String>, seed: u64, numeric: NumericPolicy, config: serde_json::Value) -> RunManifest {
    let mut m = RunManifest::new(command, cases, seed, numeric, config);
    m.threads = cli.threads;
    m
}

fn prepare(common: &CommonArgs, numeric: &NumericPolicy) -> Result<(NetworkCase, FeasibilityMatrices)> {
    let case = read_case(&common.case)?;
    let mats = build_model(&case, common.slack)?;
    if let Some(p) = &common.dump_matrices {
        write_file(p, &serde_json::to_string_pretty(&MatrixDump::new(&mats))?)?;
    }
    nominal_dispatch(&mats, numeric)?;
    Ok((case, mats))
}

fn outputs(paths: &[Option<&PathBuf>]) -> Vec<String> {
    paths.iter().flatten().map(|p| p.display().to_string()).collect()
}

pub fn cmd_attack(args: &AttackArgs, cli: &Cli, numeric: NumericPolicy, out: &mut dyn Write) -> Result<i32> {
    let seed = resolve_seed(args.common.seed);
    let (case, mats) = prepare(&args.common, &numeric)?;
    let cfg = AttackConfig { eps: args.eps, restarts: args.restarts, seed, ..Default::default() };
    let run = multistart_attack(&mats, &cfg, &[], &numeric)?;
    let cert = certify_attack(&mats, &run.best.delta_vec(), &numeric)?;
    let p_nom = nominal_dispatch(&mats, &numeric)?;
    let fixed = fixed_dispatch_lb(&mats, &p_nom, &numeric)?;

    let mut m = manifest(cli, "attack", vec![args.common.case.display().to_string()], seed, numeric, serde_json::to_value(&cfg)?);
    m.outputs = outputs(&[args.common.json.as_ref(), args.delta_csv.as_ref(), args.common.dump_matrices.as_ref()]);
    let report = AttackReport::new(m, &case.name, &mats, &run.best, cert, fixed.norm_sq, run.restarts, case.notes.clone());
    if let Some(p) = &args.delta_csv {
        write_file(p, &delta_csv(&delta_by_bus(&mats, &run.best.delta)))?;
    }
    let ok = report.certified;
    emit(&report, args.common.json.as_ref(), out, &format!("{}: attack norm_sq {:.6} certified={ok}", case.name, report.norm_sq))?;
    Ok(if ok { 0 } else { 1 })
}

pub fn cmd_defend(args: &DefendArgs, cli: &Cli, numeric: NumericPolicy, out: &mut dyn Write) -> Result<i32> {
    let seed = resolve_seed(args.common.seed);
    let (case, mats) = prepare(&args.common, &numeric)?;
    let warm = warm_start_defense(&mats, &numeric)?;
    let policy: DefensePolicy = match args.policy {
        PolicyArg::WarmStart => warm.clone(),
        PolicyArg::Optimized => defense_local(&mats, &warm, &DefenseOptions::default(), &numeric)?,
        PolicyArg::Rank1Uniform => rank1_policy(&mats, Rank1Kind::Uniform, &nominal_dispatch(&mats, &numeric)?, &numeric)?,
        PolicyArg::Rank1Proportional => rank1_policy(&mats, Rank1Kind::Proportional, &nominal_dispatch(&mats, &numeric)?, &numeric)?,
        PolicyArg::Simplex => heuristic_simplex(&mats, &numeric)?.into_defense(&mats, &numeric)?,
    };
    let ver = verify_policy(&mats, &policy, args.verify_samples, seed, &[], &numeric)?;
    let policy = DefensePolicy { verified_samples: ver.passed, ..policy };
    let config = json!({ "policy": args.policy, "verify_samples": args.verify_samples, "defense": DefenseOptions::default() });
    let mut m = manifest(cli, "defend", vec![args.common.case.display().to_string()], seed, numeric, config);
    m.outputs = outputs(&[args.common.json.as_ref(), args.common.dump_matrices.as_ref()]);
    let report = DefenseReport::new(m, &case.name, &mats, &policy, warm.t, ver, case.notes.clone());
    emit(&report, args.common.json.as_ref(), out, &format!("{}: defense t {:.6} verified {}", case.name, report.t, report.verification.passed))?;
    Ok(0)
}

fn squeeze_config(opts: &SqueezeOpts, seed: u64, slack: Option<usize>, numeric: NumericPolicy) -> SqueezeConfig {
    SqueezeConfig {
        budget: opts.budget,
        match_threshold: opts.match_threshold,
        attack: AttackConfig { eps: opts.eps, restarts: opts.restarts, seed, ..Default::default() },
        verify_samples: opts.verify_samples,
        slack_gen: slack,
        numeric,
        ..Default::default()
    }
}

fn certified_report(r: &BoundsReport) -> bool {
    r.attack.as_ref().is_none_or(|a| a.certified) && r.ordering_holds()
}

pub fn cmd_squeeze(args: &SqueezeArgs, cli: &Cli, numeric: NumericPolicy, out: &mut dyn Write) -> Result<i32> {
    let seed = resolve_seed(args.common.seed);
    let (case, _) = prepare(&args.common, &numeric)?;
    let cfg = squeeze_config(&args.opts, seed, args.common.slack, numeric);
    let mut report = squeeze_run(&case, &cfg)?;
    let mut m = manifest(cli, "squeeze", vec![args.common.case.display().to_string()], seed, numeric, serde_json::to_value(&cfg)?);
    m.outputs = outputs(&[args.common.json.as_ref(), args.trace.as_ref(), args.common.dump_matrices.as_ref()]);
    report.manifest = Some(m);
    if let Some(p) = &args.trace {
        let mut buf = Vec::new();
        report.write_trace_csv(&mut buf).map_err(io_err)?;
        write_file(p, &String::from_utf8_lossy(&buf))?;
    }
    let summary = format!(
        "{}: lb {:.6} ub {} matched={}",
        case.name,
        report.lb,
        report.ub.map_or("none".to_string(), |u| format!("{u:.6}")),
        report.matched
    );
    emit(&report, args.common.json.as_ref(), out, &summary)?;
    Ok(if certified_report(&report) { 0 } else { 1 })
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub case: String,
    pub lb: f64,
    pub ub: Option<f64>,
    pub gap_percent: Option<f64>,
    pub matched: bool,
    pub match_time: Option<f64>,
    pub elapsed: f64,
}

impl TableRow {
    fn from_report(r: &BoundsReport) -> Self {
        Self {
            case: r.case.clone(),
            lb: r.lb,
            ub: r.ub,
            gap_percent: r.gap.map(|g| 100.0 * g),
            matched: r.matched,
            match_time: r.match_time,
            elapsed: r.elapsed,
        }
    }
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

pub fn render_table(rows: &[TableRow], format: TableFormat) -> String {
    let mut s = String::new();
    match format {
        TableFormat::Md => {
            s.push_str("| case | defend (lb) | attack (ub) | gap % | match | match (s) |\n");
            s.push_str("|---|---|---|---|---|---|\n");
            for r in rows {
                s.push_str(&format!(
                    "| {} | {:.4} | {} | {} | {} | {} |\n",
                    r.case,
                    r.lb,
                    opt(r.ub, 4),
                    opt(r.gap_percent, 2),
                    if r.matched { "yes" } else { "no" },
                    opt(r.match_time, 2)
                ));
            }
        }
        TableFormat::Csv => {
            s.push_str("case,lb,ub,gap_percent,matched,match_time,elapsed\n");
            for r in rows {
                s.push_str(&format!(
                    "{},{:.9},{},{},{},{},{:.3}\n",
                    r.case,
                    r.lb,
                    opt(r.ub, 9),
                    opt(r.gap_percent, 4),
                    r.matched,
                    opt(r.match_time, 3),
                    r.elapsed
                ));
            }
        }
        TableFormat::Json => s = serde_json::to_string_pretty(rows).unwrap_or_default() + "\n",
    }
    s
}

pub fn cmd_table(args: &TableArgs, cli: &Cli, numeric: NumericPolicy, out: &mut dyn Write) -> Result<i32> {
    let seed = resolve_seed(args.seed);
    let cfg = squeeze_config(&args.opts, seed, None, numeric);
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut all_ok = true;
    for path in &args.cases {
        let case = read_case(path)?;
        let r = squeeze_run(&case, &cfg)?;
        all_ok &= certified_report(&r);
        rows.push(TableRow::from_report(&r));
        reports.push(r);
    }
    write!(out, "{}", render_table(&rows, args.format)).map_err(io_err)?;
    if let Some(p) = &args.json {
        let cases = args.cases.iter().map(|p| p.display().to_string()).collect();
        let mut m = manifest(cli, "table", cases, seed, numeric, serde_json::to_value(&cfg)?);
        m.outputs = outputs(&[Some(p)]);
        write_file(p, &serde_json::to_string_pretty(&json!({ "manifest": m, "rows": rows, "reports": reports }))?)?;
    }
    Ok(if all_ok { 0 } else { 1 })
}

pub fn cmd_convert(args: &ConvertArgs, out: &mut dyn Write) -> Result<i32> {
    let case = read_case(&args.case)?;
    let text = case.to_json()?;
    match &args.out {
        Some(p) => write_file(p, &text)?,
        None => writeln!(out, "{text}").map_err(io_err)?,
    }
    Ok(0)
}
