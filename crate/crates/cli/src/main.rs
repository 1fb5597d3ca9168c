//! `oss`: run, synthesize, sweep and check optimal steady-state control
//! scenarios.
//!
//! Exit codes: 0 success, 1 run did not meet its tolerances or another
//! failure, 2 schema error, 3 numeric divergence (the report is still
//! written), 4 synthesis infeasible.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use oss_core::error::Error;
use oss_core::numerics::{self, Vector};
use oss_core::optimality::subspace_structure_report;
use oss_core::scenario::{self, GainsFile, ResolveOptions, ScenarioFile, SynthesisSpec, SweepParameterSpec};
use oss_core::simulate::{self, ConvergenceReport, Trace};

const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Upper bound on trace rows; switch samples come on top.
const TRACE_ROWS: usize = 20_000;
const SECTOR_PAIRS: usize = 2000;

const EXIT_FAIL: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

#[derive(Parser)]
#[command(name = "oss", version, about = "Optimal steady-state controller toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the scenario; writes the trace CSV and the JSON report.
    Run(Common),
    /// Synthesize a static gain; writes the gains file.
    Synthesize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rho: Option<f64>,
        /// Fixed performance level instead of the smallest certifiable one.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        decay_rate: Option<f64>,
        #[arg(long)]
        backoff: Option<f64>,
    },
    /// Run the scenario over a grid of time scales; writes a CSV table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        parameter: Option<ParameterArg>,
        /// Comma-separated grid values.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        horizon_factor: Option<f64>,
    },
    /// Validate a scenario and print structural reports without simulating.
    Check(Common),
}

#[derive(Args)]
struct Common {
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, short, default_value = ".")]
    output: PathBuf,
    #[arg(long)]
    seed_override: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParameterArg {
    Tau,
    Ratio,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Schema(_) => EXIT_SCHEMA,
            Error::SynthesisInfeasible(_) | Error::CertificateMismatch { .. } => EXIT_INFEASIBLE,
            Error::Divergence { .. } => EXIT_DIVERGENCE,
            _ => EXIT_FAIL,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_FAIL, message: format!("{}: {e}", path.display()) }
}

type CliResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let out = match cli.command {
        Command::Run(c) => cmd_run(&c),
        Command::Synthesize { common, rho, gamma, decay_rate, backoff } => {
            cmd_synthesize(&common, SynthesisFlags { rho, gamma, decay_rate, backoff })
        }
        Command::Sweep { common, parameter, grid, horizon_factor } => {
            cmd_sweep(&common, parameter, grid, horizon_factor)
        }
        Command::Check(c) => cmd_check(&c),
    };
    match out {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_options(c: &Common) -> ResolveOptions {
    ResolveOptions {
        seed_override: c.seed_override,
        dt_override: c.dt,
        base_dir: c.scenario.parent().map(Path::to_path_buf),
    }
}

fn load(c: &Common) -> std::result::Result<ScenarioFile, Failure> {
    match scenario::load(&c.scenario) {
        Ok(f) => Ok(f),
        // An unreadable file is reported like a malformed one.
        Err(Error::Io(m)) => Err(Failure { code: EXIT_SCHEMA, message: m }),
        Err(e) => Err(e.into()),
    }
}

fn output_path(c: &Common, name: &str) -> std::result::Result<PathBuf, Failure> {
    fs::create_dir_all(&c.output).map_err(|e| io_failure(&c.output, e))?;
    Ok(c.output.join(name))
}

fn write_text(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |x| json!(x))
}

fn vec_json(v: &Vector) -> Value {
    json!(v.as_slice())
}

fn report_json(resolved: &scenario::Resolved, rep: &ConvergenceReport, trace: &Trace) -> Value {
    let s = &resolved.scenario;
    let intervals: Vec<Value> = rep
        .intervals
        .iter()
        .map(|i| {
            json!({
                "start": i.start,
                "end": i.end,
                "u_star": vec_json(&i.u_star),
                "z_star": vec_json(&i.z_star),
                "settling_time": opt(i.settling_time),
                "max_constraint_violation": i.max_constraint_violation,
                "final_u_error": i.final_u_error,
            })
        })
        .collect();
    let mut report = json!({
        "version": VERSION,
        "scenario_hash": resolved.hash,
        "controller": s.controller.kind_name(),
        "success": rep.success,
        "final_stationarity": rep.final_stationarity,
        "final_feasibility": rep.final_feasibility,
        "final_u_error": rep.final_u_error,
        "final_u": vec_json(&rep.final_u),
        "final_z": vec_json(&rep.final_z),
        "min_domain_margin": opt(rep.min_domain_margin),
        "intervals": intervals,
        "trace_rows": trace.len(),
        "divergence": rep.divergence.as_ref().map_or(Value::Null, |d| json!({"time": d.time, "reason": d.reason})),
    });
    if let Some(model) = &resolved.system.frequency {
        let m = model.buses();
        let w = s.schedule.at(s.horizon)[0];
        report["frequency"] = json!({
            "frequency_deviation": rep.final_z.get(m - 1).copied().unwrap_or(f64::NAN),
            "power_balance": rep.final_u.sum() - w,
            "marginal_cost_spread": model.marginal_cost_spread(&rep.final_u),
        });
    }
    report
}

fn cmd_run(c: &Common) -> CliResult {
    let file = load(c)?;
    let resolved = scenario::resolve(&file, &resolve_options(c))?;
    let s = &resolved.scenario;
    let stride = simulate::stride_for_rows(s, TRACE_ROWS)?;
    let (trace, rep) = simulate::run_decimated(s, stride)?;

    let trace_path = output_path(c, &resolved.file.outputs.trace)?;
    let f = fs::File::create(&trace_path).map_err(|e| io_failure(&trace_path, e))?;
    trace.write_csv(BufWriter::new(f))?;
    let report_path = output_path(c, &resolved.file.outputs.report)?;
    let report = report_json(&resolved, &rep, &trace);
    write_text(&report_path, &(serde_json::to_string_pretty(&report).expect("report is valid JSON") + "\n"))?;

    if !c.quiet {
        println!(
            "{}: success={} stationarity={:.3e} feasibility={:.3e} u_error={:.3e}",
            s.controller.kind_name(),
            rep.success,
            rep.final_stationarity,
            rep.final_feasibility,
            rep.final_u_error
        );
        println!("scenario hash {}", resolved.hash);
    }
    if let Some(d) = &rep.divergence {
        eprintln!("diverged at t = {}: {}", d.time, d.reason);
        return Ok(EXIT_DIVERGENCE);
    }
    Ok(if rep.success { 0 } else { EXIT_FAIL })
}

struct SynthesisFlags {
    rho: Option<f64>,
    gamma: Option<f64>,
    decay_rate: Option<f64>,
    backoff: Option<f64>,
}

fn cmd_synthesize(c: &Common, flags: SynthesisFlags) -> CliResult {
    let mut file = scenario::apply_overrides(&load(c)?, &resolve_options(c))?;
    let mut spec = match (&file.synthesis, flags.rho) {
        (Some(s), _) => s.clone(),
        (None, Some(rho)) => SynthesisSpec { rho, gamma: None, decay_rate: 0.0, backoff: None },
        (None, None) => {
            return Err(Error::Schema("synthesis: missing section; give one or pass --rho".into()).into());
        }
    };
    if let Some(r) = flags.rho {
        spec.rho = r;
    }
    if flags.gamma.is_some() {
        spec.gamma = flags.gamma;
    }
    if let Some(a) = flags.decay_rate {
        spec.decay_rate = a;
    }
    if flags.backoff.is_some() {
        spec.backoff = flags.backoff;
    }
    file.synthesis = Some(spec);
    let system = scenario::resolve_system(&file, &ResolveOptions::default())?;
    let hash = scenario::source_hash(&file, &system.plant)?;
    let (spec, res) = scenario::synthesize_system(&file, &system)?;
    let gains = GainsFile::from_result(&res, &spec, &hash, VERSION);
    let path = output_path(c, &file.outputs.gains)?;
    write_text(&path, &gains.to_toml()?)?;
    if !c.quiet {
        println!(
            "gamma={:.6e} certificate_margin={:.3e} |K|={:.6e}",
            res.gamma,
            res.certificate_margin,
            numerics::norm2(&res.k)
        );
        println!("wrote {}", path.display());
    }
    Ok(0)
}

fn cmd_sweep(
    c: &Common,
    parameter: Option<ParameterArg>,
    grid: Option<Vec<f64>>,
    horizon_factor: Option<f64>,
) -> CliResult {
    let file = load(c)?;
    let resolved = scenario::resolve(&file, &resolve_options(c))?;
    let section = resolved.file.sweep.clone();
    let parameter = match (parameter, &section) {
        (Some(ParameterArg::Tau), _) => SweepParameterSpec::Tau,
        (Some(ParameterArg::Ratio), _) => SweepParameterSpec::Ratio,
        (None, Some(s)) => s.parameter,
        (None, None) => SweepParameterSpec::Tau,
    };
    let grid = grid
        .or_else(|| section.as_ref().map(|s| s.grid.clone()))
        .ok_or_else(|| Failure::from(Error::Schema("sweep: no grid; give a [sweep] section or --grid".into())))?;
    let factor = horizon_factor.or(section.as_ref().map(|s| s.horizon_factor)).unwrap_or(0.0);
    let table = simulate::tau_sweep(&resolved.scenario, parameter.into(), &grid, factor)?;
    let path = output_path(c, &resolved.file.outputs.sweep)?;
    let f = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
    table.write_csv(BufWriter::new(f))?;
    if !c.quiet {
        for r in &table.rows {
            println!("{:>12.6} success={} diverged={}", r.value, r.success, r.diverged);
        }
        println!(
            "up-set={} contiguous={} threshold={}",
            table.is_up_set(),
            table.is_contiguous(),
            table.threshold().map_or("none".into(), |t| t.to_string())
        );
        if let Some((lo, hi)) = table.largest_success_region() {
            println!("largest success region [{lo}, {hi}]");
        }
    }
    Ok(if table.rows.iter().any(|r| r.success) { 0 } else { EXIT_FAIL })
}

fn cmd_check(c: &Common) -> CliResult {
    let file = scenario::apply_overrides(&load(c)?, &resolve_options(c))?;
    let system = scenario::resolve_system(&file, &ResolveOptions::default())?;
    let ctx = &system.ctx;
    let plant = &system.plant;
    println!(
        "plant: n={} m={} r={} n_w={} spectral abscissa {:.6e}",
        plant.states(),
        plant.inputs(),
        plant.outputs(),
        plant.disturbances(),
        plant.stability_margin()
    );
    println!("dc gain condition {:.3e}", ctx.gains.condition);
    for w in &ctx.gains.warnings {
        println!("warning: {w}");
    }
    let n = &ctx.cg.n;
    println!(
        "N: {}x{} rank {} full row rank {}",
        n.nrows(),
        n.ncols(),
        numerics::rank_default(n)?,
        n.nrows() == 0 || numerics::has_full_row_rank(n)?
    );
    match &ctx.fs {
        None => println!("feasible subspace: trivial, the steady state is fully determined"),
        Some(fs) => {
            println!("feasible subspace: dimension {}", fs.q());
            for w in &fs.warnings {
                println!("warning: {w}");
            }
            let l = subspace_structure_report(fs, &ctx.gains, &ctx.prob)?;
            println!("T_u full column rank {}", l.t_u_full_column_rank);
            println!(
                "T_z full column rank {} range(T_u) in range(G_u') {} (residual {:.3e}) agree {}",
                l.t_z_full_column_rank, l.range_inclusion, l.range_inclusion_residual, l.rank_matches_range_test
            );
            println!(
                "G_u full column rank {} implies T_z full column rank: {}",
                l.g_u_full_column_rank, l.column_rank_transfers
            );
            match &l.row_rank_candidate {
                Some(cand) => println!("row-rank basis candidate residual {:.3e}", cand.defining_residual),
                None => println!("row-rank basis candidate: none (G_u full row rank {})", l.g_u_full_row_rank),
            }
        }
    }
    let (sf, sg) = ctx.prob.validate_sectors(SECTOR_PAIRS, 0)?;
    let sector_line = |name: &str, f: &oss_core::problem::ConvexFunction, chk: &oss_core::problem::SectorCheck| {
        let s = f.sector();
        println!(
            "sector {name}: m={} L={} {:?} holds {} (min normalized form {:.3e}, {} pairs)",
            s.m,
            s.l,
            s.class(),
            chk.holds(),
            chk.min_normalized_form,
            chk.pairs
        );
    };
    sector_line("f0", &ctx.prob.f0, &sf);
    sector_line("g0", &ctx.prob.g0, &sg);
    let ok = sf.holds() && sg.holds() && ctx.gains.warnings.is_empty();
    if !c.quiet {
        println!("check {}", if ok { "passed" } else { "found problems" });
    }
    Ok(if ok { 0 } else { EXIT_FAIL })
}
