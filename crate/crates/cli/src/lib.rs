//! Command-line front end: case loading, the subcommands, and JSON/CSV
//! output. [`run_cli`] returns the process exit code: 0 on success, 1 on a
//! domain failure (infeasible case, failed verification, non-convergence
//! under `--strict`), 2 on bad usage or unreadable input.

mod args;
mod misreport;
mod output;

use std::ffi::OsString;
use std::path::Path;

use anyhow::anyhow;
use clap::Parser;
use gridshare_core::centralized::solve_centralized_with;
use gridshare_core::flexibility::{compute_region_with, monte_carlo_check_with, FlexError};
use gridshare_core::network::{assemble_constraints, prosumers_by_bus, NetworkError};
use gridshare_core::sharing::{check_c1, run_sharing_with, SharingError, SharingOptions};
use gridshare_core::{load_case, Case, ConstraintSystem, Region, Tolerances, UserId};
use serde::Serialize;

pub use args::{Cli, Command, ScaleRange};
pub use misreport::{misreport_sweep, MisreportRow, MisreportSweepResult};
pub use output::{round_sig, to_json, trace_csv, DIGITS};

/// Largest number of outputs a region is computed over.
const MAX_REGION_DIM: usize = 3;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags or unreadable input; exit 2.
    Usage(anyhow::Error),
    /// The command ran but the outcome is a failure; exit 1.
    Domain(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 1,
        }
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn domain(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Domain(e.into())
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Domain(e)
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (program name first) and runs the command.
pub fn run_cli<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{first} (try --help)");
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Domain(e)) = &f;
            eprintln!("error: {e:#}");
            f.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let tol = Tolerances::from_env().map_err(|e| usage(anyhow!("{}: {e}", gridshare_core::tolerance::ENV_VAR)))?;
    match cli.command {
        Command::Dispatch(a) => dispatch(&a, &tol),
        Command::Share(a) => share(&a, &tol),
        Command::Region(a) => region(&a, &tol),
        Command::VerifyRegion(a) => verify_region(&a, &tol),
        Command::CheckC1(a) => c1(&a),
        Command::Misreport(a) => misreport(&a, &tol),
        Command::DumpConstraints(a) => dump_constraints(&a),
    }
}

fn read_case(path: &Path) -> Result<Case, Failure> {
    load_case(path).map_err(|e| usage(anyhow!("{}: {e}", path.display())))
}

fn with_market(mut case: Case, m: &args::MarketArgs) -> Result<Case, Failure> {
    if let Some(a) = m.a {
        case.market.a = a;
    }
    if let Some(eps) = m.eps {
        case.market.eps = eps;
    }
    if let Some(n) = m.max_iters {
        case.market.max_iters = n;
    }
    case.market.validate().map_err(usage)?;
    Ok(case)
}

fn emit(path: Option<&Path>, text: &str) -> CmdResult {
    output::emit(path, text).map_err(usage)
}

fn emit_json<S: Serialize>(path: Option<&Path>, value: &S) -> CmdResult {
    emit(path, &to_json(value)?)
}

#[derive(Serialize)]
struct DispatchOutput<'a> {
    status: &'a gridshare_core::centralized::DispatchStatus,
    user_ids: &'a [UserId],
    d: &'a [f64],
    lambda: &'a [f64],
    flows: &'a [f64],
    disutility: f64,
    infeasibility: f64,
}

fn dispatch(a: &args::CaseArgs, tol: &Tolerances) -> CmdResult {
    let case = read_case(&a.case)?;
    let sol = solve_centralized_with(&case.grid, &case.users, &case.scenario, tol).map_err(domain)?;
    emit_json(
        a.out.as_deref(),
        &DispatchOutput {
            status: &sol.status,
            user_ids: &sol.user_ids,
            d: &sol.d,
            lambda: &sol.lambda,
            flows: &sol.line_flows,
            disutility: sol.total_disutility,
            infeasibility: sol.infeasibility,
        },
    )?;
    if sol.is_optimal() {
        Ok(())
    } else {
        Err(domain(anyhow!(
            "no feasible dispatch: feasibility value {}",
            round_sig(sol.infeasibility)
        )))
    }
}

fn share(a: &args::ShareArgs, tol: &Tolerances) -> CmdResult {
    let case = with_market(read_case(&a.io.case)?, &a.market)?;
    let options = SharingOptions { tol: *tol, ..Default::default() };
    let eq = run_sharing_with(&case.grid, &case.users, &case.scenario, &case.market, &options).map_err(|e| match e {
        SharingError::InfeasibleClearing => domain(e),
        SharingError::Model(_) => usage(e),
        other => domain(other),
    })?;
    if let Some(path) = &a.trace {
        emit(Some(path), &trace_csv(&eq.trace, &eq.user_ids)?)?;
    }
    emit_json(a.io.out.as_deref(), &eq)?;
    eprintln!(
        "converged={} iterations={} residual={:.3e}",
        eq.converged,
        eq.iterations,
        eq.trace.last().map_or(f64::NAN, |r| r.residual)
    );
    if a.strict && !eq.converged {
        return Err(domain(anyhow!("no convergence within {} iterations", case.market.max_iters)));
    }
    Ok(())
}

/// Constraint system for region work. Cases with more prosumers than a
/// region can span are grouped by bus: all prosumers at a bus share one
/// output coordinate.
fn region_system(case: &Case) -> Result<ConstraintSystem, Failure> {
    let csys = assemble_constraints(&case.grid, &case.users).map_err(domain)?;
    if csys.num_outputs() <= MAX_REGION_DIM {
        return Ok(csys);
    }
    let grouped = csys
        .with_grouped_outputs(&prosumers_by_bus(&case.grid, &case.users))
        .map_err(domain)?;
    if grouped.num_outputs() > MAX_REGION_DIM {
        return Err(domain(FlexError::UnsupportedDimension(grouped.num_outputs())));
    }
    Ok(grouped)
}

fn region(a: &args::RegionArgs, tol: &Tolerances) -> CmdResult {
    let case = read_case(&a.io.case)?;
    let csys = region_system(&case)?;
    if a.wmax.0.len() != csys.num_outputs() {
        return Err(usage(anyhow!(
            "--wmax has {} values but the region has {} coordinates",
            a.wmax.0.len(),
            csys.num_outputs()
        )));
    }
    let region = compute_region_with(&csys, &a.wmax.0, tol, a.jobs).map_err(|e| match e {
        FlexError::BadBox | FlexError::DimensionMismatch { .. } => usage(e),
        other => domain(other),
    })?;
    emit_json(a.io.out.as_deref(), &region)?;
    eprintln!(
        "dim={} halfspaces={} vertices={} cuts={} complete={}",
        region.dim,
        region.halfspaces.len(),
        region.vertices.len(),
        region.cuts.len(),
        region.complete
    );
    Ok(())
}

fn verify_region(a: &args::VerifyArgs, tol: &Tolerances) -> CmdResult {
    let case = read_case(&a.io.case)?;
    let text = std::fs::read_to_string(&a.region).map_err(|e| usage(anyhow!("{}: {e}", a.region.display())))?;
    let region: Region = serde_json::from_str(&text).map_err(|e| usage(anyhow!("{}: {e}", a.region.display())))?;
    let mut csys = assemble_constraints(&case.grid, &case.users).map_err(domain)?;
    if !region.groups.is_empty() {
        csys = csys.with_grouped_outputs(&region.groups).map_err(|e| match e {
            NetworkError::Grouping(_) => usage(anyhow!("region does not match the case: {e}")),
            other => domain(other),
        })?;
    }
    if csys.num_outputs() != region.dim || region.wmax.len() != region.dim {
        return Err(usage(anyhow!(
            "region has {} coordinates, the case has {} outputs",
            region.dim,
            csys.num_outputs()
        )));
    }
    let report = monte_carlo_check_with(&csys, &region, a.samples, a.seed, tol, a.jobs).map_err(domain)?;
    emit_json(a.io.out.as_deref(), &report)?;
    eprintln!(
        "samples={} agreements={} boundary_excluded={} mismatches={}",
        report.samples,
        report.agreements,
        report.boundary_excluded,
        report.mismatches.len()
    );
    if report.mismatches.is_empty() {
        Ok(())
    } else {
        Err(domain(anyhow!("{} samples disagree with the feasibility LP", report.mismatches.len())))
    }
}

fn c1(a: &args::C1Args) -> CmdResult {
    let case = read_case(&a.case)?;
    let sens = a.a.unwrap_or(case.market.a);
    if !(sens.is_finite() && sens > 0.0) {
        return Err(usage(anyhow!("--a must be positive and finite")));
    }
    let r = check_c1(&case.users, sens);
    println!("holds={} margin={}", r.holds, round_sig(r.margin));
    Ok(())
}

fn misreport(a: &args::MisreportArgs, tol: &Tolerances) -> CmdResult {
    let case = with_market(read_case(&a.io.case)?, &a.market)?;
    let target = UserId(a.user);
    if !case.users.iter().any(|u| u.id == target) {
        return Err(usage(anyhow!("--user {target} is not in the case")));
    }
    let sweep = misreport_sweep(&case, target, &a.scale_range.values(), tol)?;
    let csv = a
        .io
        .out
        .as_deref()
        .and_then(Path::extension)
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if csv {
        emit(a.io.out.as_deref(), &sweep.to_csv()?)
    } else {
        emit_json(a.io.out.as_deref(), &sweep)
    }
}

fn dump_constraints(a: &args::CaseArgs) -> CmdResult {
    let case = read_case(&a.case)?;
    let csys = assemble_constraints(&case.grid, &case.users).map_err(domain)?;
    emit(a.out.as_deref(), &constraints_csv(&csys)?)
}

/// `A`, `B` and `c` side by side, one labelled row per constraint.
pub fn constraints_csv(csys: &ConstraintSystem) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string()];
    header.extend(csys.user_ids.iter().map(|u| format!("d:{u}")));
    header.extend(csys.output_ids.iter().map(|u| format!("w:{u}")));
    header.push("c".into());
    w.write_record(&header)?;
    for i in 0..csys.num_rows() {
        let mut rec = vec![csys.labels[i].to_string()];
        rec.extend(csys.a.row(i).iter().chain(csys.b.row(i)).map(|v| (v + 0.0).to_string()));
        rec.push((csys.c[i] + 0.0).to_string());
        w.write_record(&rec)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
