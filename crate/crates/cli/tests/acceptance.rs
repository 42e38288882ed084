//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use gridshare_cli::{misreport_sweep, run_cli, ScaleRange};
use gridshare_core::cases::{random_case, two_group_case, RandomCaseSpec};
use gridshare_core::centralized::solve_centralized;
use gridshare_core::flexibility::{compute_region, feasibility_value, max_violation, sample_point, DualBox};
use gridshare_core::model::net_fixed_vector;
use gridshare_core::network::assemble_constraints;
use gridshare_core::sharing::{check_c1, run_sharing};
use gridshare_core::{Case, Tolerances, UserId};
use serde_json::Value;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("gridshare").chain(args.iter().copied()))
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).expect("output written")).expect("valid JSON")
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().expect("array").iter().map(|x| x.as_f64().expect("number")).collect()
}

fn write_case(dir: &Path, name: &str, case: &Case) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, case.to_json()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prosumer_case(seed: u64, prosumers: usize) -> Case {
    random_case(
        seed,
        &RandomCaseSpec {
            buses: (2, 5),
            users: (prosumers + 1, prosumers + 6),
            prosumers: Some(prosumers),
            ..Default::default()
        },
    )
}

/// Search box comfortably larger than any output the case can absorb.
fn box_for(case: &Case, dim: usize) -> Vec<f64> {
    let total: f64 = case.users.iter().map(|u| u.fixed_demand + u.elastic_hi).sum();
    vec![1.5 * total; dim]
}

fn two_group_reproduction() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let case = two_group_case::<f64>(10.0);
    let path = write_case(dir.path(), "case.json", &case);
    let (out, trace) = (dir.path().join("eq.json"), dir.path().join("trace.csv"));
    let start = Instant::now();
    let code = run(&["share", "--case", s(&path), "--out", s(&out), "--trace", s(&trace)]);
    let elapsed = start.elapsed();
    let eq = read_json(&out);
    let d = floats(&eq["d"]);
    let dev = d.iter().map(|d| (d - 0.35).abs()).fold(0.0, f64::max);
    // Two buses, line 2 -> 1: the flow is the net injection at bus 2.
    let injection: f64 = case
        .users
        .iter()
        .zip(&d)
        .filter(|(u, _)| u.bus == case.grid.lines[0].from_bus)
        .map(|(u, d)| case.scenario.output(u.id).unwrap_or(0.0) - u.fixed_demand - d)
        .sum();
    let converged = eq["converged"] == true;
    outcome(
        code == 0 && converged && dev <= 1e-3 && (injection - 10.0).abs() <= 1e-3 && elapsed < Duration::from_secs(10),
        format!(
            "converged={converged} iterations={} max|d-0.35|={dev:.2e} flow={injection:.6} time={:.2?}",
            eq["iterations"], elapsed
        ),
    )
}

fn equivalence() -> Outcome {
    let start = Instant::now();
    let (mut worst_d, mut worst_l, mut worst_b) = (0.0f64, 0.0f64, 0.0f64);
    let mut unconverged = 0;
    for seed in 0..100u64 {
        let case = random_case::<f64>(10_000 + seed, &RandomCaseSpec::default());
        let c = solve_centralized(&case.grid, &case.users, &case.scenario).unwrap();
        let eq = run_sharing(&case.grid, &case.users, &case.scenario, &case.market).unwrap();
        unconverged += usize::from(!eq.converged);
        let net_fixed = net_fixed_vector(&case.users, &case.scenario).unwrap();
        for k in 0..case.users.len() {
            worst_d = worst_d.max((eq.d[k] - c.d[k]).abs());
            worst_l = worst_l.max((eq.lambda[k] - c.lambda[k]).abs());
            let b_star = c.d[k] + net_fixed[k] + case.market.a * c.lambda[k];
            // b* = d* + D + a lambda*, so the d and lambda tolerances carry over
            worst_b = worst_b.max((eq.b[k] - b_star).abs() / (1e-5 + case.market.a * 1e-4));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        unconverged == 0 && worst_d <= 1e-5 && worst_l <= 1e-4 && worst_b <= 1.0 && elapsed < Duration::from_secs(300),
        format!(
            "100 cases, unconverged={unconverged} max|dd|={worst_d:.2e} max|dlambda|={worst_l:.2e} max|b-b*| relative to its bound={worst_b:.2e} time={elapsed:.2?}"
        ),
    )
}

fn region_correctness() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut total_mismatches = 0;
    let mut failures = Vec::new();
    let mut classified = 0;
    let cases: Vec<(u64, usize)> = (0..20).map(|i| (20_000 + i, 2)).chain([(20_100, 3)]).collect();
    for (seed, dim) in cases {
        let case = prosumer_case(seed, dim);
        let path = write_case(dir.path(), &format!("case{seed}.json"), &case);
        let region = dir.path().join(format!("region{seed}.json"));
        let report = dir.path().join(format!("report{seed}.json"));
        let wmax = box_for(&case, dim).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        let code = run(&["region", "--case", s(&path), "--wmax", &wmax, "--out", s(&region)]);
        if code != 0 || read_json(&region)["complete"] != true {
            failures.push(format!("region seed {seed} exit {code}"));
            continue;
        }
        let code = run(&[
            "verify-region", "--case", s(&path), "--region", s(&region), "--samples", "1000", "--seed", "7",
            "--out", s(&report),
        ]);
        let rep = read_json(&report);
        let m = rep["mismatches"].as_array().map_or(usize::MAX, Vec::len);
        classified += rep["agreements"].as_u64().unwrap_or(0) as usize + m;
        total_mismatches += m;
        if code != 0 {
            failures.push(format!("verify seed {seed}: {m} mismatches"));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures.is_empty() && total_mismatches == 0 && elapsed < Duration::from_secs(300),
        format!(
            "20 two-output + 1 three-output regions, classified samples={classified} mismatches={total_mismatches} {failures:?} time={elapsed:.2?}"
        ),
    )
}

fn duality_link() -> Outcome {
    let mut worst = 0.0f64;
    let mut infeasible = 0;
    for i in 0..100u64 {
        let case = prosumer_case(30_000 + i / 4, 2 + (i % 2) as usize);
        let cs = assemble_constraints(&case.grid, &case.users).unwrap();
        // up to twice the case's own outputs: a mix of feasible and infeasible points
        let hi: Vec<f64> = case.scenario.vector(&case.users).unwrap().iter().map(|w| 2.0 * w).collect();
        let w = sample_point(&hi, 30_000, i);
        let fv = feasibility_value(&cs, &w).unwrap().value;
        let mv = max_violation(&DualBox::new(&cs), &cs, &w).unwrap().r;
        infeasible += usize::from(fv > 1e-9);
        worst = worst.max((fv - mv).abs());
    }
    outcome(
        worst <= 1e-6,
        format!("100 pairs ({infeasible} infeasible), max|feasibility value - max violation|={worst:.2e}"),
    )
}

fn fejer_monotonicity() -> Outcome {
    let spec = RandomCaseSpec {
        eps: 1e-8,
        max_iters: 1000,
        ..Default::default()
    };
    let mut worst_rise = f64::NEG_INFINITY;
    let mut max_iters = 0;
    let mut problems = Vec::new();
    for seed in 40_000..40_020u64 {
        let case = random_case::<f64>(seed, &spec);
        if !check_c1(&case.users, case.market.a).holds {
            problems.push(format!("seed {seed}: condition fails"));
            continue;
        }
        let c = solve_centralized(&case.grid, &case.users, &case.scenario).unwrap();
        let net_fixed = net_fixed_vector(&case.users, &case.scenario).unwrap();
        let b_star: Vec<f64> = (0..case.users.len())
            .map(|k| c.d[k] + net_fixed[k] + case.market.a * c.lambda[k])
            .collect();
        let eq = run_sharing(&case.grid, &case.users, &case.scenario, &case.market).unwrap();
        if !eq.converged {
            problems.push(format!("seed {seed}: no convergence in 1000"));
        }
        max_iters = max_iters.max(eq.iterations);
        let mut prev = f64::INFINITY;
        for r in &eq.trace.records {
            let dist = r
                .d
                .iter()
                .zip(&c.d)
                .chain(r.b.iter().zip(&b_star))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            if prev.is_finite() {
                worst_rise = worst_rise.max(dist - prev);
            }
            prev = dist;
        }
    }
    outcome(
        problems.is_empty() && worst_rise <= 1e-9,
        format!("20 cases, max iterations={max_iters} largest step-to-step distance change={worst_rise:.2e} {problems:?}"),
    )
}

fn region_monotonicity() -> Outcome {
    let mut lost = 0;
    let mut checked = 0;
    let mut cases: Vec<(Case, Vec<Vec<UserId>>)> = (50_000..50_010u64).map(|s| (prosumer_case(s, 2), vec![])).collect();
    let tg = two_group_case::<f64>(10.0);
    let groups = gridshare_core::network::prosumers_by_bus(&tg.grid, &tg.users);
    cases.push((tg, groups));
    for (case, groups) in &cases {
        let system = |c: &Case| {
            let cs = assemble_constraints(&c.grid, &c.users).unwrap();
            if groups.is_empty() { cs } else { cs.with_grouped_outputs(groups).unwrap() }
        };
        let small_cs = system(case);
        let wmax = if groups.is_empty() { box_for(case, 2) } else { vec![3.0, 3.0] };
        let small = compute_region(&small_cs, &wmax).unwrap();
        let large = compute_region(&system(&case.with_scaled_limits(2.0)), &wmax).unwrap();
        for v in &small.vertices {
            checked += 1;
            lost += usize::from(!large.contains_within(v, 1e-7).unwrap());
        }
    }
    outcome(lost == 0, format!("{} cases, {checked} vertices checked, {lost} outside the doubled-limit region", cases.len()))
}

fn misreport_direction() -> Outcome {
    let tol = Tolerances::default();
    let scales = ScaleRange { lo: 0.2, hi: 4.0, step: 0.2 }.values();
    let target = UserId(1);

    let congested = two_group_case::<f64>(10.0);
    let sweep = misreport_sweep(&congested, target, &scales, &tol).unwrap();
    let truthful = sweep.rows.iter().find(|r| r.scale == 1.0).unwrap().total_central;
    let at4 = sweep.rows.last().unwrap().total_central;
    let congested_ok = at4 > truthful;

    let open = two_group_case::<f64>(50.0);
    let sweep = misreport_sweep(&open, target, &scales, &tol).unwrap();
    let totals: Vec<f64> = sweep.rows.iter().map(|r| r.total_sharing).collect();
    let spread = totals.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - totals.iter().cloned().fold(f64::INFINITY, f64::min);
    let flagged = sweep.rows.iter().any(|r| r.sharing_unconverged || r.central_infeasible);
    let open_ok = spread < 1e-6 && !flagged;
    outcome(
        congested_ok && open_ok,
        format!(
            "congested centralized total truthful={truthful:.6} scale4={at4:.6} ({}); uncongested sharing total spread={spread:.3e} ({})",
            if congested_ok { "ok" } else { "not above" },
            if open_ok { "ok" } else { "exceeds 1e-6" }
        ),
    )
}

fn non_convergence() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = write_case(dir.path(), "case.json", &two_group_case::<f64>(10.0));
    let (out, trace) = (dir.path().join("eq.json"), dir.path().join("trace.csv"));
    let code = run(&[
        "share", "--case", s(&path), "--a", "0.01", "--max-iters", "200", "--out", s(&out), "--trace", s(&trace),
    ]);
    let eq = read_json(&out);
    let rows = csv::Reader::from_path(&trace).unwrap().records().count();
    let converged = eq["converged"].as_bool();
    outcome(
        code == 0 && converged == Some(false) && rows == 200 * 200,
        format!("exit={code} converged={converged:?} trace rows={rows} (expected {})", 200 * 200),
    )
}

fn main() {
    // Library panics inside a criterion are reported as that criterion failing.
    std::panic::set_hook(Box::new(|_| {}));
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("two-group case reproduction", two_group_reproduction),
        ("sharing equilibrium equals centralized dispatch", equivalence),
        ("region agrees with feasibility sampling", region_correctness),
        ("feasibility value equals maximal violation", duality_link),
        ("distance to the fixed point never increases", fejer_monotonicity),
        ("region grows when line limits double", region_monotonicity),
        ("misreport direction", misreport_direction),
        ("non-convergence is reported cleanly", non_convergence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!result.pass);
        println!(
            "criterion {} {}: {} - {}",
            i + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
