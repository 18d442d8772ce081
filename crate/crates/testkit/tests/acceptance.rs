//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the
//! expensive refinement studies are computed once and shared.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pnp_jko::config::{parse_config, ConfigSource, Setup};
use pnp_jko::driver::{
    convergence_study, kkt_residual, reference_minimizer, run, ConvergenceReport, Coupling, RunOutput,
};
use pnp_jko::functional::{eval_gradient, eval_objective, interp_identity_residuals};
use pnp_jko::optimizer::{build_projector, pg_solve, PgParams, StepInit};
use pnp_jko::State;

use pnp_jko_testkit::{random_feasible_state, random_instance};

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn preset(name: &str) -> Setup {
    parse_config(ConfigSource::Preset(name)).expect("preset")
}

fn run_preset(name: &str) -> RunOutput {
    let s = preset(name);
    run(&s.model, &s.grid, &s.run).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn study(coupling: Coupling) -> ConvergenceReport {
    let s = preset("example51");
    let pg = PgParams {
        step_init: StepInit::BarzilaiBorwein,
        ..PgParams::default()
    };
    let started = Instant::now();
    let report = convergence_study(
        &s.model,
        (-1.0, 1.0),
        &[20, 40, 80, 160],
        coupling,
        0.5,
        (640, 1e-4),
        &pg,
    )
    .expect("convergence study");
    println!("  ({coupling} study took {:.0} s)", started.elapsed().as_secs_f64());
    report
}

fn fmt_orders(v: &[f64]) -> String {
    v.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join("/")
}

fn check_orders(report: &ConvergenceReport, bands: &[(&str, f64, f64)]) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for &(field, lo, hi) in bands {
        let orders = report.orders(field);
        let ok = orders.len() == 3 && orders.iter().all(|o| (lo..=hi).contains(o));
        pass &= ok;
        parts.push(format!(
            "{field} {} in [{lo}, {hi}]{}",
            fmt_orders(&orders),
            if ok { "" } else { " (miss)" }
        ));
    }
    (pass, parts.join("; "))
}

fn energy_dissipation(out: &RunOutput) -> Outcome {
    let r = &out.diagnostics.records;
    let steps = r.len() - 1;
    let with_kinetic = r
        .windows(2)
        .map(|w| w[1].energy + w[1].kinetic - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    let plain = r
        .windows(2)
        .map(|w| w[1].energy - w[0].energy)
        .fold(f64::NEG_INFINITY, f64::max);
    outcome(
        "energy dissipation (example52)",
        steps == 200 && with_kinetic <= 2e-6 && plain <= 2e-6,
        format!("{steps} steps, max(E'+K'-E) = {with_kinetic:.3e}, max(E'-E) = {plain:.3e}"),
    )
}

fn mass_conservation(runs: &[(&str, &RunOutput)]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, out) in runs {
        let drift = out.diagnostics.mass_drift().into_iter().fold(0.0, f64::max);
        worst = worst.max(drift);
        parts.push(format!("{name} {drift:.2e}"));
    }
    outcome(
        "mass conservation",
        worst <= 1e-8,
        format!("max drift: {}", parts.join(", ")),
    )
}

fn positivity(out: &RunOutput, clamp: bool) -> Outcome {
    let r = &out.diagnostics.records;
    let all_positive = r.iter().all(|rec| rec.min_rho > 0.0);
    outcome(
        "positivity (example53, no clamp)",
        !clamp && r.len() == 201 && all_positive,
        format!("{} steps, min rho = {:.3e}", r.len() - 1, out.diagnostics.min_density()),
    )
}

fn steady_state(a: &RunOutput, b: &RunOutput) -> Outcome {
    let h = a.grid.h();
    let dist = (0..a.final_state.layout().species)
        .map(|i| {
            a.final_state
                .rho(i)
                .iter()
                .zip(b.final_state.rho(i))
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>();
    let dist = (h * dist).sqrt();
    outcome(
        "steady-state insensitivity",
        dist <= 1e-2,
        format!("L2 distance at T = 2: {dist:.3e}"),
    )
}

fn gradient_check(rng: &mut ChaCha8Rng) -> Outcome {
    let trials = 120;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (species, cells) = (rng.gen_range(1..=3), rng.gen_range(2..=16));
        let inst = random_instance(rng, species, cells);
        let u = random_feasible_state(rng, &inst);
        let g = eval_gradient(&u, &inst.params).unwrap();
        let mut fd = vec![0.0; g.len()];
        let mut w = u.clone();
        for (k, d) in fd.iter_mut().enumerate() {
            let x = u.as_slice()[k];
            let step = 1e-5 * x.abs().max(1.0);
            w.as_mut_slice()[k] = x + step;
            let fp = eval_objective(&w, &inst.params).total();
            w.as_mut_slice()[k] = x - step;
            let fm = eval_objective(&w, &inst.params).total();
            w.as_mut_slice()[k] = x;
            *d = (fp - fm) / (2.0 * step);
        }
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    outcome(
        "gradient vs central differences",
        worst <= 1e-6,
        format!("{trials} random states, worst relative error {worst:.2e}"),
    )
}

struct OracleResult {
    drho: f64,
    kkt_pg: f64,
    kkt_ref: f64,
    feasibility_ratio: f64,
}

fn oracle_case(rng: &mut ChaCha8Rng, species: usize, cells: usize) -> OracleResult {
    let inst = random_instance(rng, species, cells);
    let pg = PgParams {
        tol: 1e-12,
        iter_max: 200_000,
        step_init: StepInit::BarzilaiBorwein,
        ..PgParams::default()
    };
    let projector = build_projector(&inst.cs).unwrap();
    let start = inst.cs.warm_start().unwrap();
    let (u_pg, report) = pg_solve(&start, &inst.cs, &projector, &inst.params, &pg).unwrap();
    let (u_ref, _) = reference_minimizer(&inst.cs, &inst.params, 1e-13).unwrap();
    let drho = u_pg
        .rho_all()
        .iter()
        .zip(u_ref.rho_all())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    OracleResult {
        drho,
        kkt_pg: kkt_residual(&inst.cs, &inst.params, &u_pg).unwrap().max(),
        kkt_ref: kkt_residual(&inst.cs, &inst.params, &u_ref).unwrap().max(),
        feasibility_ratio: report.max_residual / inst.cs.feasibility_tolerance(),
    }
}

fn oracle_equivalence(results: &[OracleResult]) -> Outcome {
    let drho = results.iter().map(|r| r.drho).fold(0.0, f64::max);
    let kkt_pg = results.iter().map(|r| r.kkt_pg).fold(0.0, f64::max);
    let kkt_ref = results.iter().map(|r| r.kkt_ref).fold(0.0, f64::max);
    outcome(
        "oracle equivalence",
        results.len() >= 20 && drho <= 1e-6 && kkt_pg <= 1e-8 && kkt_ref <= 1e-8,
        format!(
            "{} instances, max |drho| = {drho:.2e}, KKT pg = {kkt_pg:.2e}, KKT reference = {kkt_ref:.2e}",
            results.len()
        ),
    )
}

fn interpolation_identities(rng: &mut ChaCha8Rng) -> Outcome {
    let draws = 1000;
    let (mut square, mut transport) = (0.0f64, 0.0f64);
    let mut entropy_max = f64::NEG_INFINITY;
    for _ in 0..draws {
        let x0: f64 = rng.gen_range(1e-3..10.0);
        let x1: f64 = rng.gen_range(1e-3..10.0);
        let y0: f64 = rng.gen_range(-10.0..10.0);
        let y1: f64 = rng.gen_range(-10.0..10.0);
        let th: f64 = rng.gen_range(0.001..0.999);
        let r = interp_identity_residuals(x0, x1, y0, y1, th).unwrap();
        let w = th * (1.0 - th);
        let x = th * x0 + (1.0 - th) * x1;
        let y = th * y0 + (1.0 - th) * y1;
        let sq_scale = x * x + th * x0 * x0 + (1.0 - th) * x1 * x1 + w * (x1 - x0).powi(2);
        let tr_scale =
            y * y / x + th * y0 * y0 / x0 + (1.0 - th) * y1 * y1 / x1 + w * (x1 * y0 - x0 * y1).powi(2) / (x0 * x1 * x);
        square = square.max(r.square.abs() / sq_scale);
        transport = transport.max(r.transport.abs() / tr_scale.max(f64::MIN_POSITIVE));
        entropy_max = entropy_max.max(r.entropy);
    }
    outcome(
        "interpolation identities",
        square <= 1e-13 && transport <= 1e-13 && entropy_max <= 0.0,
        format!(
            "{draws} draws, relative residuals {square:.1e} / {transport:.1e}, max entropy defect {entropy_max:.2e}"
        ),
    )
}

fn midpoint_convexity(rng: &mut ChaCha8Rng) -> Outcome {
    let pairs = 200;
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..pairs {
        let (species, cells) = (rng.gen_range(1..=3), rng.gen_range(2..=16));
        let inst = random_instance(rng, species, cells);
        let u0 = random_feasible_state(rng, &inst);
        let u1 = random_feasible_state(rng, &inst);
        let mid: Vec<f64> = u0
            .as_slice()
            .iter()
            .zip(u1.as_slice())
            .map(|(a, b)| 0.5 * (a + b))
            .collect();
        let mid = State::from_vec(u0.layout(), mid).unwrap();
        let f0 = eval_objective(&u0, &inst.params).total();
        let f1 = eval_objective(&u1, &inst.params).total();
        let fm = eval_objective(&mid, &inst.params).total();
        let mean = 0.5 * (f0 + f1);
        let scale = 1.0f64.max(f0.abs()).max(f1.abs());
        let differ = u0.rho_all() != u1.rho_all();
        let ok = fm <= mean + 1e-12 * scale && (!differ || fm < mean);
        violations += usize::from(!ok);
        min_gap = min_gap.min((mean - fm) / scale);
    }
    outcome(
        "midpoint convexity",
        violations == 0,
        format!("{pairs} pairs, {violations} violations, smallest relative gap {min_gap:.2e}"),
    )
}

fn feasibility(
    runs: &[(&str, &RunOutput)],
    studies: &[(&str, &ConvergenceReport)],
    oracle: &[OracleResult],
) -> Outcome {
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for (name, out) in runs {
        let ratio = out
            .diagnostics
            .records
            .iter()
            .map(|r| r.max_residual / r.feasibility_tol)
            .fold(0.0, f64::max);
        worst = worst.max(ratio);
        parts.push(format!("{name} {ratio:.2e}"));
    }
    for (name, report) in studies {
        let ratio = report.runs.iter().map(|r| r.feasibility_ratio).fold(0.0, f64::max);
        worst = worst.max(ratio);
        parts.push(format!("{name} {ratio:.2e}"));
    }
    let ratio = oracle.iter().map(|r| r.feasibility_ratio).fold(0.0, f64::max);
    worst = worst.max(ratio);
    parts.push(format!("oracle {ratio:.2e}"));
    outcome(
        "feasibility invariance",
        worst <= 1.0,
        format!("max ||Au-b|| / (1e-8 (1+||b||)): {}", parts.join(", ")),
    )
}

fn main() -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2024);
    let mut results = Vec::new();
    let mut report = |o: Outcome| {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        results.push(o.pass);
    };

    let linear = study(Coupling::Linear);
    let (pass, detail) = check_orders(
        &linear,
        &[("rho_1", 0.8, 1.35), ("rho_2", 0.8, 1.35), ("phi", 0.6, 1.2)],
    );
    report(outcome("temporal convergence (tau = h)", pass, detail));
    let quadratic = study(Coupling::Quadratic);
    let (pass, detail) = check_orders(
        &quadratic,
        &[("rho_1", 1.8, 2.35), ("rho_2", 1.8, 2.35), ("phi", 1.8, 2.35)],
    );
    report(outcome("spatial convergence (tau = h^2)", pass, detail));

    let ex52 = run_preset("example52");
    let ex53_setup = preset("example53");
    let ex53 = run(&ex53_setup.model, &ex53_setup.grid, &ex53_setup.run).expect("example53");
    report(energy_dissipation(&ex52));
    report(mass_conservation(&[("example52", &ex52), ("example53", &ex53)]));
    report(positivity(&ex53, ex53_setup.run.pg.enforce_clamp));
    report(steady_state(&ex52, &ex53));

    report(gradient_check(&mut rng));
    let oracle: Vec<OracleResult> = [(1, 4), (2, 6)]
        .into_iter()
        .flat_map(|shape| std::iter::repeat_n(shape, 12))
        .map(|(species, cells)| oracle_case(&mut rng, species, cells))
        .collect();
    report(oracle_equivalence(&oracle));
    report(interpolation_identities(&mut rng));
    report(midpoint_convexity(&mut rng));
    report(feasibility(
        &[("example52", &ex52), ("example53", &ex53)],
        &[("tau=h study", &linear), ("tau=h2 study", &quadratic)],
        &oracle,
    ));

    let failed = results.iter().filter(|p| !**p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
