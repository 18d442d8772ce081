//! One minimization step solved twice: by projected gradient and by the
//! dense damped-Newton reference, with the KKT residual of each answer.
//!
//! cargo run --release --example oracle_check

use pnp_jko::assembly::build_constraint_system;
use pnp_jko::config::{parse_config, ConfigSource};
use pnp_jko::driver::{kkt_residual, prepare, reference_minimizer};
use pnp_jko::functional::ObjectiveParams;
use pnp_jko::optimizer::{build_projector, pg_solve, PgParams, StepInit};
use pnp_jko::Grid1D;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = parse_config(ConfigSource::Preset("example51"))?;
    let grid = Grid1D::new(-1.0, 1.0, 8)?;
    let (sm, delta) = prepare(&setup.model, &grid, &setup.run)?;
    let cs = build_constraint_system(&sm, &grid, &sm.rho0, delta)?;
    let params = ObjectiveParams::new(&sm, &grid, setup.run.tau)?;

    let pg = PgParams {
        tol: 1e-12,
        iter_max: 100_000,
        step_init: StepInit::BarzilaiBorwein,
        ..PgParams::default()
    };
    let projector = build_projector(&cs)?;
    let (u_pg, report) = pg_solve(&cs.warm_start()?, &cs, &projector, &params, &pg)?;
    let (u_ref, reference) = reference_minimizer(&cs, &params, 1e-13)?;

    let drho = u_pg
        .rho_all()
        .iter()
        .zip(u_ref.rho_all())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "PG: {} iterations ({}), objective {:.14}",
        report.iterations, report.status, report.objective_end
    );
    println!(
        "Newton: {} iterations, objective {:.14}",
        reference.iterations, reference.objective
    );
    println!("max |rho_pg - rho_ref| = {drho:.2e}");
    println!(
        "KKT residual: PG {:.2e}, Newton {:.2e}",
        kkt_residual(&cs, &params, &u_pg)?.max(),
        kkt_residual(&cs, &params, &u_ref)?.max()
    );
    Ok(())
}
