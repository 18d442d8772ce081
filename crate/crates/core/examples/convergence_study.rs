//! Self-convergence study on the accuracy preset against a fine reference.
//! Takes about a minute in release mode.
//!
//! cargo run --release --example convergence_study -- [tau=h | tau=h2]

use pnp_jko::config::{parse_config, ConfigSource};
use pnp_jko::driver::{convergence_study, Coupling};
use pnp_jko::optimizer::{PgParams, StepInit};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let coupling: Coupling = std::env::args().nth(1).as_deref().unwrap_or("tau=h").parse()?;
    let setup = parse_config(ConfigSource::Preset("example51"))?;
    let pg = PgParams {
        step_init: StepInit::BarzilaiBorwein,
        ..PgParams::default()
    };
    let report = convergence_study(
        &setup.model,
        (-1.0, 1.0),
        &[20, 40, 80, 160],
        coupling,
        0.5,
        (640, 1e-4),
        &pg,
    )?;

    println!("{coupling}");
    println!("{:>8} {:>10} {:>6} {:>12} {:>7}", "h", "tau", "field", "error", "order");
    for r in &report.rows {
        println!(
            "{:>8.5} {:>10.3e} {:>6} {:>12.4e} {:>7.3}",
            r.h, r.tau, r.field, r.error, r.order
        );
    }
    for run in &report.runs {
        println!("N = {:<4} {:>5} steps in {:>5.1} s", run.n, run.steps, run.seconds);
    }
    Ok(())
}
