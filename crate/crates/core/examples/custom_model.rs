//! Building a model through the library API and stepping it by hand: a
//! neutral salt between insulating walls (Neumann at both ends, so the
//! potential is fixed by a mean-zero gauge).
//!
//! cargo run --release --example custom_model

use pnp_jko::driver::{prepare, RunConfig, Stepper};
use pnp_jko::{BoundaryEnd, Expr, Grid1D, PnpModel, SpeciesSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = PnpModel {
        species: vec![
            SpeciesSpec {
                z: 1.0,
                diffusion: Expr::constant(1.0),
                rho_in: Expr::parse("1 + 0.8*indicator(0, 0.3)")?,
            },
            SpeciesSpec {
                z: -1.0,
                diffusion: Expr::constant(0.5),
                rho_in: Expr::parse("1 + 0.8*indicator(0.7, 1)")?,
            },
        ],
        epsilon: Expr::constant(0.05),
        fixed_charge: Expr::constant(0.0),
        left: BoundaryEnd::neumann(0.0),
        right: BoundaryEnd::neumann(0.0),
    };
    let grid = Grid1D::new(0.0, 1.0, 60)?;
    let cfg = RunConfig::new(0.002, 0.2);
    let (sampled, delta) = prepare(&model, &grid, &cfg)?;
    let rho0 = sampled.rho0.clone();
    let mut stepper = Stepper::new(sampled, grid.clone(), cfg.tau, delta, cfg.pg)?;
    assert!(stepper.system().poisson().has_gauge());

    let mut u = stepper.initial_state(&rho0)?;
    println!("step {:>3}: energy {:.8}", 0, stepper.energy_of(&u)?.diagnostic_energy);
    for n in 1..=cfg.step_count() {
        let (next, report) = stepper.advance(&u.densities())?;
        u = next;
        if n % 20 == 0 {
            let e = stepper.energy_of(&u)?;
            println!(
                "step {n:>3}: energy {:.8}, kinetic {:.2e}, {} PG iterations",
                e.diagnostic_energy, e.kinetic, report.iterations
            );
        }
    }
    let mean_phi = grid.h() * u.phi()[1..=grid.n()].iter().sum::<f64>();
    println!("gauge h * sum(phi) = {mean_phi:.2e}");
    Ok(())
}
