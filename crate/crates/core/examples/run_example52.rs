//! Two-species run with Dirichlet potential data: energy decay and mass
//! conservation, with diagnostics and snapshots written as CSV.
//!
//! cargo run --release --example run_example52 -- [out_dir]

use std::path::PathBuf;

use pnp_jko::config::{parse_config, ConfigSource};
use pnp_jko::driver::run;
use pnp_jko::output::{write_diagnostics, write_snapshot};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "out/example52".into()).into();
    let setup = parse_config(ConfigSource::Preset("example52"))?;
    let result = run(&setup.model, &setup.grid, &setup.run)?;
    let d = &result.diagnostics;

    println!("{:>6} {:>16} {:>12} {:>8}", "t", "energy", "kinetic", "iters");
    for r in d.records.iter().step_by(20) {
        println!(
            "{:>6.2} {:>16.10} {:>12.3e} {:>8}",
            r.t, r.energy, r.kinetic, r.pg_iters
        );
    }
    println!("worst E' + K' - E: {:.3e}", d.worst_dissipation_defect());
    println!("mass drift per species: {:?}", d.mass_drift());

    std::fs::create_dir_all(&out)?;
    write_diagnostics(out.join("diagnostics.csv"), &d.records)?;
    for snap in &result.snapshots {
        write_snapshot(&out, &result.grid, snap)?;
    }
    println!("wrote {}", out.display());
    Ok(())
}
