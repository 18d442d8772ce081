//! A model described in TOML: one cation with a Robin left end, a Neumann
//! right end, a variable permittivity and a fixed background charge.
//!
//! cargo run --release --example robin_config

use pnp_jko::config::ConfigFile;
use pnp_jko::driver::run;

const CONFIG: &str = r#"
[domain]
a = 0.0
b = 1.0
N = 50

[time]
tau = 0.005
T = 0.5
snapshots = [0.0, 0.5]

[species.1]
z = 1.0
D = "1 + 0.5*x"
rho_in = "1 + 0.5*cos(pi*x)"

[poisson]
epsilon = "0.2 + 0.1*x"
f = -0.5

[bc.left]
kind = "robin"
beta = 0.1
phi_b = 0.5

[bc.right]
kind = "neumann"
phi_b = 0.0

[solver]
tol = 1e-8
step_init = "bb"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = ConfigFile::from_toml(CONFIG)?.build()?;
    let out = run(&setup.model, &setup.grid, &setup.run)?;
    let d = &out.diagnostics;
    let energies = d.energies();
    println!("energy {:.8} -> {:.8}", energies[0], energies[energies.len() - 1]);
    println!(
        "mass drift {:.2e}, min density {:.4}",
        d.mass_drift()[0],
        d.min_density()
    );
    let phi = out.final_state.phi();
    println!("potential at the ends: {:.5} .. {:.5}", phi[1], phi[phi.len() - 2]);
    Ok(())
}
