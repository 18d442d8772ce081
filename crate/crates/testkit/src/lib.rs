//! Random problem instances for property and acceptance testing.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use pnp_jko::assembly::{build_constraint_system, recover_momentum, solve_poisson};
use pnp_jko::functional::ObjectiveParams;
use pnp_jko::model::sample;
use pnp_jko::{BoundaryEnd, BoundaryKind, ConstraintSystem, Expr, Grid1D, PnpModel, SampledModel, SpeciesSpec, State};

/// Random model with smooth positive data and mixed ends (never Neumann at
/// both ends).
pub fn random_model(rng: &mut ChaCha8Rng, species: usize) -> PnpModel {
    let end = |rng: &mut ChaCha8Rng| {
        let phi_b = rng.gen_range(-1.0..1.0);
        match rng.gen_range(0..3) {
            0 => BoundaryEnd::dirichlet(phi_b),
            1 => BoundaryEnd::robin(rng.gen_range(0.1..2.0), phi_b),
            _ => BoundaryEnd::neumann(phi_b),
        }
    };
    let left = end(rng);
    let mut right = end(rng);
    while left.kind == BoundaryKind::Neumann && right.kind == BoundaryKind::Neumann {
        right = end(rng);
    }
    let smooth = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let base = rng.gen_range(lo..hi);
        let amp = rng.gen_range(0.0..0.8 * base);
        let k = rng.gen_range(0.5..4.0);
        Expr::parse(&format!("{base} + {amp} * sin({k} * x)")).unwrap()
    };
    PnpModel {
        species: (0..species)
            .map(|_| SpeciesSpec {
                z: [1.0, -1.0, 2.0, -2.0][rng.gen_range(0..4)],
                diffusion: smooth(rng, 0.5, 2.0),
                rho_in: smooth(rng, 0.5, 2.0),
            })
            .collect(),
        epsilon: smooth(rng, 0.1, 2.0),
        fixed_charge: Expr::constant(rng.gen_range(-0.5..0.5)),
        left,
        right,
    }
}

pub struct Instance {
    pub grid: Grid1D,
    pub sm: SampledModel,
    pub cs: ConstraintSystem,
    pub params: ObjectiveParams,
}

pub fn random_instance(rng: &mut ChaCha8Rng, species: usize, cells: usize) -> Instance {
    let model = random_model(rng, species);
    let a = rng.gen_range(-1.0..0.0);
    let grid = Grid1D::new(a, a + rng.gen_range(0.5..2.0), cells).unwrap();
    let sm = sample(&model, &grid);
    let cs = build_constraint_system(&sm, &grid, &sm.rho0, 1e-6).unwrap();
    let params = ObjectiveParams::new(&sm, &grid, rng.gen_range(0.01..0.3)).unwrap();
    Instance { grid, sm, cs, params }
}

/// A feasible state: random positive densities rescaled to the anchor
/// masses, the momenta that transport the anchor to them, and the matching
/// potential.
pub fn random_feasible_state(rng: &mut ChaCha8Rng, inst: &Instance) -> State {
    let rho_prev = inst.cs.rho_prev();
    let rho: Vec<Vec<f64>> = rho_prev
        .iter()
        .map(|prev| {
            let r: Vec<f64> = prev.iter().map(|_| rng.gen_range(0.2..3.0)).collect();
            let scale = prev.iter().sum::<f64>() / r.iter().sum::<f64>();
            r.into_iter().map(|v| v * scale).collect()
        })
        .collect();
    let m = recover_momentum(&rho, rho_prev, &inst.grid).unwrap();
    let phi = solve_poisson(inst.cs.poisson(), &rho).unwrap();
    State::from_parts(inst.cs.layout(), &rho, &m, &phi).unwrap()
}
