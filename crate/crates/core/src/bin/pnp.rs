use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pnp_jko::config::{load_config, ConfigFile, ConfigSource, Preset};
use pnp_jko::driver::{convergence_study, run_with_observer, Coupling};
use pnp_jko::output::{write_convergence, write_snapshot, DiagnosticsWriter};
use pnp_jko::PnpError;

#[derive(Parser)]
#[command(
    name = "pnp",
    version,
    about = "Minimizing-movement solver for 1D Poisson-Nernst-Planck systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write diagnostics.csv plus snapshot files.
    Run {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid refinement study; writes convergence.csv.
    Converge {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        overrides: Overrides,
        /// tau=h or tau=h2
        #[arg(long)]
        coupling: Coupling,
        /// Refinement levels (cell counts).
        #[arg(long, value_delimiter = ',', default_value = "20,40,80,160")]
        levels: Vec<usize>,
        /// Cell count of the reference solution.
        #[arg(long, default_value_t = 640)]
        ref_n: usize,
        /// Time step of the reference solution.
        #[arg(long, default_value_t = 1e-4)]
        ref_tau: f64,
        /// Time at which errors are measured.
        #[arg(long, default_value_t = 0.5)]
        t_eval: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in setup: example51, example52 or example53.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "T")]
    t_final: Option<f64>,
    #[arg(long = "N")]
    n: Option<usize>,
    /// Barzilai-Borwein initial steps in the line search.
    #[arg(long)]
    bb: bool,
}

fn load(source: &Source) -> Result<ConfigFile, PnpError> {
    match (&source.config, &source.preset) {
        (Some(path), _) => load_config(ConfigSource::File(path)),
        (None, Some(name)) => load_config(ConfigSource::Preset(name)),
        (None, None) => Err(PnpError::Config("either --config or --preset is required".into())),
    }
}

fn apply(cfg: &mut ConfigFile, o: &Overrides) -> Result<(), PnpError> {
    if let Some(n) = o.n {
        cfg.domain_mut()?.n = n;
    }
    if let Some(tau) = o.tau {
        cfg.time_mut()?.tau = tau;
    }
    if let Some(t) = o.t_final {
        let time = cfg.time_mut()?;
        time.t_final = t;
        time.snapshots.retain(|&s| s <= t);
    }
    if let Some(tol) = o.tol {
        cfg.solver_mut().tol = Some(tol);
    }
    if o.bb {
        cfg.solver_mut().step_init = Some("bb".into());
    }
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<(), PnpError> {
    std::fs::create_dir_all(dir).map_err(|e| PnpError::Io {
        path: dir.display().to_string(),
        source: e,
    })
}

fn cmd_run(source: &Source, overrides: &Overrides, out: &Path) -> Result<(), PnpError> {
    let mut cfg = load(source)?;
    apply(&mut cfg, overrides)?;
    let setup = cfg.build()?;
    ensure_dir(out)?;
    let mut writer = DiagnosticsWriter::create(out.join("diagnostics.csv"), setup.model.species_count())?;
    let result = run_with_observer(&setup.model, &setup.grid, &setup.run, |rec, _| writer.write(rec));
    let snapshots = match &result {
        Ok(o) => &o.snapshots,
        Err(a) => &a.snapshots,
    };
    for snap in snapshots {
        write_snapshot(out, &setup.grid, snap)?;
    }
    let output = result.map_err(|a| a.error)?;
    let d = &output.diagnostics;
    log::info!(
        "{} steps, energy {:.10} -> {:.10}, min density {:.3e}",
        d.records.len() - 1,
        d.records[0].energy,
        d.records.last().map_or(f64::NAN, |r| r.energy),
        d.min_density()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_converge(
    source: &Source,
    overrides: &Overrides,
    coupling: Coupling,
    levels: &[usize],
    reference: (usize, f64),
    t_eval: f64,
    out: &Path,
) -> Result<(), PnpError> {
    if let Some(name) = &source.preset {
        Preset::from_name(name)?;
    }
    let mut cfg = load(source)?;
    apply(&mut cfg, overrides)?;
    let setup = cfg.build()?;
    ensure_dir(out)?;
    let domain = (setup.grid.a(), setup.grid.b());
    let report = convergence_study(&setup.model, domain, levels, coupling, t_eval, reference, &setup.run.pg)?;
    write_convergence(out.join("convergence.csv"), &report.rows)
}

fn exit_code(e: &PnpError) -> u8 {
    match e {
        PnpError::Config(_) | PnpError::Validation(_) => 2,
        PnpError::Io { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { source, overrides, out } => cmd_run(source, overrides, out),
        Command::Converge {
            source,
            overrides,
            coupling,
            levels,
            ref_n,
            ref_tau,
            t_eval,
            out,
        } => cmd_converge(source, overrides, *coupling, levels, (*ref_n, *ref_tau), *t_eval, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
