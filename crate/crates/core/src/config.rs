//! TOML run configuration and the built-in presets.
//!
//! ```toml
//! [domain]
//! a = -1.0
//! b = 1.0
//! N = 40
//!
//! [time]
//! tau = 0.01
//! T = 2.0
//! snapshots = [0.0, 0.5, 2.0]
//!
//! [species.1]
//! z = 1.0
//! D = 1.0                 # number or expression string
//! rho_in = "2 - x^2"      # expression string or named profile
//!
//! [poisson]
//! epsilon = 1.0
//! f = 0.0
//!
//! [bc.left]
//! kind = "dirichlet"      # dirichlet | neumann | robin
//! phi_b = -1.0
//!
//! [bc.right]
//! kind = "robin"
//! beta = 0.5
//! phi_b = 1.0
//!
//! [solver]                # optional, every key optional
//! tol = 1e-6
//! iter_max = 5000
//! delta_override = 1e-3
//! enforce_clamp = false
//! step_init = "fixed"     # fixed | bb
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::RunConfig;
use crate::error::{PnpError, Result};
use crate::expr::Expr;
use crate::mesh::Grid1D;
use crate::model::{validate, BoundaryEnd, BoundaryKind, PnpModel, SpeciesSpec};
use crate::optimizer::{PgParams, StepInit};

/// A coefficient given either as a number or as an expression in `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Expression(String),
}

impl Coefficient {
    fn to_expr(&self, what: &str) -> Result<Expr> {
        match self {
            Coefficient::Constant(v) => Ok(Expr::constant(*v)),
            Coefficient::Expression(s) => {
                let source = named_profile(s).unwrap_or(s);
                Expr::parse(source).map_err(|e| PnpError::Config(format!("{what}: {e}")))
            }
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

impl From<&str> for Coefficient {
    fn from(s: &str) -> Self {
        Coefficient::Expression(s.to_string())
    }
}

/// Initial profiles that can be referred to by name in `rho_in`.
pub const NAMED_PROFILES: &[(&str, &str)] = &[
    ("parabola", "2 - x^2"),
    ("sine", "2 + sin(pi*x)"),
    ("plateau", "10/3 * indicator(-0.5, 0.5)"),
];

fn named_profile(name: &str) -> Option<&'static str> {
    NAMED_PROFILES.iter().find(|(n, _)| *n == name.trim()).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub a: f64,
    pub b: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub tau: f64,
    #[serde(rename = "T")]
    pub t_final: f64,
    #[serde(default)]
    pub snapshots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSection {
    pub z: f64,
    #[serde(rename = "D")]
    pub diffusion: Coefficient,
    pub rho_in: Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSection {
    pub epsilon: Coefficient,
    pub f: Coefficient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub phi_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BcSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<BoundarySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<BoundarySection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iter_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_override: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enforce_clamp: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_init: Option<String>,
}

/// The config document as written on disk. Sections are optional at the
/// serde level so that a missing one is reported by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<TimeSection>,
    #[serde(default)]
    pub species: BTreeMap<String, SpeciesSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bc: Option<BcSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
}

/// Everything a run needs, built from a [`ConfigFile`].
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub model: PnpModel,
    pub grid: Grid1D,
    pub run: RunConfig,
}

fn missing(section: &str) -> PnpError {
    PnpError::Config(format!("missing section [{section}]"))
}

fn boundary(section: &BoundarySection, name: &str) -> Result<BoundaryEnd> {
    let kind: BoundaryKind = section
        .kind
        .parse()
        .map_err(|e| PnpError::Config(format!("[{name}]: {e}")))?;
    Ok(match kind {
        BoundaryKind::Dirichlet => BoundaryEnd::dirichlet(section.phi_b),
        BoundaryKind::Neumann => BoundaryEnd::neumann(section.phi_b),
        BoundaryKind::Robin => {
            let beta = section
                .beta
                .ok_or_else(|| PnpError::Config(format!("[{name}]: robin boundary needs beta")))?;
            BoundaryEnd::robin(beta, section.phi_b)
        }
    })
}

fn boundary_section(end: &BoundaryEnd) -> BoundarySection {
    BoundarySection {
        kind: end.kind.name().to_string(),
        beta: (end.kind == BoundaryKind::Robin).then_some(end.beta),
        phi_b: end.phi_b,
    }
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PnpError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| PnpError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PnpError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            PnpError::Config(msg) => PnpError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn domain(&self) -> Result<&DomainSection> {
        self.domain.as_ref().ok_or_else(|| missing("domain"))
    }

    pub fn domain_mut(&mut self) -> Result<&mut DomainSection> {
        self.domain.as_mut().ok_or_else(|| missing("domain"))
    }

    pub fn time_mut(&mut self) -> Result<&mut TimeSection> {
        self.time.as_mut().ok_or_else(|| missing("time"))
    }

    pub fn solver_mut(&mut self) -> &mut SolverSection {
        self.solver.get_or_insert_with(SolverSection::default)
    }

    /// Species in index order; keys must be `1..=s`.
    fn species_list(&self) -> Result<Vec<&SpeciesSection>> {
        if self.species.is_empty() {
            return Err(missing("species.1"));
        }
        let mut indexed = Vec::with_capacity(self.species.len());
        for (key, sp) in &self.species {
            let i: usize = key
                .parse()
                .map_err(|_| PnpError::Config(format!("[species.{key}]: species keys must be 1, 2, ...")))?;
            indexed.push((i, sp));
        }
        indexed.sort_by_key(|(i, _)| *i);
        for (k, (i, _)) in indexed.iter().enumerate() {
            if *i != k + 1 {
                return Err(PnpError::Config(format!(
                    "species must be numbered 1..{} without gaps, found [species.{i}]",
                    indexed.len()
                )));
            }
        }
        Ok(indexed.into_iter().map(|(_, sp)| sp).collect())
    }

    /// Build and validate the model, grid and run configuration.
    pub fn build(&self) -> Result<Setup> {
        let domain = self.domain()?;
        let time = self.time.as_ref().ok_or_else(|| missing("time"))?;
        let poisson = self.poisson.as_ref().ok_or_else(|| missing("poisson"))?;
        let bc = self.bc.as_ref().ok_or_else(|| missing("bc.left"))?;
        let left = bc.left.as_ref().ok_or_else(|| missing("bc.left"))?;
        let right = bc.right.as_ref().ok_or_else(|| missing("bc.right"))?;

        let grid = Grid1D::new(domain.a, domain.b, domain.n)?;
        let mut species = Vec::new();
        for (k, sp) in self.species_list()?.into_iter().enumerate() {
            let name = format!("[species.{}]", k + 1);
            species.push(SpeciesSpec {
                z: sp.z,
                diffusion: sp.diffusion.to_expr(&format!("{name} D"))?,
                rho_in: sp.rho_in.to_expr(&format!("{name} rho_in"))?,
            });
        }
        let model = PnpModel {
            species,
            epsilon: poisson.epsilon.to_expr("[poisson] epsilon")?,
            fixed_charge: poisson.f.to_expr("[poisson] f")?,
            left: boundary(left, "bc.left")?,
            right: boundary(right, "bc.right")?,
        };
        validate(&model, &grid).into_result()?;

        let mut pg = PgParams::default();
        let mut delta_override = None;
        if let Some(s) = &self.solver {
            if let Some(v) = s.tol {
                pg.tol = v;
            }
            if let Some(v) = s.iter_max {
                pg.iter_max = v;
            }
            if let Some(v) = s.enforce_clamp {
                pg.enforce_clamp = v;
            }
            if let Some(v) = &s.step_init {
                pg.step_init = match v.as_str() {
                    "fixed" => StepInit::Fixed,
                    "bb" => StepInit::BarzilaiBorwein,
                    other => {
                        return Err(PnpError::Config(format!(
                            "[solver] step_init must be fixed or bb, got '{other}'"
                        )))
                    }
                };
            }
            delta_override = s.delta_override;
        }
        let run = RunConfig {
            tau: time.tau,
            t_final: time.t_final,
            snapshot_times: time.snapshots.clone(),
            pg,
            delta_override,
        };
        run.validate()?;
        Ok(Setup { model, grid, run })
    }
}

/// The built-in experiment setups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Accuracy test: two species on `[-1, 1]`, Dirichlet potential `-1`
    /// and `1` at the two ends.
    Example51,
    /// Long-time run of the same system on `h = 0.05`, `tau = 0.01`, `T = 2`.
    Example52,
    /// As [`Preset::Example52`] with a compactly supported first species.
    Example53,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Example51, Preset::Example52, Preset::Example53];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Example51 => "example51",
            Preset::Example52 => "example52",
            Preset::Example53 => "example53",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Preset::ALL.into_iter().find(|p| p.name() == name).ok_or_else(|| {
            PnpError::Config(format!(
                "unknown preset '{name}', expected one of example51, example52, example53"
            ))
        })
    }

    /// The preset as a config document.
    ///
    /// The Dirichlet data `-1`, `1` are imposed at the endpoints of the
    /// domain `[-1, 1]`, i.e. at `x = -1` and `x = 1`.
    pub fn config(self) -> ConfigFile {
        let (n, tau, t_final, snapshots, rho1) = match self {
            Preset::Example51 => (20, 0.1, 0.5, vec![0.0, 0.5], "2 - x^2"),
            Preset::Example52 => (40, 0.01, 2.0, vec![0.0, 0.05, 0.25, 1.5, 2.0], "2 - x^2"),
            Preset::Example53 => (
                40,
                0.01,
                2.0,
                vec![0.0, 0.015, 0.1, 1.0, 2.0],
                "10/3 * indicator(-0.5, 0.5)",
            ),
        };
        let mut species = BTreeMap::new();
        species.insert(
            "1".to_string(),
            SpeciesSection {
                z: 1.0,
                diffusion: 1.0.into(),
                rho_in: rho1.into(),
            },
        );
        species.insert(
            "2".to_string(),
            SpeciesSection {
                z: -1.0,
                diffusion: 1.0.into(),
                rho_in: "2 + sin(pi*x)".into(),
            },
        );
        ConfigFile {
            domain: Some(DomainSection { a: -1.0, b: 1.0, n }),
            time: Some(TimeSection {
                tau,
                t_final,
                snapshots,
            }),
            species,
            poisson: Some(PoissonSection {
                epsilon: 1.0.into(),
                f: 0.0.into(),
            }),
            bc: Some(BcSection {
                left: Some(boundary_section(&BoundaryEnd::dirichlet(-1.0))),
                right: Some(boundary_section(&BoundaryEnd::dirichlet(1.0))),
            }),
            solver: None,
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a configuration comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigSource<'a> {
    File(&'a Path),
    Preset(&'a str),
}

pub fn load_config(source: ConfigSource<'_>) -> Result<ConfigFile> {
    match source {
        ConfigSource::File(path) => ConfigFile::load(path),
        ConfigSource::Preset(name) => Ok(Preset::from_name(name)?.config()),
    }
}

/// Load, build and validate a configuration.
pub fn parse_config(source: ConfigSource<'_>) -> Result<Setup> {
    load_config(source)?.build()
}
