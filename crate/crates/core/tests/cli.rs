//! End-to-end tests of the `pnp` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pnp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pnp")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn example52_run_writes_diagnostics_and_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(&["run", "--preset", "example52", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let diag = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
    let lines: Vec<&str> = diag.lines().collect();
    assert_eq!(lines[0], "t,energy,kinetic,mass_1,mass_2,min_rho,pg_iters,pg_status");
    assert_eq!(lines.len(), 202);
    assert!(lines[1].ends_with(",0,initial"));
    let energies: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(energies.windows(2).all(|w| w[1] <= w[0] + 2e-6));
    let times: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));

    for t in ["0", "0.05", "0.25", "1.5", "2"] {
        for name in [
            format!("rho_1_t{t}.csv"),
            format!("rho_2_t{t}.csv"),
            format!("phi_t{t}.csv"),
        ] {
            let text = fs::read_to_string(dir.path().join(&name)).unwrap_or_else(|_| panic!("missing {name}"));
            let rows = text.lines().count() - 1;
            let expected = if name.starts_with("phi") { 42 } else { 40 };
            assert_eq!(rows, expected, "{name}");
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = pnp(&["run", "--preset", "example51", "--out", path_str(d.path())]);
        assert!(out.status.success());
    }
    for name in ["diagnostics.csv", "rho_1_t0.5.csv", "phi_t0.5.csv"] {
        assert_eq!(
            fs::read(a.path().join(name)).unwrap(),
            fs::read(b.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn config_file_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("robin.toml");
    fs::write(
        &cfg,
        r#"
[domain]
a = 0.0
b = 1.0
N = 16

[time]
tau = 0.01
T = 0.1
snapshots = [0.0, 0.1]

[species.1]
z = 1.0
D = 1.0
rho_in = "1 + 0.5*cos(pi*x)"

[poisson]
epsilon = 0.5
f = 0.0

[bc.left]
kind = "robin"
beta = 0.2
phi_b = 0.3

[bc.right]
kind = "neumann"
phi_b = 0.0
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = pnp(&[
        "run",
        "--config",
        path_str(&cfg),
        "--N",
        "8",
        "--T",
        "0.05",
        "--out",
        path_str(&out_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = fs::read_to_string(out_dir.join("diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 6);
    let rho = fs::read_to_string(out_dir.join("rho_1_t0.csv")).unwrap();
    assert_eq!(rho.lines().count(), 1 + 8);
}

#[test]
fn small_convergence_study_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(&[
        "converge",
        "--preset",
        "example51",
        "--coupling",
        "tau=h2",
        "--levels",
        "8,16",
        "--ref-n",
        "32",
        "--ref-tau",
        "0.0078125",
        "--t-eval",
        "0.25",
        "--bb",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "h,tau,field,error,order");
    // two levels times (rho_1, rho_2, phi)
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1].ends_with(",NaN"));
    let order: f64 = lines[4].rsplit(',').next().unwrap().parse().unwrap();
    assert!(order.is_finite());
}

#[test]
fn unknown_preset_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(&["run", "--preset", "example99", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("example99"));
}

#[test]
fn missing_section_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "[domain]\na = 0.0\nb = 1.0\nN = 4\n[time]\ntau = 0.1\nT = 0.2\nsnapshots = []\n\
         [species.1]\nz = 1.0\nD = 1.0\nrho_in = \"1\"\n[poisson]\nepsilon = 1.0\nf = 0.0\n\
         [bc.left]\nkind = \"dirichlet\"\nphi_b = 0.0\n",
    )
    .unwrap();
    let out = pnp(&["run", "--config", path_str(&cfg), "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bc.right"));
}

#[test]
fn unwritable_output_exits_with_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let target = blocker.join("out");
    let out = pnp(&["run", "--preset", "example51", "--out", path_str(&target)]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn single_level_study_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(&[
        "converge",
        "--preset",
        "example51",
        "--coupling",
        "tau=h",
        "--levels",
        "20",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("two refinement levels"));
}

#[test]
fn misaligned_reference_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = pnp(&[
        "converge",
        "--preset",
        "example51",
        "--coupling",
        "tau=h",
        "--levels",
        "20,40",
        "--ref-n",
        "100",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a multiple"));
}
