use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use helix_core::elliptic::grid::ScalarField;

fn helixlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_helixlab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HELIXLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn equilibria_defaults_are_exact() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(&["equilibria", "--out", "eq"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_json(tmp.path().join("eq/equilibria.json"));
    let cases = rep["cases"].as_array().unwrap();
    assert_eq!(cases.len(), 5);
    for c in cases {
        assert!(c["residual"].as_f64().unwrap() <= 1e-12, "{c}");
    }
    assert!(tmp.path().join("eq/equilibria.csv").exists());
    let man = read_json(tmp.path().join("eq/manifest.json"));
    assert_eq!(man["status"], "ok");
    assert_eq!(man["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn simulate_writes_trajectory_and_conserves() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(
        &["simulate", "--out", "sim", "--override", "simulate.t_end=0.1", "--override", "simulate.save_stride=20"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let traj = fs::read_to_string(tmp.path().join("sim/trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,filament,node,x1,x2\n"));
    let diag = fs::read_to_string(tmp.path().join("sim/diagnostics.csv")).unwrap();
    // saves at t = 0, 0.02, ..., 0.1
    assert_eq!(diag.lines().count(), 1 + 6);
    let rep = read_json(tmp.path().join("sim/simulate.json"));
    for (k, v) in rep["drift"].as_object().unwrap() {
        assert!(v.as_f64().unwrap() <= 1e-8, "{k} drift {v}");
    }
}

#[test]
fn negative_circulation_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        "command = \"simulate\"\n\n[simulate.family.case]\nkind = \"polygon\"\nn = 3\nkappa = -1.0\nr = 1.0\n",
    );
    let o = helixlab(&["--config", &cfg, "--out", "bad"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("simulate.family.case.kappa"), "{err}");
    assert!(err.contains("bad.toml:6"), "{err}");
}

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "typo.toml", "[grid]\nn = 129\n\n[simulate]\nmodez = 64\n");
    let o = helixlab(&["simulate", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("modez") && err.contains("line 5"), "{err}");
}

#[test]
fn bad_override_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(&["green", "--override", "grid.n=100"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.n"), "{}", stderr(&o));
}

#[test]
fn under_resolved_core_reports_error_json() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(
        &["solve", "--out", "res", "--override", "grid.n=65", "--override", "scenario.epsilon=0.002"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let err = read_json(tmp.path().join("res/error.json"));
    assert_eq!(err["kind"], "Resolution");
    assert_eq!(read_json(tmp.path().join("res/manifest.json"))["status"], "validation_failure");
}

#[test]
fn missing_command_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(&[], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "run.toml",
        "command = \"simulate\"\n\n[simulate]\nt_end = 0.05\nsave_stride = 10\nperturbation = 0.01\n",
    );
    for out in ["a", "b"] {
        let o = helixlab(&["--config", &cfg, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for name in ["simulate.json", "trajectory.csv", "diagnostics.csv"] {
        let a = fs::read(tmp.path().join("a").join(name)).unwrap();
        let b = fs::read(tmp.path().join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs between runs");
    }
    let ha = read_json(tmp.path().join("a/manifest.json"))["config_hash"].clone();
    let hb = read_json(tmp.path().join("b/manifest.json"))["config_hash"].clone();
    assert_eq!(ha, hb);
}

#[test]
fn reported_family_feeds_back_as_config() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(&["equilibria", "--out", "eq"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_json(tmp.path().join("eq/equilibria.json"));
    // the asymmetric pair has its second circulation solved for
    let fam = rep["cases"][2]["family"].clone();
    assert_eq!(fam["case"]["kind"], "asym2");

    let cfg = serde_json::json!({
        "command": "simulate",
        "simulate": { "family": fam, "t_end": 0.01, "save_stride": 5 },
    });
    let text = toml::to_string(&cfg).unwrap();
    let path = write_config(tmp.path(), "fam.toml", &text);
    let o = helixlab(&["--config", &path, "--out", "fam"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let man = read_json(tmp.path().join("fam/manifest.json"));
    assert_eq!(man["config"]["simulate"]["family"], fam);
}

#[test]
fn green_binary_dump_reads_back_exactly() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "green.toml",
        "command = \"green\"\n\n[output]\nformats = [\"json\", \"csv\", \"binary\"]\n\n[grid]\nn = 129\n",
    );
    let o = helixlab(&["--config", &cfg, "--out", "g"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let dir = tmp.path().join("g");
    let poles = read_json(dir.join("green.json"));
    assert!(!poles.as_array().unwrap().is_empty());
    let back = ScalarField::read_binary(&dir.join("regular_0.bin"), "S").unwrap();
    assert_eq!(back.grid.n, 129);
    let csv = fs::read_to_string(dir.join("regular_0.csv")).unwrap();
    let from_csv: Vec<f64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(from_csv.len(), back.values.len());
    for (a, b) in from_csv.iter().zip(&back.values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn landscape_finds_critical_points() {
    let tmp = TempDir::new().unwrap();
    let o = helixlab(&["landscape", "--out", "l", "--override", "landscape.starts=4"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_json(tmp.path().join("l/landscape.json"));
    assert_eq!(rep["from_predicted"]["classification"], "negative_definite");
    assert_eq!(rep["multistart"].as_array().unwrap().len(), 4);
    assert!(rep["max_distance_to_predicted"].as_f64().unwrap() < 1e-8);
}

#[test]
fn solve_and_energy_on_a_small_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "pair.toml",
        "[grid]\nn = 257\n\n[scenario]\nepsilon = 0.04\n\n[lift]\nsamples = [[0.1, 0.0, 0.0], [0.0, 0.1, 0.5]]\nt = 0.0\n",
    );
    let o = helixlab(&["solve", "--config", &cfg, "--out", "s"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_json(tmp.path().join("s/report.json"));
    assert!(rep.is_object());
    assert!(tmp.path().join("s/u.csv").exists());
    assert!(tmp.path().join("s/vorticity.csv").exists());

    let o = helixlab(&["energy", "--config", &cfg, "--out", "e"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep = read_json(tmp.path().join("e/energy.json"));
    assert!(rep["gap_over_eps2"].as_f64().unwrap().is_finite());
}
