use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chemostab_cli::commands::{self, Options};
use chemostab_cli::RunConfig;

const BASE: &str = r#"name = "flat"

[grid]
extents = [1.0]
counts = [11]

[params]
chi = 0.0
tau = 1.0
lambda = 1.0
mu = 1.0

[coefficients.a0]
kind = "constant"
value = 1.0

[coefficients.a1]
kind = "constant"
value = 1.0

[coefficients.a2]
kind = "constant"
value = 0.0

[initial]
u = { profile = "constant", value = 0.5 }
v = { profile = "constant", value = 0.0 }

[time]
t_end = 20.0
sample_interval = 0.5
"#;

const CONSTANTS: &str = "\n[constants]\nm2 = 1.0\neta = 0.9\nc3_tilde = 1.0\n";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn chemostab(dir: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemostab"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn data_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect()
}

fn find(dir: &Path, suffix: &str) -> PathBuf {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with(suffix))
        .unwrap_or_else(|| panic!("no file ending in {suffix}"))
}

#[test]
fn simulate_flat_logistic_reaches_carrying_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let o = chemostab(dir.path(), &cfg, &["simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fin = data_rows(&find(&dir.path().join("out"), "-final.csv"));
    assert_eq!(fin.len(), 11);
    for r in fin {
        assert!((r[4] - 1.0).abs() < 1e-6, "u = {}", r[4]);
    }
}

#[test]
fn zero_duration_gives_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("t_end = 20.0", "t_end = 0.0"));
    let o = chemostab(dir.path(), &cfg, &["simulate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = data_rows(&find(&dir.path().join("out"), "-trajectory.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], 0.0);
}

#[test]
fn invalid_tau_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("tau = 1.0", "tau = 0.0"));
    let o = chemostab(dir.path(), &cfg, &["simulate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("error: validation"), "{err}");
    assert!(err.contains("key: params.tau"), "{err}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("chi = 0.0", "chi = 0.0\nkhi = 1.0"));
    let o = chemostab(dir.path(), &cfg, &["simulate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("khi"));
}

#[test]
fn stability_with_known_constants_prints_theta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}{CONSTANTS}"));
    let o = chemostab(dir.path(), &cfg, &["stability"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.starts_with("criterion_holds theta=-0.3 "), "{out}");
    assert!(out.contains("M2=1 (config)"));
    assert!(out.contains("theorem_applies=true"));
    let rows = data_rows(&find(&dir.path().join("out"), "-report.csv"));
    assert!(rows.iter().all(|r| (r[3] + 0.3).abs() < 1e-12));
}

#[test]
fn missing_cq1_leaves_h1_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}{CONSTANTS}").replace("chi = 0.0", "chi = 0.1");
    let cfg = write_config(dir.path(), &text);
    let out = stdout(&chemostab(dir.path(), &cfg, &["stability"]));
    assert!(out.contains("H1: inconclusive"), "{out}");

    let text = text.replace("c3_tilde = 1.0", "c3_tilde = 1.0\ncq1 = [[2.0, 1.0]]");
    let cfg = write_config(dir.path(), &text);
    let out = stdout(&chemostab(dir.path(), &cfg, &["stability"]));
    assert!(out.contains("H1: holds"), "{out}");
}

#[test]
fn convex_domain_supplies_m2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("chi = 0.0", "chi = 0.05"));
    let out = stdout(&chemostab(dir.path(), &cfg, &["stability"]));
    assert!(out.contains("H2: holds"), "{out}");
    assert!(out.contains("(convex-formula)"), "{out}");
    assert!(out.starts_with("inconclusive"), "{out}");
}

#[test]
fn experiment_needs_two_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let o = chemostab(dir.path(), &cfg, &["stability-experiment"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("key: seeds"));
}

fn sweep_config() -> RunConfig {
    let text = format!(
        "{BASE}{CONSTANTS}\n[sweep]\naxes = [{{ path = \"params.chi\", values = [0.0, 0.5, 1.0, 1.5] }}, {{ path = \"params.mu\", linspace = [0.5, 1.5, 3] }}]\n"
    );
    RunConfig::parse(&text).unwrap()
}

#[test]
fn sweep_rows_do_not_depend_on_threads() {
    let cfg = sweep_config();
    let run = |threads| {
        let dir = tempfile::tempdir().unwrap();
        let opts = Options {
            out: Some(dir.path().to_path_buf()),
            threads: Some(threads),
            seed: None,
        };
        let sw = commands::sweep(&cfg, Path::new("."), &opts).unwrap();
        assert_eq!(sw.rows.len(), 12);
        fs::read_to_string(&sw.file).unwrap()
    };
    assert_eq!(run(1), run(2));
}

#[test]
fn single_point_sweep_matches_stability() {
    let text = format!("{BASE}{CONSTANTS}\n[sweep]\naxes = [{{ path = \"params.chi\", values = [0.0] }}]\n");
    let cfg = RunConfig::parse(&text).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let opts = Options {
        out: Some(dir.path().to_path_buf()),
        ..Options::default()
    };
    let sw = commands::sweep(&cfg, Path::new("."), &opts).unwrap();
    let st = commands::stability(&cfg, Path::new("."), &opts).unwrap();
    let row = &sw.rows[0];
    assert_eq!(row.theta, st.report.theta);
    assert_eq!(row.conclusion, st.report.conclusion.to_string());
    assert_eq!(row.h3_ok, st.report.h3.holds());
}

#[test]
fn reruns_are_byte_identical_and_tagged() {
    let text = BASE.replace(
        "u = { profile = \"constant\", value = 0.5 }",
        "u = { profile = \"random-positive\", low = 0.2, high = 2.0 }",
    );
    let hash = RunConfig::parse(&text).unwrap().content_hash();
    let read = || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), &text);
        assert!(chemostab(dir.path(), &cfg, &["simulate"]).status.success());
        fs::read_to_string(find(&dir.path().join("out"), "-final.csv")).unwrap()
    };
    let (a, b) = (read(), read());
    assert_eq!(a, b);
    assert!(a.starts_with(&format!("# config_hash: {hash}")));
}

#[test]
fn converge_runs_without_config() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_chemostab"))
        .arg("--out")
        .arg(dir.path())
        .arg("converge")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_dir(dir.path()).unwrap().count() >= 1);
}
