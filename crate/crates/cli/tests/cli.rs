use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const MODEL: &str = r#"
[model]
lambda = 1.0
gamma = 0.5
nu = 0.0
y0 = 1.0
"#;

const SPECIAL: &str = r#"
[kernel]
family = "special"
tau = 1.0
mu = 0.1
beta = 0.5
eta = 0.2
"#;

fn config(kernel: &str, grid: (f64, usize), solver: &str, extra: &str) -> String {
    format!(
        "{MODEL}{kernel}\n[grid]\ny_max = {}\nn_cells = {}\n\n[initial]\nshape = \"bump\"\na = 1.5\nb = 4.0\ncount = 1.0\nv0 = 1.0\n\n[solver]\n{solver}\n{extra}",
        grid.0, grid.1
    )
}

fn prionsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prionsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn zero_horizon_writes_the_initial_snapshot_only() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "run.toml",
        &config(
            SPECIAL,
            (64.0, 64),
            "dt = 0.01\nt_end = 0.0",
            "[oracle]\ndt = 1e-3\n",
        ),
    );
    let out = tmp.path().join("out");
    let o = prionsim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(
        files(&out),
        ["density_t0.csv", "run_manifest.toml", "timeseries.csv"]
    );
    let ts = fs::read_to_string(out.join("timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 2);
    let density = fs::read_to_string(out.join("density_t0.csv")).unwrap();
    assert_eq!(density.lines().next(), Some("y,u"));
    assert_eq!(density.lines().count(), 65);
}

#[test]
fn missing_config_exits_with_config_parse_and_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("absent.toml");
    let o = prionsim(&[
        "simulate",
        "--config",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ConfigParse"));
    assert!(!out.exists());
}

#[test]
fn malformed_config_exits_with_config_parse() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (64.0, 64),
        "dt = 0.01\nt_end = 0.1\nstep_size = 3",
        "",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn oracle_section_adds_oracle_and_comparison_files() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (200.0, 200),
        "dt = 1e-3\nt_end = 0.2\nrecord_every = 10\nsnapshot_times = [0.1]",
        "[oracle]\ndt = 1e-3\n",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let names = files(&out);
    for f in [
        "compare.txt",
        "density_t0.1.csv",
        "density_t0.2.csv",
        "oracle.csv",
        "timeseries.csv",
    ] {
        assert!(names.iter().any(|n| n == f), "{f} missing from {names:?}");
    }
    let oracle = fs::read_to_string(out.join("oracle.csv")).unwrap();
    assert_eq!(oracle.lines().next(), Some("t,v,U0,U1"));
    let compare = fs::read_to_string(out.join("compare.txt")).unwrap();
    let line = compare
        .lines()
        .find(|l| l.starts_with("max relative error v"))
        .unwrap();
    let err: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(err < 1e-6, "{compare}");
}

#[test]
fn manifest_reproduces_the_run_bit_for_bit() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (128.0, 128),
        "dt = 0.01\nt_end = 0.3\nsnapshot_times = [0.15]",
        "",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let first = tmp.path().join("first");
    let second = tmp.path().join("second");
    assert_eq!(
        prionsim(&[
            "simulate",
            "--config",
            &cfg,
            "--out",
            first.to_str().unwrap()
        ])
        .status
        .code(),
        Some(0)
    );
    let manifest = first.join("run_manifest.toml");
    let o = prionsim(&[
        "simulate",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    for f in files(&first).iter().filter(|f| f.ends_with(".csv")) {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn solver_failure_reports_the_error_name_and_its_code() {
    // joining without a cutoff on a short grid pushes pairs past the last cell
    let tmp = TempDir::new().unwrap();
    let kernel = "[kernel]\nfamily = \"special\"\ntau = 1.0\nbeta = 0.0\neta = 5.0\n";
    let text = config(kernel, (8.0, 32), "dt = 0.01\nt_end = 1.0", "");
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(14));
    assert!(String::from_utf8_lossy(&o.stderr).contains("PairOutOfRange"));
}

#[test]
fn validate_accepts_the_integrable_family() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "run.toml", &config(SPECIAL, (64.0, 64), "", ""));
    let o = prionsim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("overall: PASS"));
}

#[test]
fn validate_rejects_an_asymmetric_daughter_profile() {
    let tmp = TempDir::new().unwrap();
    let kernel = "[kernel]\nfamily = \"k0\"\nk0_poly = [0.0, 2.0]\ntau = 1.0\nbeta = 0.5\n";
    let cfg = write(tmp.path(), "run.toml", &config(kernel, (64.0, 64), "", ""));
    let o = prionsim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("overall: FAIL"));
}

#[test]
fn validate_rejects_weak_splitting_under_superlinear_joining() {
    let tmp = TempDir::new().unwrap();
    let kernel = "[kernel]\nfamily = \"powerlaw\"\ntau = 1.0\nb = 1.0\nzeta = 0.4\nk = 1.0\nalpha = 0.5\nrho = 1.0\n";
    let cfg = write(tmp.path(), "run.toml", &config(kernel, (64.0, 64), "", ""));
    let o = prionsim(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL  beta_lower_bound"));
}

#[test]
fn single_truncation_level_gives_a_degenerate_table() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (64.0, 96),
        "dt = 0.02\nt_end = 0.2",
        "[truncation]\nlevels = [1]\nr1 = 8.0\n",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&[
        "truncation",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert_eq!(
        fs::read_to_string(out.join("convergence.csv")).unwrap(),
        "n_coarse,n_fine,dv,dU0,dU1\n"
    );
    assert!(out.join("level_1").join("timeseries.csv").exists());
}

#[test]
fn truncation_levels_run_in_parallel_and_tabulate_differences() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (64.0, 96),
        "dt = 0.02\nt_end = 0.2",
        "[truncation]\nlevels = [1]\nr1 = 8.0\n",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&[
        "truncation",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "1,2,4",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("1,2,") && rows[1].starts_with("2,4,"));
}

#[test]
fn truncation_rejects_bad_levels_and_low_cutoffs() {
    let tmp = TempDir::new().unwrap();
    let text = config(
        SPECIAL,
        (64.0, 96),
        "dt = 0.02\nt_end = 0.2",
        "[truncation]\nlevels = [1]\nr1 = 1.5\n",
    );
    let cfg = write(tmp.path(), "run.toml", &text);
    let out = tmp.path().join("out");
    let o = prionsim(&[
        "truncation",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(21));
    assert!(String::from_utf8_lossy(&o.stderr).contains("LevelInconsistent"));
    let o = prionsim(&[
        "truncation",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--levels",
        "2,1",
    ]);
    assert_eq!(o.status.code(), Some(26));
}
