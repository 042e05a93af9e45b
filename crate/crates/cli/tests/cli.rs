//! End-to-end checks of the `wigner1d` binary: exit codes, error categories,
//! golden file headers, bit-exact round trips, and worker-count independence.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wigner1d"))
}

fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// A fast, fully featured plan: small grid, few steps, a handful of
/// trajectories, all six outputs.
const TINY_CONFIG: &str = "\
# tiny smoke plan
N = 50
M = 32
L = 20
t_final = 0.05
n_steps = 50
snapshot_stride = 10
g1_stride = 2
n_traj = 16
n_batches = 4
master_seed = 7
";

fn write_tiny_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("tiny.cfg");
    fs::write(&path, TINY_CONFIG).unwrap();
    path
}

const SERIES_FILES: [&str; 6] = [
    "density_map.csv",
    "center_density.csv",
    "mu.csv",
    "eigenvalues.csv",
    "invariants.csv",
    "com.csv",
];

#[test]
fn no_arguments_is_a_usage_error_with_help_text() {
    let out = run_bin(&[]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("error[usage]:"), "{err}");
    assert!(err.contains("USAGE:"), "{err}");
    assert!(err.contains("CONFIG KEYS"), "{err}");
}

#[test]
fn unknown_command_and_flag_are_usage_errors() {
    let out = run_bin(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("error[usage]:"));

    let out = run_bin(&["run", "--frobnicate", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("unknown flag `--frobnicate`"));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let out = run_bin(&["run", "--config", "/nonexistent/missing.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("error[config]:"), "{err}");
    assert!(err.contains("missing.cfg"), "{err}");
}

#[test]
fn bad_config_contents_are_named_with_lines() {
    let dir = tempfile::tempdir().unwrap();

    let bad = dir.path().join("unknown_key.cfg");
    fs::write(&bad, "N = 10\nwavelength = 3\n").unwrap();
    let out = run_bin(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("error[config]:"), "{err}");
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("wavelength"), "{err}");

    let no_n = dir.path().join("no_n.cfg");
    fs::write(&no_n, "M = 64\n").unwrap();
    let out = run_bin(&["run", "--config", no_n.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("error[config]:"), "{err}");
    assert!(err.contains('N'), "{err}");
}

#[test]
fn tiny_run_writes_all_series_with_exact_headers_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    let golden_headers = [
        "# wigner1d density_map schema 1\nt,z,n,n_err\n",
        "# wigner1d center_density schema 1\nt,n0,n0_err,n0_meanfield\n",
        "# wigner1d mu schema 1\nt,mu,mu_err\n",
        "# wigner1d eigenvalues schema 1\nt,rank,fraction\n",
        "# wigner1d invariants schema 1\nt,Nbar_drift,Pbar_drift,Hbar_drift\n",
        "# wigner1d com schema 1\nt,var_X,var_X_err\n",
    ];
    for (name, want) in SERIES_FILES.iter().zip(golden_headers) {
        let text = fs::read_to_string(out_dir.join(name)).unwrap();
        assert!(text.starts_with(want), "{name} header:\n{}", &text[..120.min(text.len())]);
        // Every data row has as many columns as the header row.
        let n_cols = want.lines().nth(1).unwrap().split(',').count();
        for line in text.lines().skip(2) {
            assert_eq!(line.split(',').count(), n_cols, "{name}: {line}");
        }
    }

    // 6 snapshots (stride 10 over 50 steps), all values parse as finite f64.
    let center = fs::read_to_string(out_dir.join("center_density.csv")).unwrap();
    let rows: Vec<&str> = center.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    for row in &rows {
        for cell in row.split(',') {
            let v: f64 = cell.parse().unwrap();
            assert!(v.is_finite(), "{row}");
        }
    }

    // Eigenvalue file: 8 ranks per capture time, ranks 1..=8 in order.
    let eig = fs::read_to_string(out_dir.join("eigenvalues.csv")).unwrap();
    let eig_rows: Vec<&str> = eig.lines().skip(2).collect();
    assert!(!eig_rows.is_empty());
    assert_eq!(eig_rows.len() % 8, 0);
    for (i, row) in eig_rows.iter().enumerate() {
        let rank: usize = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(rank, i % 8 + 1, "{row}");
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["schema"], "wigner1d-manifest 1");
    assert_eq!(manifest["command"], "run");
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["trajectories"]["attempted"], 16);
    assert_eq!(manifest["trajectories"]["completed"], 16);
    assert_eq!(manifest["trajectories"]["aborted"], 0);
    assert_eq!(manifest["config"]["N"], "50.0");
    assert!(manifest["wall_seconds"].as_f64().unwrap() >= 0.0);
    let files: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    for name in SERIES_FILES {
        assert!(files.contains(&name), "{files:?}");
    }
}

#[test]
fn same_seed_runs_are_byte_identical_even_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let mut snapshots: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for (sub, workers) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out_dir = dir.path().join(sub);
        let out = run_bin(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
            "--workers",
            workers,
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
        snapshots.push(
            SERIES_FILES
                .iter()
                .map(|name| (name.to_string(), fs::read(out_dir.join(name)).unwrap()))
                .collect(),
        );
    }
    for other in &snapshots[1..] {
        for ((name, a), (_, b)) in snapshots[0].iter().zip(other) {
            assert_eq!(a, b, "{name} differs between identically seeded runs");
        }
    }
}

#[test]
fn seed_flag_overrides_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 99);
    assert_eq!(manifest["config"]["master_seed"], "99");
}

#[test]
fn meanfield_center_file_repeats_the_run_in_the_companion_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = run_bin(&[
        "meanfield",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    // Ensemble-only series are skipped; the rest are present.
    assert!(!out_dir.join("eigenvalues.csv").exists());
    assert!(!out_dir.join("com.csv").exists());
    for name in ["density_map.csv", "center_density.csv", "mu.csv", "invariants.csv"] {
        assert!(out_dir.join(name).exists(), "{name}");
    }

    let center = fs::read_to_string(out_dir.join("center_density.csv")).unwrap();
    for line in center.lines().skip(2) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[1], cols[3], "n0_meanfield must equal n0: {line}");
        assert_eq!(cols[2].parse::<f64>().unwrap(), 0.0, "no sampling error: {line}");
    }
}

#[test]
fn oracle_passes_and_prints_the_corrected_values() {
    let out = run_bin(&["oracle"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("corrected density = 2 "), "{text}");
    assert!(text.contains("corrected pair correlation = 4 "), "{text}");
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn converge_reports_an_order_and_writes_the_comparison_series() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("converge.cfg");
    // Few steps, few trajectories: this command reruns the plan three times.
    fs::write(
        &cfg,
        "N = 50\nM = 32\nL = 20\nt_final = 0.05\nn_steps = 40\nsnapshot_stride = 10\nn_traj = 4\nn_batches = 2\nmaster_seed = 3\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run_bin(&[
        "converge",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    assert!(stdout_of(&out).contains("observed convergence order"));

    let text = fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert!(text.starts_with("# wigner1d convergence schema 1\nt,n0_dt,n0_half,n0_quarter\n"));
    assert_eq!(text.lines().count(), 2 + 5); // header + 5 snapshots
    for line in text.lines().skip(2) {
        for cell in line.split(',') {
            assert!(cell.parse::<f64>().unwrap().is_finite(), "{line}");
        }
    }
}

#[test]
fn manifest_config_echo_can_rebuild_the_identical_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny_config(dir.path());
    let out_a = dir.path().join("a");
    let out = run_bin(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--output-dir",
        out_a.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));

    // Rebuild a config file from the manifest echo and rerun: bytes match.
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("manifest.json")).unwrap()).unwrap();
    let mut rebuilt = String::new();
    for (k, v) in manifest["config"].as_object().unwrap() {
        if k == "output_dir" {
            continue;
        }
        rebuilt.push_str(&format!("{k} = {}\n", v.as_str().unwrap()));
    }
    let cfg_b = dir.path().join("rebuilt.cfg");
    fs::write(&cfg_b, &rebuilt).unwrap();
    let out_b = dir.path().join("b");
    let out = run_bin(&[
        "run",
        "--config",
        cfg_b.to_str().unwrap(),
        "--output-dir",
        out_b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr_of(&out));
    for name in SERIES_FILES {
        assert_eq!(
            fs::read(out_a.join(name)).unwrap(),
            fs::read(out_b.join(name)).unwrap(),
            "{name} differs after config round trip"
        );
    }
}
