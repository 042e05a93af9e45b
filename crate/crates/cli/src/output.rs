//! Bit-stable result emission: CSV series and a JSON run manifest.
//!
//! Every CSV starts with a versioned comment line and an exact header row;
//! numeric cells are written with 17 significant digits, so parsing a file
//! back reproduces the computed values bit for bit.  Writers are
//! deterministic: the same series produces the same bytes.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;

use wigner1d::ensemble::{ConvergenceReport, MeanfieldSeries, ObservableSeries};
use wigner1d::grid::Grid;
use wigner1d::observables::{com_variance_floor, vacuum_number};

use crate::config::{to_key_values, JobConfig, OutputKind};

/// One value cell: 17 significant digits, enough to round-trip any f64.
fn cell(v: f64) -> String {
    format!("{v:.16e}")
}

fn open(dir: &Path, name: &str) -> std::io::Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn schema_line(name: &str) -> String {
    format!("# wigner1d {name} schema 1\n")
}

/// The exact first two lines of each series file, for golden checks.
pub fn header(kind: OutputKind) -> String {
    let columns = match kind {
        OutputKind::DensityMap => "t,z,n,n_err",
        OutputKind::CenterDensity => "t,n0,n0_err,n0_meanfield",
        OutputKind::Mu => "t,mu,mu_err",
        OutputKind::Eigenvalues => "t,rank,fraction",
        OutputKind::Invariants => "t,Nbar_drift,Pbar_drift,Hbar_drift",
        OutputKind::Com => "t,var_X,var_X_err",
    };
    format!("{}{columns}\n", schema_line(kind.name()))
}

fn write_density_map(
    dir: &Path,
    times: &[f64],
    z: &[f64],
    density: &[Vec<f64>],
    density_err: &[Vec<f64>],
) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "density_map.csv")?;
    w.write_all(header(OutputKind::DensityMap).as_bytes())?;
    for (i, &t) in times.iter().enumerate() {
        for (j, &zj) in z.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{}",
                cell(t),
                cell(zj),
                cell(density[i][j]),
                cell(density_err[i][j])
            )?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn write_center(
    dir: &Path,
    times: &[f64],
    n0: &[f64],
    n0_err: &[f64],
    n0_meanfield: &[f64],
) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "center_density.csv")?;
    w.write_all(header(OutputKind::CenterDensity).as_bytes())?;
    for (i, &t) in times.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            cell(t),
            cell(n0[i]),
            cell(n0_err[i]),
            cell(n0_meanfield[i])
        )?;
    }
    w.flush()?;
    Ok(path)
}

fn write_mu(dir: &Path, times: &[f64], mu: &[f64], mu_err: &[f64]) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "mu.csv")?;
    w.write_all(header(OutputKind::Mu).as_bytes())?;
    for (i, &t) in times.iter().enumerate() {
        writeln!(w, "{},{},{}", cell(t), cell(mu[i]), cell(mu_err[i]))?;
    }
    w.flush()?;
    Ok(path)
}

fn write_eigenvalues(
    dir: &Path,
    g1_times: &[f64],
    fractions: &[Vec<f64>],
) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "eigenvalues.csv")?;
    w.write_all(header(OutputKind::Eigenvalues).as_bytes())?;
    for (i, &t) in g1_times.iter().enumerate() {
        for (rank, &f) in fractions[i].iter().enumerate() {
            writeln!(w, "{},{},{}", cell(t), rank + 1, cell(f))?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn write_invariants(dir: &Path, times: &[f64], drift: &[[f64; 3]]) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "invariants.csv")?;
    w.write_all(header(OutputKind::Invariants).as_bytes())?;
    for (i, &t) in times.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            cell(t),
            cell(drift[i][0]),
            cell(drift[i][1]),
            cell(drift[i][2])
        )?;
    }
    w.flush()?;
    Ok(path)
}

fn write_com(
    dir: &Path,
    times: &[f64],
    var: &[f64],
    var_err: &[f64],
) -> std::io::Result<PathBuf> {
    let (path, mut w) = open(dir, "com.csv")?;
    w.write_all(header(OutputKind::Com).as_bytes())?;
    for (i, &t) in times.iter().enumerate() {
        writeln!(w, "{},{},{}", cell(t), cell(var[i]), cell(var_err[i]))?;
    }
    w.flush()?;
    Ok(path)
}

/// Write the selected series of an ensemble run.  Returns the paths written.
pub fn write_series(
    series: &ObservableSeries,
    dir: &Path,
    outputs: &[OutputKind],
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &kind in outputs {
        written.push(match kind {
            OutputKind::DensityMap => write_density_map(
                dir,
                &series.times,
                &series.z,
                &series.density,
                &series.density_err,
            )?,
            OutputKind::CenterDensity => write_center(
                dir,
                &series.times,
                &series.center,
                &series.center_err,
                &series.center_meanfield,
            )?,
            OutputKind::Mu => write_mu(dir, &series.times, &series.mu, &series.mu_err)?,
            OutputKind::Eigenvalues => {
                write_eigenvalues(dir, &series.g1_times, &series.fractions)?
            }
            OutputKind::Invariants => write_invariants(dir, &series.times, &series.drift_mean)?,
            OutputKind::Com => write_com(dir, &series.times, &series.com_var, &series.com_var_err)?,
        });
    }
    Ok(written)
}

/// Write the series a noise-free run defines: density map, center density
/// (the companion column repeats the run itself), pair correlation, and
/// invariant drifts.  Error columns are exactly zero — there is no sampling.
pub fn write_meanfield_series(
    series: &MeanfieldSeries,
    dir: &Path,
    outputs: &[OutputKind],
) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let zeros_row = vec![0.0; series.times.len()];
    let zeros_map: Vec<Vec<f64>> = series.density.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut written = Vec::new();
    for &kind in outputs {
        match kind {
            OutputKind::DensityMap => written.push(write_density_map(
                dir,
                &series.times,
                &series.z,
                &series.density,
                &zeros_map,
            )?),
            OutputKind::CenterDensity => written.push(write_center(
                dir,
                &series.times,
                &series.center,
                &zeros_row,
                &series.center,
            )?),
            OutputKind::Mu => written.push(write_mu(dir, &series.times, &series.mu, &zeros_row)?),
            OutputKind::Invariants => {
                written.push(write_invariants(dir, &series.times, &series.drift)?)
            }
            // Eigenmodes and center-of-mass variance are ensemble notions; a
            // single noise-free trajectory does not define them.
            OutputKind::Eigenvalues | OutputKind::Com => {}
        }
    }
    Ok(written)
}

/// Write the step-refinement comparison series.
pub fn write_convergence(report: &ConvergenceReport, dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (path, mut w) = open(dir, "convergence.csv")?;
    w.write_all(schema_line("convergence").as_bytes())?;
    w.write_all(b"t,n0_dt,n0_half,n0_quarter\n")?;
    for (i, &t) in report.times.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            cell(t),
            cell(report.center[0][i]),
            cell(report.center[1][i]),
            cell(report.center[2][i])
        )?;
    }
    w.flush()?;
    Ok(path)
}

/// Counters a manifest reports about how the run went.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunCounters {
    pub attempted: u64,
    pub completed: u64,
    pub aborted: u64,
    pub nl_phase_hits: u64,
    pub negative_mode_flags: usize,
}

/// Write `manifest.json`: everything needed to reproduce and interpret the
/// run — config echo, seed, grid constants, correction constants, counters,
/// and wall time.
#[allow(clippy::too_many_arguments)]
pub fn write_manifest(
    dir: &Path,
    command: &str,
    job: &JobConfig,
    workers: usize,
    counters: RunCounters,
    files: &[PathBuf],
    wall_seconds: f64,
) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let grid = Grid::new(job.plan.m, job.plan.length, job.plan.grid_mode)
        .expect("manifest for validated plan");
    let config: serde_json::Map<String, serde_json::Value> = to_key_values(job)
        .into_iter()
        .map(|(k, v)| (k, serde_json::Value::String(v)))
        .collect();
    let file_names: Vec<String> = files
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    let manifest = json!({
        "schema": "wigner1d-manifest 1",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "master_seed": job.plan.master_seed,
        "workers": workers,
        "trajectories": {
            "attempted": counters.attempted,
            "completed": counters.completed,
            "aborted": counters.aborted,
        },
        "warnings": {
            "nl_phase_hits": counters.nl_phase_hits,
            "negative_mode_flags": counters.negative_mode_flags,
        },
        "grid": {
            "dz": grid.dz(),
            "dk": grid.dk(),
            "live_modes": grid.live_modes(),
        },
        "corrections": {
            "half_quantum_density": 0.5 / grid.dz(),
            "com_variance_floor": com_variance_floor(&grid),
            "vacuum_number": vacuum_number(&grid),
        },
        "files": file_names,
        "wall_seconds": wall_seconds,
    });
    let path = dir.join("manifest.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(path)
}

/// Plan echo from a manifest: reparse the embedded config object.
#[cfg(test)]
pub fn plan_from_manifest(text: &str) -> Result<JobConfig, String> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| format!("manifest parse: {e}"))?;
    let Some(config) = value.get("config").and_then(|c| c.as_object()) else {
        return Err("manifest has no config object".into());
    };
    let mut lines = String::new();
    for (k, v) in config {
        let Some(s) = v.as_str() else {
            return Err(format!("config value for `{k}` is not a string"));
        };
        lines.push_str(&format!("{k} = {s}\n"));
    }
    crate::config::parse_config(&lines).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn empty_series() -> ObservableSeries {
        ObservableSeries {
            times: vec![],
            z: vec![],
            density: vec![],
            density_err: vec![],
            center: vec![],
            center_err: vec![],
            center_meanfield: vec![],
            mu: vec![],
            mu_err: vec![],
            number: vec![],
            number_err: vec![],
            com_var: vec![],
            com_var_err: vec![],
            drift_mean: vec![],
            drift_max: [0.0; 3],
            g1_times: vec![],
            fractions: vec![],
            fraction_errs: vec![],
            negative_mode_flags: 0,
            attempted: 0,
            completed: 0,
            aborted: 0,
            nl_phase_hits: 0,
        }
    }

    #[test]
    fn empty_series_writes_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_series(&empty_series(), dir.path(), &OutputKind::ALL).unwrap();
        assert_eq!(files.len(), 6);
        for (kind, path) in OutputKind::ALL.iter().zip(&files) {
            let text = fs::read_to_string(path).unwrap();
            assert_eq!(text, header(*kind), "{path:?}");
        }
    }

    #[test]
    fn cells_round_trip_bit_exactly() {
        let values = [
            1.0 / 3.0,
            std::f64::consts::PI,
            -2333.333333333333,
            1e-300,
            6.02e23,
            0.0,
        ];
        for &v in &values {
            let back: f64 = cell(v).parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
    }

    #[test]
    fn manifest_config_echo_reproduces_the_plan() {
        let job = parse_config(
            "N = 250\nC_as_multiple_of_invN = -8\nM = 64\nn_steps = 500\nsnapshot_stride = 100\nn_traj = 37\nn_batches = 7\nmaster_seed = 123\noutputs = mu,com\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = write_manifest(
            dir.path(),
            "run",
            &job,
            2,
            RunCounters::default(),
            &[],
            1.25,
        )
        .unwrap();
        let text = fs::read_to_string(path).unwrap();
        let round = plan_from_manifest(&text).unwrap();
        assert_eq!(job, round);
    }
}
