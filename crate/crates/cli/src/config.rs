//! Flat key = value configuration files.
//!
//! Format: one `key = value` pair per line; `#` starts a comment (full line
//! or trailing); blank lines ignored.  Unknown and duplicate keys are
//! rejected with their line number.  A config file must state `N`
//! explicitly; every other key falls back to the desk defaults listed in
//! `JobConfig::default` (a run without any config file uses those defaults
//! wholesale, including N = 1000).
//!
//! The interaction strength is given either directly (`C = -0.008`) or as a
//! multiple of 1/N (`C_as_multiple_of_invN = -8`); the two keys are mutually
//! exclusive.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use wigner1d::ensemble::RunPlan;
use wigner1d::grid::GridMode;

/// Which CSV series a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum OutputKind {
    DensityMap,
    CenterDensity,
    Mu,
    Eigenvalues,
    Invariants,
    Com,
}

impl OutputKind {
    pub const ALL: [OutputKind; 6] = [
        OutputKind::DensityMap,
        OutputKind::CenterDensity,
        OutputKind::Mu,
        OutputKind::Eigenvalues,
        OutputKind::Invariants,
        OutputKind::Com,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OutputKind::DensityMap => "density_map",
            OutputKind::CenterDensity => "center_density",
            OutputKind::Mu => "mu",
            OutputKind::Eigenvalues => "eigenvalues",
            OutputKind::Invariants => "invariants",
            OutputKind::Com => "com",
        }
    }

    fn parse(s: &str) -> Option<OutputKind> {
        OutputKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// A validated plan plus the output routing around it.
#[derive(Debug, Clone, PartialEq)]
pub struct JobConfig {
    pub plan: RunPlan,
    pub outputs: Vec<OutputKind>,
    pub output_dir: PathBuf,
}

impl Default for JobConfig {
    fn default() -> JobConfig {
        JobConfig {
            plan: RunPlan::default(),
            outputs: OutputKind::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: String) -> Result<T, ConfigError> {
    Err(ConfigError(msg))
}

/// Parse config text into a job description.  `N` is required; see module
/// docs for defaults and key reference.
pub fn parse_config(text: &str) -> Result<JobConfig, ConfigError> {
    let mut job = JobConfig::default();
    let mut seen = BTreeSet::new();
    let mut n: Option<f64> = None;
    let mut c_direct: Option<f64> = None;
    let mut c_multiple: Option<f64> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("line {line_no}: expected `key = value`, got `{line}`"));
        };
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return err(format!("line {line_no}: duplicate key `{key}`"));
        }

        let parse_f64 = |what: &str| -> Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("line {line_no}: {what} expects a number, got `{value}`")))
        };
        let parse_usize = |what: &str| -> Result<usize, ConfigError> {
            value
                .parse::<usize>()
                .map_err(|_| ConfigError(format!("line {line_no}: {what} expects a non-negative integer, got `{value}`")))
        };
        let parse_u64 = |what: &str| -> Result<u64, ConfigError> {
            value
                .parse::<u64>()
                .map_err(|_| ConfigError(format!("line {line_no}: {what} expects a non-negative integer, got `{value}`")))
        };
        let parse_bool = |what: &str| -> Result<bool, ConfigError> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => err(format!("line {line_no}: {what} expects true or false, got `{value}`")),
            }
        };

        match key {
            "N" => n = Some(parse_f64("N")?),
            "C" => c_direct = Some(parse_f64("C")?),
            "C_as_multiple_of_invN" => c_multiple = Some(parse_f64("C_as_multiple_of_invN")?),
            "M" => job.plan.m = parse_usize("M")?,
            "L" => job.plan.length = parse_f64("L")?,
            "t_final" => job.plan.t_final = parse_f64("t_final")?,
            "n_steps" => job.plan.n_steps = parse_usize("n_steps")?,
            "n_traj" => job.plan.n_traj = parse_u64("n_traj")?,
            "n_batches" => job.plan.n_batches = parse_u64("n_batches")?,
            "master_seed" => job.plan.master_seed = parse_u64("master_seed")?,
            "snapshot_stride" => job.plan.snapshot_stride = parse_usize("snapshot_stride")?,
            "g1_stride" => job.plan.g1_stride = parse_usize("g1_stride")?,
            "grid_mode" => {
                job.plan.grid_mode = GridMode::parse(value).ok_or_else(|| {
                    ConfigError(format!(
                        "line {line_no}: grid_mode expects balanced or periodic, got `{value}`"
                    ))
                })?;
            }
            "deterministic_reduction" => {
                job.plan.deterministic_reduction = parse_bool("deterministic_reduction")?;
            }
            "outputs" => {
                let mut outputs = Vec::new();
                for item in value.split(',') {
                    let item = item.trim();
                    let Some(kind) = OutputKind::parse(item) else {
                        return err(format!(
                            "line {line_no}: unknown output `{item}` (known: {})",
                            OutputKind::ALL.map(|k| k.name()).join(", ")
                        ));
                    };
                    if !outputs.contains(&kind) {
                        outputs.push(kind);
                    }
                }
                if outputs.is_empty() {
                    return err(format!("line {line_no}: outputs must name at least one series"));
                }
                job.outputs = outputs;
            }
            "output_dir" => job.output_dir = PathBuf::from(value),
            _ => return err(format!("line {line_no}: unknown key `{key}`")),
        }
    }

    let Some(n) = n else {
        return err("missing required key `N`".into());
    };
    job.plan.n_particles = n;
    match (c_direct, c_multiple) {
        (Some(_), Some(_)) => {
            return err("keys `C` and `C_as_multiple_of_invN` are mutually exclusive".into())
        }
        (Some(c), None) => job.plan.c = c,
        (None, Some(mult)) => job.plan.c = mult / n,
        (None, None) => job.plan.c = -8.0 / n,
    }

    job.plan
        .validate()
        .map_err(|e| ConfigError(format!("invalid plan: {e}")))?;
    Ok(job)
}

/// Serialize a job as config-file pairs.  Numbers use shortest
/// round-trip formatting, so parsing the result reproduces the plan exactly.
pub fn to_key_values(job: &JobConfig) -> Vec<(String, String)> {
    let p = &job.plan;
    let outputs = job
        .outputs
        .iter()
        .map(|k| k.name())
        .collect::<Vec<_>>()
        .join(",");
    vec![
        ("N".into(), format!("{:?}", p.n_particles)),
        ("C".into(), format!("{:?}", p.c)),
        ("M".into(), p.m.to_string()),
        ("L".into(), format!("{:?}", p.length)),
        ("t_final".into(), format!("{:?}", p.t_final)),
        ("n_steps".into(), p.n_steps.to_string()),
        ("n_traj".into(), p.n_traj.to_string()),
        ("n_batches".into(), p.n_batches.to_string()),
        ("master_seed".into(), p.master_seed.to_string()),
        ("snapshot_stride".into(), p.snapshot_stride.to_string()),
        ("g1_stride".into(), p.g1_stride.to_string()),
        ("grid_mode".into(), p.grid_mode.as_str().into()),
        (
            "deterministic_reduction".into(),
            p.deterministic_reduction.to_string(),
        ),
        ("outputs".into(), outputs),
        ("output_dir".into(), job.output_dir.display().to_string()),
    ]
}

/// Render the pairs back into config-file text.
#[cfg(test)]
pub fn to_config_text(job: &JobConfig) -> String {
    let mut out = String::new();
    for (k, v) in to_key_values(job) {
        out.push_str(&k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    }
    out
}
