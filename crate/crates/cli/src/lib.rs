//! Config-driven runner: `run`, `sweep` and `report`.
//!
//! Output layout under `--out`:
//!
//! ```text
//! <experiment>/manifest.toml          fully resolved config
//! <experiment>/results.csv            every method, per cluster + mean
//! <experiment>/<method>_<rule>.csv    one method's rows
//! <experiment>/heatmap_<method>_<rule>.csv
//! <experiment>/sweep_<axis>.csv       (sweep only)
//! ```

pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use dlsim::reporting::{
    export_heatmap_csv, export_results_table, export_sweep_csv, parse_results_table, sweep,
    write_result_rows, ExperimentResult, ResultRow, SweepAxis, SweepRow,
};
use dlsim::simulator::run_experiment;

pub use config::{ConfigFile, Method};

pub const MANIFEST: &str = "manifest.toml";
pub const RESULTS: &str = "results.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input; `key` names the offending config key when known.
    #[error("{message}")]
    InvalidKey { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn invalid(key: &str, message: impl Into<String>) -> Self {
        CliError::InvalidKey {
            key: key.to_string(),
            message: message.into(),
        }
    }

    pub fn key(&self) -> Option<&str> {
        match self {
            CliError::InvalidKey { key, .. } => Some(key),
            _ => None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::InvalidKey { .. } | CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<dlsim::Error> for CliError {
    fn from(e: dlsim::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// What `run` records next to its results so a run can be repeated and
/// compared.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub experiment: String,
    pub scenario_fingerprint: String,
    pub outputs: Vec<String>,
    pub config: ConfigFile,
}

fn log(msg: &str) {
    eprintln!("[dlsim] {msg}");
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Resolves the config file plus overrides and seed offset.
pub fn resolve_config(
    config_path: &Path,
    overrides: &[String],
    seed_offset: u64,
) -> Result<ConfigFile, CliError> {
    let cfg = ConfigFile::load(config_path)?.with_overrides(overrides)?;
    Ok(cfg.with_seed_offset(seed_offset))
}

/// Runs every method of `cfg`, writing results, heatmaps and a manifest
/// into `out_dir/<experiment>`. Returns the experiment directory.
pub fn run_resolved(cfg: &ConfigFile, out_dir: &Path) -> Result<(PathBuf, Vec<ExperimentResult>), CliError> {
    let dir = out_dir.join(&cfg.experiment);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    let mut results = Vec::new();
    let mut outputs = Vec::new();
    for (method, rule) in cfg.plan()? {
        let rc = cfg.run_config(method, rule)?;
        let started = Instant::now();
        let result = run_experiment(&rc)?;
        log(&format!(
            "{}/{}_{}: mean {:.4} (std {:.4}) in {:.1}s",
            cfg.experiment,
            result.method,
            rule,
            result.overall.mean,
            result.overall.std,
            started.elapsed().as_secs_f64()
        ));
        let stem = format!("{}_{}", result.method, rule);
        export_results_table(std::slice::from_ref(&result), &dir.join(format!("{stem}.csv")))?;
        outputs.push(format!("{stem}.csv"));
        if let Some(first) = result.runs.first() {
            export_heatmap_csv(&first.comm, &dir.join(format!("heatmap_{stem}.csv")))?;
            outputs.push(format!("heatmap_{stem}.csv"));
        }
        results.push(result);
    }
    export_results_table(&results, &dir.join(RESULTS))?;
    outputs.push(RESULTS.to_string());
    let manifest = Manifest {
        experiment: cfg.experiment.clone(),
        scenario_fingerprint: cfg.scenario_fingerprint(),
        outputs,
        config: cfg.clone(),
    };
    write_text(
        &dir.join(MANIFEST),
        &toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    Ok((dir, results))
}

pub fn cmd_run(
    config_path: &Path,
    out_dir: &Path,
    overrides: &[String],
    seed_offset: u64,
) -> Result<PathBuf, CliError> {
    let cfg = resolve_config(config_path, overrides, seed_offset)?;
    Ok(run_resolved(&cfg, out_dir)?.0)
}

pub fn parse_values(text: &str) -> Result<Vec<f64>, CliError> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| CliError::invalid("values", format!("`{s}` is not a number")))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if values.is_empty() {
        return Err(CliError::invalid("values", "sweep needs at least one value"));
    }
    Ok(values)
}

pub fn cmd_sweep(
    config_path: &Path,
    axis: &str,
    values: &[f64],
    out_dir: &Path,
    overrides: &[String],
    seed_offset: u64,
) -> Result<PathBuf, CliError> {
    let axis: SweepAxis = axis
        .parse()
        .map_err(|e: dlsim::Error| CliError::invalid("axis", e.to_string()))?;
    if values.is_empty() {
        return Err(CliError::invalid("values", "sweep needs at least one value"));
    }
    let cfg = resolve_config(config_path, overrides, seed_offset)?;
    let configs = cfg
        .plan()?
        .into_iter()
        .map(|(m, r)| cfg.run_config(m, r))
        .collect::<Result<Vec<_>, _>>()?;
    for c in &configs {
        for &v in values {
            axis.apply(c, v)
                .map_err(|e| CliError::invalid("values", e.to_string()))?;
        }
    }
    let dir = out_dir.join(&cfg.experiment);
    let started = Instant::now();
    let rows = sweep(&configs, axis, values)?;
    log(&format!(
        "{} sweep over {}: {} rows in {:.1}s",
        cfg.experiment,
        axis.name(),
        rows.len(),
        started.elapsed().as_secs_f64()
    ));
    export_sweep_csv(&rows, axis, &dir.join(format!("sweep_{}.csv", axis.name())))?;
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in &rows {
        let k = (r.method.clone(), r.rule.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for (method, rule) in keys {
        let subset: Vec<SweepRow> = rows
            .iter()
            .filter(|r| r.method == method && r.rule == rule)
            .cloned()
            .collect();
        export_sweep_csv(
            &subset,
            axis,
            &dir.join(format!("sweep_{}_{method}_{rule}.csv", axis.name())),
        )?;
    }
    let manifest = Manifest {
        experiment: cfg.experiment.clone(),
        scenario_fingerprint: cfg.scenario_fingerprint(),
        outputs: vec![format!("sweep_{}.csv", axis.name())],
        config: cfg.clone(),
    };
    write_text(
        &dir.join(MANIFEST),
        &toml::to_string(&manifest).expect("manifest serializes"),
    )?;
    Ok(dir)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Invalid(format!("{}: missing manifest ({e})", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {}", path.display(), e.message())))
}

/// Joins the result tables of several run directories into one table.
pub fn cmd_report(run_dirs: &[PathBuf], out_path: &Path) -> Result<Vec<ResultRow>, CliError> {
    if run_dirs.is_empty() {
        return Err(CliError::Invalid("report needs at least one run directory".into()));
    }
    let mut fingerprint: Option<(String, PathBuf)> = None;
    let mut rows = Vec::new();
    for dir in run_dirs {
        let manifest = read_manifest(dir)?;
        match &fingerprint {
            None => fingerprint = Some((manifest.scenario_fingerprint.clone(), dir.clone())),
            Some((f, first)) if *f != manifest.scenario_fingerprint => {
                return Err(CliError::Invalid(format!(
                    "{} and {} were run on different scenarios; their results are not comparable",
                    first.display(),
                    dir.display()
                )));
            }
            Some(_) => {}
        }
        let table = dir.join(RESULTS);
        let mut table_rows = parse_results_table(&table)
            .map_err(|e| CliError::Invalid(format!("{}: {e}", table.display())))?;
        rows.append(&mut table_rows);
    }
    if let Some(parent) = out_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    let file = std::fs::File::create(out_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", out_path.display())))?;
    write_result_rows(&rows, file)?;
    Ok(rows)
}

/// Caps the worker pool; `None` reads `DLSIM_THREADS`, falling back to
/// rayon's default.
pub fn init_threads(threads: Option<usize>) -> Result<(), CliError> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("DLSIM_THREADS") {
            Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                CliError::Invalid(format!("DLSIM_THREADS=`{v}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Invalid("thread count must be >= 1".into()));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}
