//! Drives the `dlsim` binary end to end on tiny configs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dlsim::reporting::{parse_heatmap_csv, parse_results_table, parse_sweep_csv};
use dlsim_cli::{read_manifest, ConfigFile};

const TINY: &str = r#"
experiment = "tiny"
scenario = "concept_shift"
cluster_sizes = [4, 4]
train_size = 10
validation_size = 10
test_size = 20
model = "linear"
methods = ["random", "oracle", "local", "cos_weight"]
learning_rate = 0.01
rounds = 4
num_neighbors = 2
batch_size = 5
num_runs = 2
"#;

fn dlsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run_tiny(dir: &Path, extra: &[&str]) -> PathBuf {
    let cfg = write_config(dir, "tiny.cfg", TINY);
    let out = dir.join("runs");
    let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = dlsim(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn subdir(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_results_heatmaps_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_tiny(tmp.path(), &[]);
    let rows = parse_results_table(&dir.join("results.csv")).unwrap();
    // four methods x (2 clusters + mean); baselines run once, cos_weight per rule
    assert_eq!(rows.len(), 5 * 3);
    for stem in ["random_fedavg", "oracle_fedavg", "local_fedavg", "cos_weight_fedavg", "cos_weight_fedsim"] {
        assert!(dir.join(format!("{stem}.csv")).exists(), "{stem}");
        let heat = parse_heatmap_csv(&dir.join(format!("heatmap_{stem}.csv"))).unwrap();
        assert_eq!(heat.size(), 8);
    }
    let local = parse_heatmap_csv(&dir.join("heatmap_local_fedavg.csv")).unwrap();
    assert_eq!(local.total(), 0);
    let manifest = read_manifest(&dir).unwrap();
    assert_eq!(manifest.experiment, "tiny");
    assert!(manifest.outputs.contains(&"results.csv".to_string()));
}

#[test]
fn manifest_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_tiny(tmp.path(), &["--set", "rounds=3", "--seed", "5"]);
    let manifest = read_manifest(&dir).unwrap();
    assert_eq!(manifest.config.rounds, 3);
    let again = write_config(tmp.path(), "again.cfg", &manifest.config.to_toml());
    let out = tmp.path().join("again");
    let o = dlsim(&["run", "--config", again.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rerun = out.join("tiny");
    assert_eq!(
        std::fs::read(dir.join("results.csv")).unwrap(),
        std::fs::read(rerun.join("results.csv")).unwrap()
    );
}

#[test]
fn seed_offset_changes_results() {
    let tmp = tempfile::tempdir().unwrap();
    let a = std::fs::read(run_tiny(&subdir(tmp.path(), "a"), &[]).join("results.csv")).unwrap();
    let b = std::fs::read(run_tiny(&subdir(tmp.path(), "b"), &["--seed", "1"]).join("results.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn unknown_key_exits_2_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "bad.cfg", &format!("{TINY}taus = 3\n"));
    let o = dlsim(&["run", "--config", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("taus"), "{}", stderr(&o));
}

#[test]
fn bad_override_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let o = dlsim(&["run", "--config", cfg.to_str().unwrap(), "--set", "num_neighbors=0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = dlsim(&["run", "--config", cfg.to_str().unwrap(), "--set", "no_equals_sign"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_file_exits_2() {
    let o = dlsim(&["run", "--config", "/nonexistent/dlsim.cfg"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn sweep_writes_one_row_per_value_and_method() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let out = tmp.path().join("sweep");
    let o = dlsim(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "tau",
        "--values",
        "0, 5",
        "--out",
        out.to_str().unwrap(),
        "--set",
        r#"rules=["fedavg"]"#,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dir = out.join("tiny");
    let (_, rows) = parse_sweep_csv(&dir.join("sweep_tau.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 4);
    // tau does not touch the baselines, so their rows repeat exactly
    let random: Vec<f64> = rows.iter().filter(|r| r.method == "random").map(|r| r.mean).collect();
    assert_eq!(random[0], random[1]);
    assert!(dir.join("sweep_tau_cos_weight_fedavg.csv").exists());
}

#[test]
fn sweep_rejects_empty_values_and_unknown_axis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "tiny.cfg", TINY);
    let c = cfg.to_str().unwrap();
    let o = dlsim(&["sweep", "--config", c, "--axis", "tau", "--values", ","]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = dlsim(&["sweep", "--config", c, "--axis", "temperature", "--values", "1"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let o = dlsim(&["sweep", "--config", c, "--axis", "train_size", "--values", "2.5"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn report_joins_runs_of_the_same_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_tiny(&subdir(tmp.path(), "a"), &[]);
    let b = run_tiny(&subdir(tmp.path(), "b"), &["--set", "tau=0"]);
    let out = tmp.path().join("joined.csv");
    let o = dlsim(&["report", "--out", out.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let joined = parse_results_table(&out).unwrap();
    let single = parse_results_table(&a.join("results.csv")).unwrap();
    assert_eq!(joined.len(), 2 * single.len());
    assert_eq!(&joined[..single.len()], &single[..]);
}

#[test]
fn report_refuses_different_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_tiny(&subdir(tmp.path(), "a"), &[]);
    let b = run_tiny(&subdir(tmp.path(), "b"), &["--set", "noise_sigma=1.0"]);
    let out = tmp.path().join("joined.csv");
    let o = dlsim(&["report", "--out", out.to_str().unwrap(), a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn report_needs_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("joined.csv");
    let o = dlsim(&["report", "--out", out.to_str().unwrap(), tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn bundled_configs_parse_and_plan() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ConfigFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        for (method, rule) in cfg.plan().unwrap() {
            cfg.run_config(method, rule).unwrap();
        }
        assert_eq!(ConfigFile::parse(&cfg.to_toml()).unwrap(), cfg);
        seen += 1;
    }
    assert!(seen >= 3);
}
