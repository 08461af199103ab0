//! The `blockmcmc` binary end to end on tiny configurations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blockmcmc_cli::config::ExperimentConfig;
use blockmcmc_cli::store::{RunManifest, StageTiming};
use tempfile::TempDir;

const TINY: &str = r#"
seed = 3
beta_pi = 0.5

[instance]
n = 12

[partition]
block_size = 4

[qaoa]
restarts = 2
evals_per_layer = 60
shots_per_angle = 300

[made]
epochs = 5

[mcmc]
steps = 3000
repeats = 2
max_lag = 200
"#;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockmcmc")).args(args).output().unwrap()
}

fn write_config(dir: &TempDir, extra: &str) -> PathBuf {
    let p = dir.path().join("config.toml");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p
}

fn run_ok(cmd: &str, config: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = bin(&args);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn timings(out: &Path) -> Vec<(String, bool)> {
    let t: Vec<StageTiming> = serde_json::from_str(&fs::read_to_string(out.join("timings.json")).unwrap()).unwrap();
    t.into_iter().map(|t| (t.name, t.cached)).collect()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn pipeline_writes_every_stage_and_reuses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "");
    let out = dir.path().join("run");
    run_ok("pipeline", &cfg, &out, &[]);
    let m = RunManifest::load(&out).unwrap().unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["instance", "partition", "qaoa", "made", "mcmc", "analyze"]);
    for s in &m.stages {
        for a in &s.artifacts {
            assert!(out.join(&a.path).is_file(), "missing {}", a.path);
        }
    }
    assert!(timings(&out).iter().all(|(_, c)| !c));
    let first = fs::read(out.join("manifest.json")).unwrap();

    run_ok("pipeline", &cfg, &out, &[]);
    assert!(timings(&out).iter().all(|(_, c)| *c), "second run recomputed a stage");
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), first);

    run_ok("pipeline", &cfg, &out, &["--force"]);
    assert!(timings(&out).iter().all(|(_, c)| !c));
    assert_eq!(fs::read(out.join("manifest.json")).unwrap(), first);
}

#[test]
fn changed_setting_invalidates_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_ok("mcmc", &write_config(&dir, ""), &out, &[]);
    let cfg = dir.path().join("fewer_steps.toml");
    fs::write(&cfg, TINY.replace("steps = 3000", "steps = 2000")).unwrap();
    run_ok("mcmc", &cfg, &out, &[]);
    let t = timings(&out);
    let cached: Vec<bool> = t.iter().map(|(_, c)| *c).collect();
    assert_eq!(cached, [true, true, true, true, false], "{t:?}");
}

#[test]
fn kawasaki_only_runs_skip_the_surrogate_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(
        &cfg,
        TINY.replace("[mcmc]", "[mcmc]\nkernels = [\"global-kawasaki\", \"local-kawasaki\"]"),
    )
    .unwrap();
    let out = dir.path().join("run");
    run_ok("analyze", &cfg, &out, &[]);
    let m = RunManifest::load(&out).unwrap().unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["instance", "mcmc", "analyze"]);
    assert!(!out.join("qaoa").exists());
    let ratios = csv_rows(&out.join("analysis/ratios.csv"));
    assert!(ratios.len() >= 2);
}

#[test]
fn sweep_table_has_one_row_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(&dir, "\n[sweep]\nn_values = [8, 12]\n");
    let out = dir.path().join("run");
    run_ok("sweep-n", &cfg, &out, &[]);
    let rows = csv_rows(&out.join("sweep_n.csv"));
    assert_eq!(rows.len(), 3);
    let header = &rows[0];
    assert_eq!(&header[..2], ["n", "block_size"]);
    // three kernels with four columns each, plus pairwise ratios
    assert!(header.len() > 2 + 3 * 4);
    assert!(rows[1..].iter().all(|r| r.len() == header.len()));
    assert_eq!(rows[1][0], "8");
    assert_eq!(rows[2][0], "12");
}

#[test]
fn bad_values_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, TINY.replace("block_size = 4", "block_size = 0")).unwrap();
    let out = dir.path().join("run");
    let o = bin(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("block_size"));

    let o = bin(&["generate", "--config", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(
        &cfg,
        TINY.replace("n = 12", "source = \"file\"\npath = \"nowhere.json\""),
    )
    .unwrap();
    let out = dir.path().join("run");
    let o = bin(&["generate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let cfg = ExperimentConfig::load(&p).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}
