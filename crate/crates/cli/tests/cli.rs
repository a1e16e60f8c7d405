use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use opdyn_cli::output::{read_snapshots, RunManifest};

fn opdyn(args: &[&str], config: &str, dir: &Path, env: &[(&str, &str)]) -> Output {
    let cfg = dir.join("run.cfg");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_opdyn"));
    cmd.args(args).arg("--config").arg(&cfg).arg("--output").arg(dir.join("out"));
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join("out").join(name)).unwrap()
}

#[test]
fn run_abm_writes_a_complete_verified_artifact_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(&["run-abm", "--seed", "5", "--threads", "2"], "n_agents = 20\nt_end = 0.1", tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = RunManifest::parse(&read(tmp.path(), "manifest.ndjson")).unwrap();
    let names: Vec<&str> = manifest.files.iter().map(|f| f.file.as_str()).collect();
    assert_eq!(names, ["snapshots.ndjson", "trajectory.csv", "clusters.csv", "histograms.csv", "final.svg"]);
    assert_eq!(manifest.seed, 5);
    assert_eq!(manifest.mode, "run-abm");
    assert!(manifest.verify(&tmp.path().join("out")).unwrap().is_empty());
    assert_eq!(read_snapshots(&read(tmp.path(), "snapshots.ndjson")).unwrap().len(), 11);
}

#[test]
fn zero_horizon_gives_the_initial_state_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(&["run-abm"], "n_agents = 5\nt_end = 0", tmp.path(), &[]);
    assert!(out.status.success());
    let snaps = read_snapshots(&read(tmp.path(), "snapshots.ndjson")).unwrap();
    assert_eq!(snaps.len(), 1);
    assert_eq!(snaps[0].t, 0.0);
    let csv = read(tmp.path(), "trajectory.csv");
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = "n_agents = 30\nt_end = 0.2\nsigma = 0.1";
    assert!(opdyn(&["run-abm", "--threads", "1"], cfg, a.path(), &[]).status.success());
    assert!(opdyn(&["run-abm", "--threads", "3"], cfg, b.path(), &[]).status.success());
    for f in ["snapshots.ndjson", "trajectory.csv", "clusters.csv", "histograms.csv", "final.svg"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn environment_overrides_the_file_and_flags_override_both() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(
        &["run-abm", "--format", "ndjson", "--seed", "9"],
        "n_agents = 4\nt_end = 0\nseed = 1",
        tmp.path(),
        &[("OPDYN_N_AGENTS", "7"), ("OPDYN_SEED", "2")],
    );
    assert!(out.status.success());
    let snaps = read_snapshots(&read(tmp.path(), "snapshots.ndjson")).unwrap();
    assert_eq!(snaps[0].opinions.len(), 7);
    assert!(!tmp.path().join("out/trajectory.csv").exists());
    assert!(!tmp.path().join("out/final.svg").exists());
    assert_eq!(RunManifest::parse(&read(tmp.path(), "manifest.ndjson")).unwrap().seed, 9);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str], cfg: &str| opdyn(args, cfg, tmp.path(), &[]).status.code();
    assert_eq!(code(&["run-abm"], "bogus_key = 1"), Some(2));
    assert_eq!(code(&["run-abm"], "dt = -1"), Some(2));
    assert_eq!(code(&["noise-sweep"], "sigmas ="), Some(2));
    assert_eq!(code(&["chaos-study"], "dim = 2"), Some(2));
    assert_eq!(code(&["run-pde"], "noise = multiplicative-min"), Some(2));
    assert_eq!(code(&["render"], ""), Some(2));
    // opinions near the top of the f64 range overflow on the first drift evaluation
    assert_eq!(code(&["run-abm"], "box_half = 0.01\nopinion_min = 1e307\nopinion_max = 1.7e308\nt_end = 0.1"), Some(3));
    let refusal = opdyn(&["run-pde"], "pde_dt = 0.01\nt_end = 0.1", tmp.path(), &[]);
    assert_eq!(refusal.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&refusal.stderr).contains("stability bound"));
}

#[test]
fn run_pde_writes_three_heatmaps_and_conserves_mass() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(&["run-pde"], "t_end = 0.02\nsigma = 0.01\ninteraction_scaling = 0.5\npde_snapshot_stride = 100", tmp.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["heatmap_t0.svg", "heatmap_mid.svg", "heatmap_final.svg", "heatmaps.svg", "density.csv"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
    let log = read(tmp.path(), "conservation.csv");
    let masses: Vec<f64> = log.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(masses.len(), 3);
    assert!(masses.iter().all(|m| (m - masses[0]).abs() < 1e-6));
    let report: serde_json::Value = serde_json::from_str(read(tmp.path(), "pde_report.ndjson").trim()).unwrap();
    assert!(report["stability_bound"].as_f64().unwrap() >= 1e-4);
}

#[test]
fn frozen_density_keeps_its_heatmap() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(&["run-pde", "--format", "svg"], "t_end = 0.01\nsigma = 0\ninteraction_scaling = 0", tmp.path(), &[]);
    assert!(out.status.success());
    // only the title differs between the first and last heatmap
    let strip = |s: String| s.lines().filter(|l| !l.contains("t = ")).collect::<Vec<_>>().join("\n");
    assert_eq!(strip(read(tmp.path(), "heatmap_t0.svg")), strip(read(tmp.path(), "heatmap_final.svg")));
}

#[test]
fn render_reads_snapshot_ndjson() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(opdyn(&["run-abm"], "n_agents = 12\nt_end = 0.05", tmp.path(), &[]).status.success());
    let snaps = tmp.path().join("out/snapshots.ndjson");
    let render_dir = tempfile::tempdir().unwrap();
    let out = opdyn(&["render"], &format!("input = {}", snaps.display()), render_dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = read(render_dir.path(), "render.svg");
    assert_eq!(svg.matches("<circle").count(), 12);
    assert_eq!(svg.matches("<polyline").count(), 12);
}

#[test]
fn single_sigma_sweep_is_one_summary_row() {
    let tmp = tempfile::tempdir().unwrap();
    let out = opdyn(&["noise-sweep"], "n_agents = 20\nt_end = 0.1\nsigmas = 0.02\nensemble = 3", tmp.path(), &[]);
    assert!(out.status.success());
    assert_eq!(read(tmp.path(), "sweep_summary.csv").lines().count(), 2);
    assert_eq!(read(tmp.path(), "sweep_members.csv").lines().count(), 4);
    assert!(tmp.path().join("out/sweep_sigma_0.02.svg").exists());
}

#[test]
fn keys_lists_every_config_key() {
    let out = Command::new(env!("CARGO_BIN_EXE_opdyn")).arg("keys").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for (k, _, _) in opdyn_cli::config::KEYS {
        assert!(text.contains(k), "{k}");
    }
}
