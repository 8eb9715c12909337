use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use netcbf::manifest::{RunManifest, MANIFEST_FILE};
use netcbf::runner::{EXIT_FAILURE, EXIT_HYPOTHESIS, EXIT_OK};

const TOY_SHORT: &str = r#"
[scenario]
kind = "toy-scalar"

[sim]
dt = 1e-3
horizon = 1.0

[filter]
mode = "dynamic"
epsilon = 0.05
estimator = { kind = "dirty", tau_d = 0.01 }

[sweep]
eps_min = 0.005
eps_max = 0.5
count = 3
"#;

fn netcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netcbf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn listing(dir: &Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect()
}

fn assert_manifest_complete(dir: &Path) -> RunManifest {
    let manifest = RunManifest::read(dir).unwrap();
    let mut listed: BTreeSet<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    listed.insert(MANIFEST_FILE.to_string());
    assert_eq!(listing(dir), listed);
    assert!(manifest.mismatches(dir).is_empty());
    manifest
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TOY_SHORT);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = netcbf(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ]);
        assert_eq!(
            o.status.code(),
            Some(EXIT_OK),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for file in ["trajectory.csv", "violation.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let (ma, mb) = (assert_manifest_complete(&a), assert_manifest_complete(&b));
    assert_eq!(ma.files, mb.files);
    assert_eq!(ma.config_sha256, mb.config_sha256);
}

#[test]
fn grid_run_writes_frequencies_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("grid");
    let o = netcbf(&["run", "--preset", "ieee14", "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let manifest = assert_manifest_complete(&out);
    assert_eq!(manifest.command, "run");
    let freq = std::fs::read_to_string(out.join("frequencies.csv")).unwrap();
    assert!(freq.starts_with("t,"));
    // 10 s at dt = 1e-3, plus the header.
    assert_eq!(freq.lines().count(), 10_002);
    assert!(out.join("plot_frequencies.py").exists());
}

#[test]
fn malformed_config_exits_nonzero_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let cfg = write_config(
        tmp.path(),
        "[scenario]\nkind = \"toy-scalar\"\n[sim]\nhorizn = 2.0\n",
    );
    let o = netcbf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_FAILURE));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("horizn"), "{err}");
    assert!(err.contains("line"), "{err}");
    assert!(!out.exists());
}

#[test]
fn analysis_without_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("never");
    let cfg = write_config(
        tmp.path(),
        &format!("{TOY_SHORT}\n[analysis]\nenabled = true\n"),
    );
    let o = netcbf(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_FAILURE));
    assert!(!out.exists());
}

#[test]
fn verify_toy_scalar_is_satisfied() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let o = netcbf(&[
        "verify",
        "--preset",
        "toy-scalar",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let manifest = assert_manifest_complete(&out);
    assert!(manifest.files.iter().any(|f| f.path == "verdict.json"));
    assert!(manifest
        .files
        .iter()
        .any(|f| f.path == "bounds_tracking_two.csv"));
    let verdict = std::fs::read_to_string(out.join("verdict.json")).unwrap();
    assert!(verdict.contains("\"satisfied\""));
}

#[test]
fn verify_with_nonpositive_rate_exits_hypothesis() {
    let tmp = tempfile::tempdir().unwrap();
    // epsilon * filter_lipschitz * |B| = 0.6 * 2 >= 1 on the toy plant.
    let text = TOY_SHORT
        .replace("epsilon = 0.05", "epsilon = 0.6")
        .replace("dt = 1e-3", "dt = 1e-2")
        + "\n[analysis]\nenabled = true\nseed = 5\n";
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("verify");
    let o = netcbf(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_HYPOTHESIS),
        "{}",
        String::from_utf8_lossy(&o.stdout)
    );
    let verdict = std::fs::read_to_string(out.join("verdict.json")).unwrap();
    assert!(verdict.contains("hypothesis_not_met"), "{verdict}");
}

#[test]
fn sweep_flags_under_resolved_cells() {
    let tmp = tempfile::tempdir().unwrap();
    // eps = 0.005 breaks dt <= eps / 10 at dt = 1e-3; the other two cells run.
    let cfg = write_config(tmp.path(), TOY_SHORT);
    let out = tmp.path().join("sweep");
    let o = netcbf(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(
        o.status.code(),
        Some(EXIT_OK),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let manifest = assert_manifest_complete(&out);
    assert_eq!(manifest.failures.len(), 1, "{:?}", manifest.failures);
    assert!(manifest.failures[0].contains("0.005"));
    let heat = std::fs::read_to_string(out.join("heatmap.csv")).unwrap();
    assert!(heat.starts_with("eps,t,violation_hz\n"));
    assert!(!heat.lines().skip(1).any(|l| l.starts_with("0.005,")));
    assert!(out.join("plot_heatmap.py").exists());
}

#[test]
fn presets_are_listed_and_printable() {
    let o = netcbf(&["presets"]);
    assert!(o.status.success());
    let names = String::from_utf8_lossy(&o.stdout).into_owned();
    for name in ["ieee14", "ieee14-nominal", "ieee14-static", "toy-scalar"] {
        assert!(names.lines().any(|l| l == name), "{names}");
    }
    let o = netcbf(&["presets", "ieee14"]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("tau_d = 0.01"));
    assert_eq!(
        netcbf(&["presets", "nope"]).status.code(),
        Some(EXIT_FAILURE)
    );
}
