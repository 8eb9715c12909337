//! Experiment runner behind the `netcbf` command line.
//!
//! Every command computes its artifacts in memory and only writes them once
//! the whole command has succeeded, so a failing run leaves no partial output.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{verify_bounds, VerifyOutcome};
use crate::config::{ExperimentConfig, FilterMode};
use crate::error::{Error, Result};
use crate::grid::{GridParams, SweepResult, ViolationSeries};
use crate::manifest::{Artifact, RunManifest};
use crate::scenario::Scenario;
use crate::sim::{simulate_dynamic, simulate_nominal, simulate_static, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_BOUND_VIOLATED: i32 = 4;

/// Process exit status for an error.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::HypothesisNotMet(_) => EXIT_HYPOTHESIS,
        Error::NumericalBlowup { .. }
        | Error::DomainExit { .. }
        | Error::Numerical(_)
        | Error::WellPosedness { .. }
        | Error::Infeasible { .. } => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Run,
    Sweep,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Run => "run",
            Command::Sweep => "sweep",
            Command::Verify => "verify",
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct CommandOutcome {
    pub exit_code: i32,
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// One line per notable result, for the terminal.
    pub messages: Vec<String>,
}

struct Produced {
    artifacts: Vec<Artifact>,
    manifest: RunManifest,
    messages: Vec<String>,
    exit_code: i32,
}

/// Validates `cfg`, runs `command` and writes its outputs.
pub fn execute(
    command: Command,
    mut cfg: ExperimentConfig,
    opts: &RunOptions,
) -> Result<CommandOutcome> {
    if let Some(seed) = opts.seed {
        cfg.analysis.seed = Some(seed);
    }
    cfg.validate()?;
    if command == Command::Verify && cfg.analysis.seed.is_none() {
        return Err(Error::Config(
            "verify needs `analysis.seed` or --seed".into(),
        ));
    }
    if command == Command::Sweep && cfg.sweep.is_none() {
        return Err(Error::Config("sweep needs a [sweep] section".into()));
    }
    let scenario = cfg.build_scenario()?;
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.scenario.name()));

    let started = Instant::now();
    let work = || match command {
        Command::Run => run(&cfg, &scenario),
        Command::Sweep => sweep(&cfg, &scenario),
        Command::Verify => verify(&cfg, &scenario),
    };
    let produced = match opts.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    let mut manifest = produced.manifest;
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let manifest = manifest.write_all(&out_dir, &produced.artifacts)?;
    Ok(CommandOutcome {
        exit_code: produced.exit_code,
        out_dir,
        manifest,
        messages: produced.messages,
    })
}

fn new_manifest(command: Command, cfg: &ExperimentConfig) -> RunManifest {
    RunManifest::new(command.name(), cfg.scenario.name(), &cfg.canonical_json())
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    mode: FilterMode,
    epsilon: Option<f64>,
    dt: f64,
    steps: usize,
    max_violation: f64,
    max_violation_time: f64,
    violation_support: f64,
    violation_unit: &'static str,
    final_state: Vec<f64>,
}

fn run(cfg: &ExperimentConfig, sc: &Scenario) -> Result<Produced> {
    let sim_cfg = cfg.sim_config(sc, cfg.sim.norm);
    let traj = match cfg.filter.mode {
        FilterMode::None => simulate_nominal(&sc.model, &sc.disturbance, &sim_cfg)?,
        FilterMode::Static => simulate_static(&sc.model, &sc.spec, &sc.disturbance, &sim_cfg)?,
        FilterMode::Dynamic => simulate_dynamic(&sc.model, &sc.spec, &sc.disturbance, &sim_cfg)?,
    };
    let violation = sc.violation(&traj);
    let mut manifest = new_manifest(Command::Run, cfg);
    let mut artifacts = vec![Artifact::new("trajectory.csv", traj.to_csv_string())];
    if let Some(grid) = &sc.grid {
        artifacts.push(Artifact::new(
            "frequencies.csv",
            frequencies_csv(&traj, grid),
        ));
        artifacts.push(Artifact::new("plot_frequencies.py", FREQUENCY_PLOT));
    }
    artifacts.push(Artifact::new(
        "violation.csv",
        violation_csv(&violation, sc.grid.is_some()),
    ));
    let summary = RunSummary {
        scenario: &sc.name,
        mode: cfg.filter.mode,
        epsilon: (cfg.filter.mode == FilterMode::Dynamic).then_some(cfg.filter.epsilon),
        dt: sim_cfg.dt,
        steps: traj.len() - 1,
        max_violation: violation.max,
        max_violation_time: violation.argmax_time,
        violation_support: violation.support_duration(sim_cfg.dt),
        violation_unit: if sc.grid.is_some() { "Hz" } else { "barrier" },
        final_state: traj.final_state().iter().copied().collect(),
    };
    artifacts.push(Artifact::new("summary.json", json(&summary)));
    let mut messages = vec![format!(
        "{} run: max violation {:.6} at t = {:.3}",
        match cfg.filter.mode {
            FilterMode::None => "nominal",
            FilterMode::Static => "static",
            FilterMode::Dynamic => "dynamic",
        },
        violation.max,
        violation.argmax_time
    )];
    manifest
        .verdicts
        .insert("max_violation".into(), format!("{}", violation.max));

    let mut exit_code = EXIT_OK;
    if cfg.analysis.enabled && cfg.filter.mode == FilterMode::Dynamic {
        let (code, mut extra, mut lines) = bound_artifacts(cfg, sc, &mut manifest)?;
        exit_code = code;
        artifacts.append(&mut extra);
        messages.append(&mut lines);
    }
    Ok(Produced {
        artifacts,
        manifest,
        messages,
        exit_code,
    })
}

fn verify(cfg: &ExperimentConfig, sc: &Scenario) -> Result<Produced> {
    let mut manifest = new_manifest(Command::Verify, cfg);
    let (exit_code, artifacts, messages) = bound_artifacts(cfg, sc, &mut manifest)?;
    Ok(Produced {
        artifacts,
        manifest,
        messages,
        exit_code,
    })
}

/// Runs the bound verification once per configured norm.
fn bound_artifacts(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    manifest: &mut RunManifest,
) -> Result<(i32, Vec<Artifact>, Vec<String>)> {
    let settings = cfg.analysis_settings()?;
    let mut artifacts = Vec::new();
    let mut messages = Vec::new();
    let mut summaries = serde_json::Map::new();
    let (mut violated, mut not_met) = (false, false);
    for norm in &cfg.analysis.norms {
        let sim_cfg = cfg.sim_config(sc, *norm);
        let out: VerifyOutcome =
            verify_bounds(&sc.model, &sc.spec, &sc.disturbance, &sim_cfg, &settings)?;
        let tag = norm.name();
        for (label, report) in [("tracking", &out.tracking), ("deviation", &out.deviation)] {
            let status = match label {
                "tracking" => &out.summary.tracking,
                _ => &out.summary.deviation,
            };
            manifest
                .verdicts
                .insert(format!("{label}_{tag}"), status.label().into());
            match report {
                Ok(rep) => {
                    artifacts.push(Artifact::new(
                        format!("bounds_{label}_{tag}.csv"),
                        rep.to_csv_string(),
                    ));
                    violated |= !rep.verdict.satisfied;
                    messages.push(format!(
                        "{label} ({tag}-norm): {} (min slack {:.3e})",
                        status.label(),
                        rep.slack_min
                    ));
                }
                Err(Error::HypothesisNotMet(reason)) => {
                    not_met = true;
                    messages.push(format!(
                        "{label} ({tag}-norm): hypothesis not met: {reason}"
                    ));
                }
                Err(e) => return Err(Error::Numerical(e.to_string())),
            }
        }
        summaries.insert(
            tag.into(),
            serde_json::to_value(&out.summary).expect("summary serializes"),
        );
    }
    artifacts.push(Artifact::new("verdict.json", json(&summaries)));
    let code = if violated {
        EXIT_BOUND_VIOLATED
    } else if not_met {
        EXIT_HYPOTHESIS
    } else {
        EXIT_OK
    };
    Ok((code, artifacts, messages))
}

#[derive(Serialize)]
struct SweepRow {
    epsilon: f64,
    status: String,
    max_violation: Option<f64>,
    max_violation_time: Option<f64>,
    violation_support: Option<f64>,
}

fn sweep(cfg: &ExperimentConfig, sc: &Scenario) -> Result<Produced> {
    let section = cfg.sweep.as_ref().expect("checked by execute");
    let grid = section.grid()?;
    let base = cfg.sim_config(sc, cfg.sim.norm);
    let result: SweepResult =
        crate::grid::epsilon_sweep(&sc.model, &sc.spec, &sc.disturbance, &base, &grid, |traj| {
            sc.violation(traj)
        });
    let mut manifest = new_manifest(Command::Sweep, cfg);
    let [from, to] = section.window.unwrap_or([0.0, cfg.sim.horizon]);

    let mut table = String::from("eps,status,max_violation,max_violation_time,violation_support\n");
    let mut rows = Vec::new();
    let mut messages = Vec::new();
    for cell in &result.cells {
        match &cell.outcome {
            Ok(series) => {
                let support = series.support_duration(result.dt);
                writeln!(
                    table,
                    "{},ok,{},{},{}",
                    cell.epsilon, series.max, series.argmax_time, support
                )
                .unwrap();
                messages.push(format!(
                    "eps = {:.4}: max violation {:.6}, support {:.3} s",
                    cell.epsilon, series.max, support
                ));
                rows.push(SweepRow {
                    epsilon: cell.epsilon,
                    status: "ok".into(),
                    max_violation: Some(series.max),
                    max_violation_time: Some(series.argmax_time),
                    violation_support: Some(support),
                });
            }
            Err(reason) => {
                writeln!(table, "{},skipped,,,", cell.epsilon).unwrap();
                manifest
                    .failures
                    .push(format!("eps = {}: {reason}", cell.epsilon));
                messages.push(format!("eps = {:.4}: skipped ({reason})", cell.epsilon));
                rows.push(SweepRow {
                    epsilon: cell.epsilon,
                    status: reason.clone(),
                    max_violation: None,
                    max_violation_time: None,
                    violation_support: None,
                });
            }
        }
    }
    let ok: Vec<(f64, &ViolationSeries)> = result
        .cells
        .iter()
        .filter_map(|c| c.outcome.as_ref().ok().map(|s| (c.epsilon, s)))
        .collect();
    if let (Some(first), Some(last)) = (ok.first(), ok.last()) {
        let trend = last.1.max >= first.1.max;
        manifest.verdicts.insert(
            "violation_trend".into(),
            if trend { "pass" } else { "fail" }.into(),
        );
        let zero = ok.iter().any(|(_, s)| s.max == 0.0);
        manifest.verdicts.insert(
            "zero_violation_cell".into(),
            if zero { "present" } else { "absent" }.into(),
        );
    }
    manifest.verdicts.insert(
        "cells_ok".into(),
        format!("{}/{}", result.succeeded(), result.cells.len()),
    );

    let artifacts = vec![
        Artifact::new("heatmap.csv", result.heatmap_csv(from, to)),
        Artifact::new("sweep.csv", table),
        Artifact::new("sweep.json", json(&rows)),
        Artifact::new("plot_heatmap.py", HEATMAP_PLOT),
    ];
    let exit_code = if result.succeeded() > 0 {
        EXIT_OK
    } else {
        EXIT_NUMERICAL
    };
    Ok(Produced {
        artifacts,
        manifest,
        messages,
        exit_code,
    })
}

/// `t,f_1..f_N` in absolute Hz.
pub fn frequencies_csv(traj: &Trajectory, grid: &GridParams) -> String {
    let idx = grid.omega_indices();
    let mut out = String::from("t");
    for b in &grid.buses {
        write!(out, ",f_{}", b.bus).unwrap();
    }
    out.push('\n');
    for (t, x) in traj.times.iter().zip(&traj.states) {
        write!(out, "{t}").unwrap();
        for &k in &idx {
            write!(out, ",{}", grid.nominal_hz + x[k]).unwrap();
        }
        out.push('\n');
    }
    out
}

fn violation_csv(series: &ViolationSeries, grid: bool) -> String {
    let mut out = String::from(if grid {
        "t,violation_hz\n"
    } else {
        "t,violation\n"
    });
    for (t, v) in series.times.iter().zip(&series.values) {
        writeln!(out, "{t},{v}").unwrap();
    }
    out
}

const HEATMAP_PLOT: &str = r#"#!/usr/bin/env python3
"""Heatmap of the maximum lower-bound violation over time and epsilon.

Usage: python3 plot_heatmap.py [heatmap.csv] [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt
import numpy as np

src = sys.argv[1] if len(sys.argv) > 1 else "heatmap.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "heatmap.png"

rows = defaultdict(dict)
with open(src) as fh:
    for r in csv.DictReader(fh):
        rows[float(r["eps"])][float(r["t"])] = float(r["violation_hz"])

eps = sorted(rows)
times = sorted(rows[eps[0]])
grid = np.array([[rows[e].get(t, np.nan) for t in times] for e in eps])

fig, ax = plt.subplots(figsize=(7, 4))
mesh = ax.pcolormesh(times, eps, grid, shading="nearest", cmap="viridis")
ax.set_yscale("log")
ax.set_xlabel("t [s]")
ax.set_ylabel("epsilon")
fig.colorbar(mesh, ax=ax, label="violation [Hz]")
fig.tight_layout()
fig.savefig(dst, dpi=150)
print("wrote", dst)
"#;

const FREQUENCY_PLOT: &str = r#"#!/usr/bin/env python3
"""Bus frequencies against the nadir limit.

Usage: python3 plot_frequencies.py [frequencies.csv] [out.png] [nadir_hz]
"""
import csv
import sys

import matplotlib.pyplot as plt

src = sys.argv[1] if len(sys.argv) > 1 else "frequencies.csv"
dst = sys.argv[2] if len(sys.argv) > 2 else "frequencies.png"
nadir = float(sys.argv[3]) if len(sys.argv) > 3 else 59.5

with open(src) as fh:
    reader = csv.reader(fh)
    header = next(reader)
    data = [[float(v) for v in row] for row in reader]

t = [row[0] for row in data]
fig, ax = plt.subplots(figsize=(7, 4))
for j, name in enumerate(header[1:], start=1):
    ax.plot(t, [row[j] for row in data], lw=1, label=name.replace("f_", "bus "))
ax.axhline(nadir, color="k", ls="--", lw=1)
ax.set_xlabel("t [s]")
ax.set_ylabel("frequency [Hz]")
ax.legend(ncol=2, fontsize=7)
fig.tight_layout()
fig.savefig(dst, dpi=150)
print("wrote", dst)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::preset("toy-scalar").unwrap();
        cfg.sim.horizon = 1.0;
        cfg
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code_for(&Error::HypothesisNotMet("x".into())), 2);
        assert_eq!(
            exit_code_for(&Error::NumericalBlowup { step: 1, time: 0.1 }),
            3
        );
        assert_eq!(exit_code_for(&Error::Config("x".into())), 1);
    }

    #[test]
    fn run_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = toy_cfg();
        cfg.analysis.enabled = false;
        let out = execute(
            Command::Run,
            cfg,
            &RunOptions {
                out: Some(dir.path().to_path_buf()),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.exit_code, EXIT_OK);
        let names: Vec<&str> = out.manifest.files.iter().map(|f| f.path.as_str()).collect();
        assert!(names.contains(&"trajectory.csv") && names.contains(&"summary.json"));
        assert!(out.manifest.mismatches(dir.path()).is_empty());
    }

    #[test]
    fn sweep_requires_section() {
        let mut cfg = toy_cfg();
        cfg.sweep = None;
        let dir = tempfile::tempdir().unwrap();
        let err = execute(
            Command::Sweep,
            cfg,
            &RunOptions {
                out: Some(dir.path().join("x")),
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(exit_code_for(&err), EXIT_FAILURE);
        assert!(!dir.path().join("x").exists());
    }
}
