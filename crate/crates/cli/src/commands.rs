//! Subcommand implementations. Each writes its report to `out` and returns
//! an error carrying the exit status on failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use ltlcbf_core::lasso::compile;
use ltlcbf_core::ltl::{decomposition, describe, parse_spec_bytes};
use ltlcbf_core::runtime::{run, Encoding, EventLog, Trajectory};
use ltlcbf_core::trace::{check_satisfaction, extract_trace, safety_margins, SatisfactionReport};

use crate::error::{CliError, Result};
use crate::scenario::{parse_assignment, Scenario};

/// Field margins at or above this count as safe when verifying.
pub const INV_TOL: f64 = 1e-3;

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::io("<stdout>", e))
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// `check`: parse a specification file and print its decomposition.
pub fn check(path: &Path, as_json: bool, out: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let spec = parse_spec_bytes(&bytes)?;
    if as_json {
        emit(out, &json(&decomposition(&spec)))
    } else {
        emit(out, &describe(&spec))
    }
}

/// `compile`: print the lasso for a scenario.
pub fn compile_scenario(path: &Path, as_json: bool, out: &mut dyn Write) -> Result<()> {
    let scenario = Scenario::load(path)?;
    let lasso = compile(&scenario.spec, &scenario.template)?;
    if as_json {
        emit(out, &json(&lasso))
    } else {
        emit(out, &lasso.report())
    }
}

pub fn trajectory_path(prefix: &Path) -> PathBuf {
    suffixed(prefix, ".trajectory.csv")
}

pub fn events_path(prefix: &Path) -> PathBuf {
    suffixed(prefix, ".events.json")
}

fn suffixed(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
pub struct SimSummary {
    pub samples: usize,
    pub switches: usize,
    pub duration: f64,
    pub error: Option<String>,
}

/// `simulate`: run the closed loop and write `<prefix>.trajectory.csv` and
/// `<prefix>.events.json`. Files are written even when the run fails.
pub fn simulate(scenario: &Scenario, prefix: &Path, out: &mut dyn Write) -> Result<SimSummary> {
    let lasso = compile(&scenario.spec, &scenario.template)?;
    let result = run(
        &scenario.workspace,
        &lasso,
        &scenario.params,
        &scenario.config,
        &scenario.x0,
    );
    let (traj, error) = match result {
        Ok(traj) => (traj, None),
        Err(failure) => (failure.trajectory, Some(failure.error)),
    };
    let log = EventLog {
        dt: scenario.config.dt,
        prefix_len: lasso.p(),
        suffix_len: lasso.ell(),
        suffix_cycles: scenario.config.suffix_cycles,
        events: traj.events.clone(),
    };
    write_file(&trajectory_path(prefix), &traj.to_csv())?;
    write_file(&events_path(prefix), &json(&log))?;

    for e in &traj.events {
        let mut line = format!("{:>9.3} s  {:?}  {}", e.time, e.kind, e.label);
        if !e.detail.is_empty() {
            line.push_str(&format!("  ({})", e.detail));
        }
        emit(out, &(line + "\n"))?;
    }
    let summary = SimSummary {
        samples: traj.len(),
        switches: traj.switches().count(),
        duration: traj.times.last().copied().unwrap_or(0.0),
        error: error.as_ref().map(|e| e.to_string()),
    };
    emit(
        out,
        &format!(
            "{} samples, {} switches, {:.2} s simulated\n",
            summary.samples, summary.switches, summary.duration
        ),
    )?;
    match error {
        Some(e) => Err(e.into()),
        None => Ok(summary),
    }
}

/// Reads a trajectory written by [`simulate`].
pub fn load_trajectory(prefix: &Path) -> Result<Trajectory> {
    let csv = read_file(&trajectory_path(prefix))?;
    let log: EventLog = serde_json::from_str(&read_file(&events_path(prefix))?)
        .map_err(|e| CliError::Scenario(format!("{}: {e}", events_path(prefix).display())))?;
    Ok(Trajectory::from_csv(&csv, log.events)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub pass: bool,
    pub satisfaction: SatisfactionReport,
    /// Smallest value of each always-literal (and, in the suffix,
    /// persistence-literal) field over the run.
    pub safety_margins: std::collections::BTreeMap<String, f64>,
    pub margins_ok: bool,
}

/// Checks a trajectory against a scenario's specification.
pub fn verify_trajectory(scenario: &Scenario, traj: &Trajectory) -> Result<VerifyReport> {
    let trace = extract_trace(traj, &scenario.workspace)?;
    let satisfaction = check_satisfaction(&trace, &scenario.spec, &scenario.template)?;
    let margins = safety_margins(traj, &trace, &scenario.workspace, &scenario.spec)?;
    let margins_ok = margins.values().all(|h| *h >= -INV_TOL);
    Ok(VerifyReport {
        pass: satisfaction.pass && margins_ok,
        satisfaction,
        safety_margins: margins,
        margins_ok,
    })
}

/// `verify`: print the JSON report; fails with exit status 3 unless it passes.
pub fn verify(scenario: &Scenario, prefix: &Path, out: &mut dyn Write) -> Result<VerifyReport> {
    let traj = load_trajectory(prefix)?;
    let report = verify_trajectory(scenario, &traj)?;
    emit(out, &json(&report))?;
    if report.pass {
        Ok(report)
    } else {
        let mut failed: Vec<String> = report
            .satisfaction
            .descendant
            .failed()
            .iter()
            .map(|c| format!("condition {c}"))
            .collect();
        if report.satisfaction.terminal_required && !report.satisfaction.terminal_repeat {
            failed.push("terminal repetition".into());
        }
        if !report.margins_ok {
            failed.push("field margins".into());
        }
        Err(CliError::Verification(failed.join(", ")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub scenario: String,
    pub overrides: Vec<(String, String)>,
    pub output: String,
    pub exit_code: i32,
    pub message: String,
}

/// Expands `key=v1,v2` parameters into the cartesian product of overrides.
pub fn sweep_grid(params: &[String]) -> Result<Vec<Vec<(String, String)>>> {
    let mut grid = vec![Vec::new()];
    for p in params {
        let (key, values) = parse_assignment(p)?;
        let mut next = Vec::new();
        for combo in &grid {
            for v in values.split(',') {
                let mut c: Vec<(String, String)> = combo.clone();
                c.push((key.clone(), v.trim().to_string()));
                next.push(c);
            }
        }
        grid = next;
    }
    Ok(grid)
}

fn sweep_one(path: &Path, overrides: &[(String, String)], out_dir: &Path) -> SweepRow {
    let stem = path
        .file_stem()
        .map_or("scenario".into(), |s| s.to_string_lossy().into_owned());
    let mut name = stem.clone();
    for (k, v) in overrides {
        name.push_str(&format!("_{}-{}", k.replace('.', "_"), v));
    }
    let prefix = out_dir.join(&name);
    let outcome = Scenario::load_with(path, overrides).and_then(|scenario| {
        simulate(&scenario, &prefix, &mut std::io::sink())?;
        let traj = load_trajectory(&prefix)?;
        let report = verify_trajectory(&scenario, &traj)?;
        write_file(&suffixed(&prefix, ".verify.json"), &json(&report))?;
        if report.pass {
            Ok(())
        } else {
            Err(CliError::Verification(format!(
                "failed conditions {:?}",
                report.satisfaction.descendant.failed()
            )))
        }
    });
    let (exit_code, message) = match outcome {
        Ok(()) => (0, "pass".to_string()),
        Err(e) => (e.exit_code(), e.to_string()),
    };
    SweepRow {
        scenario: path.display().to_string(),
        overrides: overrides.to_vec(),
        output: prefix.display().to_string(),
        exit_code,
        message,
    }
}

/// `sweep`: simulate and verify every scenario under every parameter
/// combination in parallel. Returns the rows in input order.
pub fn sweep(
    scenarios: &[PathBuf],
    params: &[String],
    out_dir: &Path,
    out: &mut dyn Write,
) -> Result<Vec<SweepRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let grid = sweep_grid(params)?;
    let jobs: Vec<(&PathBuf, &Vec<(String, String)>)> = scenarios
        .iter()
        .flat_map(|s| grid.iter().map(move |g| (s, g)))
        .collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|(path, overrides)| sweep_one(path, overrides, out_dir))
        .collect();
    for row in &rows {
        emit(
            out,
            &format!("{:<4} {}  {}\n", row.exit_code, row.output, row.message),
        )?;
    }
    write_file(&out_dir.join("sweep.json"), &json(&rows))?;
    Ok(rows)
}

/// Applies a command-line encoding choice over the scenario's own.
pub fn with_encoding(mut scenario: Scenario, encoding: Option<Encoding>) -> Scenario {
    if let Some(e) = encoding {
        scenario.config.encoding = e;
    }
    scenario
}
