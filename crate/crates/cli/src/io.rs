//! CSV and report file formats.
//!
//! CSV files use a `.` decimal separator, `\n` line endings and 13
//! significant digits (`{:.12e}`), so repeated runs of the same
//! configuration are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use bvflow_core::audit::AuditReport;
use bvflow_core::bv::BVCurve;
use bvflow_core::flow::{TimeGrid, Trajectory};

use crate::config::ConfigError;

pub fn fmt_f(x: f64) -> String {
    // Normalize the sign of zero so equivalent runs agree byte for byte.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.12e}")
}

pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    ed_residuals: &[f64],
) -> std::io::Result<()> {
    let n = traj.states[0].len();
    let mut out = String::new();
    out.push('t');
    for j in 0..n {
        let _ = write!(out, ",u_{j}");
    }
    out.push_str(",speed,slope,chosen_F,energy,power,ed_residual\n");
    for k in 0..traj.len() {
        let _ = write!(out, "{}", fmt_f(traj.grid.nodes()[k]));
        for j in 0..n {
            let _ = write!(out, ",{}", fmt_f(traj.states[k][j]));
        }
        let speed = if k < traj.speeds.len() { traj.speeds[k] } else { 0.0 };
        let _ = write!(
            out,
            ",{},{},{},{},{},{}\n",
            fmt_f(speed),
            fmt_f(traj.slopes[k]),
            fmt_f(traj.chosen_f[k]),
            fmt_f(traj.energies[k]),
            fmt_f(traj.powers[k]),
            fmt_f(ed_residuals[k]),
        );
    }
    fs::write(path, out)
}

/// Reads a trajectory CSV back into an instrumented [`Trajectory`]; the
/// `ed_residual` column is returned separately for cross-checking.
pub fn read_trajectory_csv(path: &Path) -> Result<(Trajectory, Vec<f64>), ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ConfigError(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.iter().filter(|c| c.starts_with("u_")).count();
    if n == 0 || cols.len() != n + 7 {
        return Err(ConfigError(format!("{}: line 1: unrecognized header", path.display())));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut speeds = Vec::new();
    let mut slopes = Vec::new();
    let mut chosen_f = Vec::new();
    let mut energies = Vec::new();
    let mut powers = Vec::new();
    let mut residuals = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(ConfigError(format!(
                "{}: line {}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                cols.len(),
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, ConfigError> {
            s.trim().parse::<f64>().map_err(|_| {
                ConfigError(format!(
                    "{}: line {}: not a number: {s}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        times.push(parse(fields[0])?);
        let mut state = Vec::with_capacity(n);
        for f in &fields[1..=n] {
            state.push(parse(f)?);
        }
        states.push(state);
        speeds.push(parse(fields[n + 1])?);
        slopes.push(parse(fields[n + 2])?);
        chosen_f.push(parse(fields[n + 3])?);
        energies.push(parse(fields[n + 4])?);
        powers.push(parse(fields[n + 5])?);
        residuals.push(parse(fields[n + 6])?);
    }
    if times.len() < 2 {
        return Err(ConfigError(format!("{}: needs at least two data rows", path.display())));
    }
    let grid = TimeGrid::from_nodes(times).map_err(|e| ConfigError(e.to_string()))?;
    speeds.pop();
    Ok((
        Trajectory {
            grid,
            states,
            speeds,
            slopes,
            chosen_f,
            energies,
            powers,
            step_diagnostics: Vec::new(),
        },
        residuals,
    ))
}

pub fn write_bv_csv(path: &Path, bv: &BVCurve) -> std::io::Result<()> {
    let n = bv.states[0].len();
    let mut out = String::new();
    out.push('t');
    for j in 0..n {
        let _ = write!(out, ",u_{j}");
    }
    out.push('\n');
    for (k, state) in bv.states.iter().enumerate() {
        let _ = write!(out, "{}", fmt_f(bv.times[k]));
        for x in state {
            let _ = write!(out, ",{}", fmt_f(*x));
        }
        out.push('\n');
    }
    fs::write(path, out)
}

/// Reads a BV sample CSV (`t,u_0,...`). Malformed rows are reported with
/// their line number.
pub fn read_bv_csv(path: &Path) -> Result<(Vec<f64>, Vec<Vec<f64>>), ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ConfigError(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.len().saturating_sub(1);
    if n == 0 || cols[0] != "t" {
        return Err(ConfigError(format!("{}: line 1: expected header t,u_0,...", path.display())));
    }
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 1 {
            return Err(ConfigError(format!(
                "{}: line {}: expected {} fields, got {}",
                path.display(),
                lineno + 1,
                n + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, ConfigError> {
            s.trim().parse::<f64>().map_err(|_| {
                ConfigError(format!(
                    "{}: line {}: not a number: {s}",
                    path.display(),
                    lineno + 1
                ))
            })
        };
        times.push(parse(fields[0])?);
        states.push(fields[1..].iter().map(|f| parse(f)).collect::<Result<Vec<_>, _>>()?);
    }
    if times.len() < 2 {
        return Err(ConfigError(format!("{}: needs at least two data rows", path.display())));
    }
    Ok((times, states))
}

pub fn write_jumps_csv(path: &Path, bv: &BVCurve) -> std::io::Result<()> {
    let n = bv.states[0].len();
    let mut out = String::new();
    out.push('t');
    for tag in ["u_minus", "u_at", "u_plus"] {
        for j in 0..n {
            let _ = write!(out, ",{tag}_{j}");
        }
    }
    out.push_str(",tricost,refinement_gap,certified\n");
    for jump in &bv.jumps {
        let _ = write!(out, "{}", fmt_f(jump.time));
        for part in [&jump.u_minus, &jump.u_at, &jump.u_plus] {
            for x in part {
                let _ = write!(out, ",{}", fmt_f(*x));
            }
        }
        match &jump.tricost {
            Some(c) => {
                let _ = write!(
                    out,
                    ",{},{},{}\n",
                    fmt_f(c.value),
                    fmt_f(c.refinement_gap),
                    if c.certified { 1 } else { 0 }
                );
            }
            None => out.push_str(",,,\n"),
        }
    }
    fs::write(path, out)
}

/// Renders an audit report as a flat key-value block.
pub fn render_audit(report: &AuditReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "quadrature = {}", report.quadrature);
    let _ = writeln!(out, "ed_max_abs_residual = {}", fmt_f(report.ed.max_abs));
    let _ = writeln!(
        out,
        "ed_final_residual = {}",
        fmt_f(*report.ed.residuals.last().unwrap_or(&0.0))
    );
    let _ = writeln!(
        out,
        "ed_infinite_conjugate_nodes = {}",
        report.ed.infinite_conjugate_nodes.len()
    );
    let _ = writeln!(out, "velocity_slope_checked = {}", report.velocity_slope.checked);
    let _ = writeln!(out, "velocity_slope_violations = {}", report.velocity_slope.violations);
    let _ = writeln!(out, "velocity_slope_max_gap = {}", fmt_f(report.velocity_slope.max_gap));
    let _ = writeln!(out, "chain_rule_worst_margin = {}", fmt_f(report.chain_margin));
    out.push_str(
        "note = dual bounds are enforced at grid nodes; inter-node values are not verified\n",
    );
    out
}

/// Writes a flat key-value report file.
pub fn write_kv(path: &Path, pairs: &[(String, String)]) -> std::io::Result<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k} = {v}");
    }
    fs::write(path, out)
}
