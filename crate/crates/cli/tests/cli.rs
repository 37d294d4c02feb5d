//! Binary-level tests: exit codes, output files, wire formats.

use std::path::Path;
use std::process::{Command, Output};

fn bvflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bvflow")).args(args).output().expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const QUAD_FLOW: &str = "[system]\nname = quadratic\ndimension = 1\nu0 = 1.0\n\n\
    [dissipation]\nfamily = power\np = 2.0\n\n[grid]\nT = 1.0\nsteps = 50\n";

#[test]
fn flow_runs_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "quad.ini", QUAD_FLOW);
    let out = dir.path().join("out");
    let result = bvflow(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    assert!(out.join("trajectory.csv").exists());
    assert!(out.join("audit.txt").exists());
    let stdout = String::from_utf8_lossy(&result.stdout);
    // The effective configuration is echoed with defaults resolved.
    assert!(stdout.contains("# effective configuration"));
    assert!(stdout.contains("max_iter = 200"));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,u_0,speed,slope,chosen_F,energy,power,ed_residual\n"));
    assert!(!csv.contains('\r'));
}

#[test]
fn unknown_config_key_exits_3_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "bad.ini",
        "[system]\nname = quadratic\ndimension = 1\nwibble = 3\n",
    );
    let result = bvflow(&["flow", "--config", &cfg]);
    assert_eq!(result.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("wibble"), "stderr: {stderr}");
}

#[test]
fn starved_solver_exits_2_with_step_index() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "starved.ini",
        "[system]\nname = double_well_1d\nload_a = 0.0\nload_b = 1.0\nu0 = -1.0\n\n\
         [dissipation]\nfamily = power\np = 1.5\n\n[grid]\nT = 1.6\nsteps = 40\n\n\
         [solver]\nmax_iter = 0\n",
    );
    let out = dir.path().join("out");
    let result = bvflow(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("index"), "stderr: {stderr}");
}

#[test]
fn missing_config_flag_exits_3() {
    let result = bvflow(&["flow"]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn audit_round_trips_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "quad.ini", QUAD_FLOW);
    let out = dir.path().join("out");
    let run = bvflow(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(run.status.success());
    let traj = out.join("trajectory.csv");
    let result = bvflow(&["audit", "--config", &cfg, "--traj", traj.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    let dev_line = stdout
        .lines()
        .find(|l| l.starts_with("stored_residual_max_deviation"))
        .expect("deviation line");
    let dev: f64 = dev_line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!(dev <= 1e-9, "stored residuals drifted: {dev}");
}

#[test]
fn malformed_trajectory_csv_exits_3_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "quad.ini", QUAD_FLOW);
    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "t,u_0,speed,slope,chosen_F,energy,power,ed_residual\n0.0,1.0,0,0,0,0,0,0\n0.5,oops,0,0,0,0,0,0\n",
    )
    .unwrap();
    let result = bvflow(&["audit", "--config", &cfg, "--traj", bad.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
}

const DW_SWEEP: &str = "[system]\nname = double_well_1d\nload_a = 0.0\nload_b = 1.0\nu0 = -1.0\n\n\
    [grid]\nT = 1.6\nsteps = 1024\n\n[family]\nlaw = p_to_one\nratio = 0.5\ncount = 6\n";

#[test]
fn sweep_writes_family_outputs_with_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "sweep.ini", DW_SWEEP);
    let out = dir.path().join("out");
    let result = bvflow(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    for name in ["member_1.csv", "member_4.csv", "limit_bv.csv", "jumps.csv", "convergence_report.txt", "report.kv"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let report = std::fs::read_to_string(out.join("report.kv")).unwrap();
    assert!(report.contains("bv_verdict ="), "verdict missing:\n{report}");
    assert!(report.contains("c3_note ="));
}

#[test]
fn single_member_sweep_degenerates_to_flow_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "single.ini",
        "[system]\nname = quadratic\ndimension = 1\nu0 = 1.0\n\n\
         [grid]\nT = 1.0\nsteps = 50\n\n[family]\nlaw = p_to_one\nratio = 0.5\ncount = 1\n",
    );
    let out = dir.path().join("out");
    let result = bvflow(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    assert!(out.join("member_1.csv").exists());
    assert!(!out.join("limit_bv.csv").exists());
    let report = std::fs::read_to_string(out.join("convergence_report.txt")).unwrap();
    assert!(report.contains("single member"));
}

#[test]
fn superlinear_sweep_reports_absolutely_continuous_limit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "super.ini",
        "[system]\nname = double_well_1d\nload_a = 0.0\nload_b = 1.0\nu0 = -1.0\n\n\
         [grid]\nT = 1.6\nsteps = 256\n\n\
         [family]\nlaw = p_to_limit\np_limit = 2.0\nratio = 0.5\ncount = 4\n",
    );
    let out = dir.path().join("out");
    let result = bvflow(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let report = std::fs::read_to_string(out.join("convergence_report.txt")).unwrap();
    assert!(
        report.contains("limit is absolutely continuous; jump set empty"),
        "report:\n{report}"
    );
}

#[test]
fn jumpcost_prints_value_gap_and_certification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "dw.ini", DW_SWEEP);
    // Constant-factor region: cost = L·d.
    let result = bvflow(&[
        "jumpcost", "--config", &cfg, "--t", "0.0", "--from", "-1.0", "--to", "-0.9",
        "--cap-l", "2.0",
    ]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    let value: f64 = stdout
        .lines()
        .find(|l| l.starts_with("value ="))
        .and_then(|l| l.split('=').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((value - 0.2).abs() <= 1e-9, "expected L·d = 0.2, got {value}");
    assert!(stdout.contains("refinement_gap ="));
    assert!(stdout.contains("certified = true"));

    // Identical endpoints cost nothing.
    let result = bvflow(&[
        "jumpcost", "--config", &cfg, "--t", "0.5", "--from", "0.3", "--to", "0.3",
        "--cap-l", "1.0",
    ]);
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("value = 0.000000000000e0"));

    let result = bvflow(&["jumpcost", "--config", &cfg, "--t", "zzz", "--from", "0", "--to", "1"]);
    assert_eq!(result.status.code(), Some(3));
}

#[test]
fn validate_bv_passes_sweep_output_and_fails_tampered_jump() {
    let dir = tempfile::tempdir().unwrap();
    let sweep_cfg = write_cfg(dir.path(), "sweep.ini", DW_SWEEP);
    let out = dir.path().join("out");
    let result = bvflow(&["sweep", "--config", &sweep_cfg, "--out", out.to_str().unwrap()]);
    assert!(result.status.success());

    let validate_cfg = write_cfg(
        dir.path(),
        "validate.ini",
        "[system]\nname = double_well_1d\nload_a = 0.0\nload_b = 1.0\n\n\
         [dissipation]\nfamily = linear\nL = 1.0\n\n[grid]\nT = 1.6\nsteps = 1024\n\n\
         [bv]\ntol_stab = 0.1\neb_tol = 0.1\n",
    );
    let bv_path = out.join("limit_bv.csv");
    let result =
        bvflow(&["validate-bv", "--config", &validate_cfg, "--bv", bv_path.to_str().unwrap()]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("verdict = PASS"), "stdout:\n{stdout}");

    // Inflate the jump: shift every post-jump sample upward. The energy
    // balance must localize the mismatch and fail.
    let text = std::fs::read_to_string(&bv_path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    for line in lines.iter_mut().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let u: f64 = fields[1].parse().unwrap();
        if u > 0.5 {
            *line = format!("{},{:.12e}", fields[0], u + 0.6);
        }
    }
    let tampered = dir.path().join("tampered.csv");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    let result =
        bvflow(&["validate-bv", "--config", &validate_cfg, "--bv", tampered.to_str().unwrap()]);
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("verdict = FAIL"), "stdout:\n{stdout}");

    // Malformed CSV reports the line number and exits 3.
    let broken = dir.path().join("broken.csv");
    std::fs::write(&broken, "t,u_0\n0.0,0.0\nnot-a-number,0.1\n").unwrap();
    let result =
        bvflow(&["validate-bv", "--config", &validate_cfg, "--bv", broken.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&result.stderr).contains("line 3"));
}

#[test]
fn flow_csv_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "quad.ini", QUAD_FLOW);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let result = bvflow(&["flow", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(result.status.success());
    }
    assert_eq!(
        std::fs::read(a.join("trajectory.csv")).unwrap(),
        std::fs::read(b.join("trajectory.csv")).unwrap()
    );
}
