//! The five subcommands: flow, sweep, jumpcost, audit, validate-bv.

use std::fmt::Write as _;
use std::path::Path;

use bvflow_core::audit::{audit_trajectory, ed_residual, velocity_slope_check};
use bvflow_core::bv::{local_stability_check, validate_bv_solution, BVCurve};
use bvflow_core::family::{
    assumption_spotcheck, dissipation_liminf_check, energy_convergence_check, pointwise_limit,
    power_equi_integrability, run_family, slope_excess_measure, FamilySpec,
};
use bvflow_core::flow::{run_flow, Trajectory};
use bvflow_core::transition::{bicost, tricost};
use bvflow_core::Error as CoreError;

use crate::config::{Config, ConfigError};
use crate::io;
use crate::setup;

/// Command failures mapped onto exit codes: configuration problems exit 3,
/// solver/runtime problems exit 2.
pub enum CliError {
    Config(String),
    Run(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 3,
            CliError::Run(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) => m,
            CliError::Run(m) => m,
        }
    }
}

fn run_err(e: CoreError) -> CliError {
    CliError::Run(e.to_string())
}

type CmdResult = Result<(), CliError>;

fn echo_config(cfg: &Config) {
    println!("# effective configuration");
    print!("{}", cfg.render());
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Run(format!("io error: {e}"))
}

/// `flow`: one instrumented run plus its audit.
pub fn cmd_flow(config_path: &Path, out_dir: &Path) -> CmdResult {
    let mut cfg = Config::load(config_path)?;
    let st = setup::build_setup(&mut cfg)?;
    let psi = setup::build_dissipation(&mut cfg)?;
    echo_config(&cfg);
    ensure_out_dir(out_dir)?;

    let traj =
        run_flow(&st.system, &psi, &st.initial_state, &st.grid, &st.solver).map_err(run_err)?;
    let report = audit_trajectory(&st.system, &traj, &psi).map_err(run_err)?;
    io::write_trajectory_csv(&out_dir.join("trajectory.csv"), &traj, &report.ed.residuals)
        .map_err(io_err)?;
    std::fs::write(out_dir.join("audit.txt"), io::render_audit(&report)).map_err(io_err)?;
    println!("flow: {} steps, final energy {}", st.grid.steps(), io::fmt_f(*traj.energies.last().unwrap()));
    println!("audit: max |ED residual| {}", io::fmt_f(report.ed.max_abs));
    println!(
        "audit: velocity-slope violations {}/{}",
        report.velocity_slope.violations, report.velocity_slope.checked
    );
    Ok(())
}

/// `audit`: re-audits a stored trajectory CSV against the configured
/// dissipation and system.
pub fn cmd_audit(config_path: &Path, traj_path: &Path) -> CmdResult {
    let mut cfg = Config::load(config_path)?;
    let (traj, stored) = io::read_trajectory_csv(traj_path)?;
    let psi = setup::build_dissipation(&mut cfg)?;
    let horizon = traj.grid.horizon();
    let (system, _) = setup::build_system(&mut cfg, horizon)?;
    echo_config(&cfg);
    let report = audit_trajectory(&system, &traj, &psi).map_err(run_err)?;
    let stored_gap = report
        .ed
        .residuals
        .iter()
        .zip(&stored)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    print!("{}", io::render_audit(&report));
    println!("stored_residual_max_deviation = {}", io::fmt_f(stored_gap));
    Ok(())
}

/// `jumpcost`: transition cost between two states at a frozen time.
#[allow(clippy::too_many_arguments)]
pub fn cmd_jumpcost(
    config_path: &Path,
    t: f64,
    from: &[f64],
    to: &[f64],
    mid: Option<&[f64]>,
    cap_l: Option<f64>,
    segments: Option<usize>,
    starts: Option<usize>,
) -> CmdResult {
    let mut cfg = Config::load(config_path)?;
    let horizon = cfg.f64_or("grid", "T", t.max(1.0))?;
    let (system, _) = setup::build_system(&mut cfg, horizon.max(t))?;
    let mut path_opts = setup::build_path_opts(&mut cfg)?;
    if let Some(m) = segments {
        path_opts.segments = m;
    }
    if let Some(s) = starts {
        path_opts.starts = s;
    }
    let cap = match cap_l {
        Some(l) => l,
        None => {
            let psi = setup::build_dissipation(&mut cfg)?;
            let g = psi.growth_coefficient();
            if !g.is_finite() {
                return Err(CliError::Config(
                    "cap L must be given (--cap-l) when the dissipation is superlinear".into(),
                ));
            }
            g
        }
    };
    echo_config(&cfg);
    if from.len() != system.dimension() || to.len() != system.dimension() {
        return Err(CliError::Config(format!(
            "endpoint dimension mismatch: system has dimension {}",
            system.dimension()
        )));
    }
    let cost = match mid {
        None => bicost(&system, t, from, to, cap, &path_opts).map_err(run_err)?,
        Some(m) => {
            if m.len() != system.dimension() {
                return Err(CliError::Config("midpoint dimension mismatch".into()));
            }
            tricost(&system, t, from, m, to, cap, &path_opts).map_err(run_err)?
        }
    };
    println!("value = {}", io::fmt_f(cost.value));
    println!("refinement_gap = {}", io::fmt_f(cost.refinement_gap));
    println!("certified = {}", cost.certified);
    Ok(())
}

/// `validate-bv`: stability and energy balance of a stored BV curve.
pub fn cmd_validate_bv(config_path: &Path, bv_path: &Path) -> CmdResult {
    let mut cfg = Config::load(config_path)?;
    let (times, states) = io::read_bv_csv(bv_path)?;
    let horizon = *times.last().unwrap();
    let (system, _) = setup::build_system(&mut cfg, horizon)?;
    let psi = setup::build_dissipation(&mut cfg)?;
    let bvc = setup::build_bv(&mut cfg)?;
    let path_opts = setup::build_path_opts(&mut cfg)?;
    let cap_l = match bvc.cap_l.or_else(|| {
        let g = psi.growth_coefficient();
        g.is_finite().then_some(g)
    }) {
        Some(l) => l,
        None => {
            return Err(CliError::Config(
                "cap_L must be set in [bv] when the dissipation is superlinear".into(),
            ))
        }
    };
    echo_config(&cfg);
    let bv = BVCurve::build(times, states, system.metric(), &bvc.params).map_err(run_err)?;
    let verdict = validate_bv_solution(
        &system,
        &bv,
        &psi,
        cap_l,
        bvc.tol_stab,
        bvc.eb_tol,
        bvc.dyadic_depth,
        bvc.window_pad,
        &path_opts,
    )
    .map_err(run_err)?;
    println!("jumps_detected = {}", bv.jumps.len());
    println!(
        "stability: checked {} exempt {} violations {} max_excess {}",
        verdict.stability.checked,
        verdict.stability.exempt,
        verdict.stability.violations.len(),
        io::fmt_f(verdict.stability.max_excess)
    );
    for (t, slope) in verdict.stability.violations.iter().take(10) {
        println!("stability_violation: t = {} slope = {}", io::fmt_f(*t), io::fmt_f(*slope));
    }
    for (i1, i2, r) in &verdict.balances {
        println!(
            "eb_residual[{} , {}] = {}",
            io::fmt_f(bv.times[*i1]),
            io::fmt_f(bv.times[*i2]),
            io::fmt_f(*r)
        );
    }
    println!("energy_scale = {}", io::fmt_f(verdict.energy_scale));
    println!("eb_max_abs_residual = {}", io::fmt_f(verdict.max_abs_residual));
    println!("verdict = {}", if verdict.passed { "PASS" } else { "FAIL" });
    Ok(())
}

/// `sweep`: a vanishing-viscosity family run with limit extraction and the
/// full convergence diagnostics.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path, strict: bool) -> CmdResult {
    let mut cfg = Config::load(config_path)?;
    if !cfg.has_section("family") {
        return Err(CliError::Config("sweep needs a [family] section".into()));
    }
    let st = setup::build_setup(&mut cfg)?;
    // A second, independent system instance for the post-run diagnostics
    // (the first moves into the family spec).
    let (diag_system, _) = setup::build_system(&mut cfg, st.grid.horizon())?;
    let law = setup::build_family_law(&mut cfg)?;
    let bvc = setup::build_bv(&mut cfg)?;
    let path_opts = setup::build_path_opts(&mut cfg)?;
    echo_config(&cfg);
    ensure_out_dir(out_dir)?;

    let spec = match law {
        setup::FamilyLaw::PToOne { ratio, count } => FamilySpec::power_family(
            st.system,
            1.0,
            ratio,
            count,
            st.initial_state.clone(),
            st.grid.clone(),
            st.solver,
        ),
        setup::FamilyLaw::EpsToZero { ratio, count, p } => FamilySpec::viscous_family(
            st.system,
            p,
            ratio,
            count,
            st.initial_state.clone(),
            st.grid.clone(),
            st.solver,
        ),
        setup::FamilyLaw::PToLimit { ratio, count, p_limit } => FamilySpec::power_family(
            st.system,
            p_limit,
            ratio,
            count,
            st.initial_state.clone(),
            st.grid.clone(),
            st.solver,
        ),
    }
    .map_err(|e| CliError::Config(e.to_string()))?;

    let results = run_family(&spec);
    let mut report: Vec<(String, String)> = Vec::new();
    let mut text = String::new();
    let _ = writeln!(text, "family sweep: {} members", spec.members.len());
    report.push(("members".into(), format!("{}", spec.members.len())));

    let mut trajectories: Vec<&Trajectory> = Vec::new();
    let mut failures = 0;
    for (i, (member, result)) in spec.members.iter().zip(&results).enumerate() {
        let key = format!("member_{}", i + 1);
        report.push((format!("{key}_label"), member.label.clone()));
        match result {
            Ok(traj) => {
                trajectories.push(traj);
                report.push((format!("{key}_status"), "ok".into()));
                let ed = ed_residual(traj, &member.psi).map_err(run_err)?;
                io::write_trajectory_csv(
                    &out_dir.join(format!("{key}.csv")),
                    traj,
                    &ed.residuals,
                )
                .map_err(io_err)?;
                let vs = velocity_slope_check(traj, &member.psi).map_err(run_err)?;
                let _ = writeln!(
                    text,
                    "{key} [{}]: ok, max|ED| {:.3e}, vs violations {}/{}",
                    member.label, ed.max_abs, vs.violations, vs.checked
                );
                report.push((format!("{key}_ed_max_abs"), io::fmt_f(ed.max_abs)));
            }
            Err(e) => {
                failures += 1;
                report.push((format!("{key}_status"), format!("error: {e}")));
                let _ = writeln!(text, "{key} [{}]: ERROR {e}", member.label);
            }
        }
    }
    if failures > 0 && strict {
        return Err(CliError::Run(format!("{failures} member(s) failed in strict mode")));
    }
    if trajectories.len() == 1 && failures == 0 {
        // Single-member family: the sweep degenerates to a flow run; there
        // is no limit to extract.
        let _ = writeln!(text, "single member: no limit extraction, flow outputs only");
        report.push(("note".into(), "single member: no limit extraction".into()));
        std::fs::write(out_dir.join("convergence_report.txt"), &text).map_err(io_err)?;
        io::write_kv(&out_dir.join("report.kv"), &report).map_err(io_err)?;
        print!("{text}");
        return Ok(());
    }
    if trajectories.len() < 2 {
        return Err(CliError::Run(format!(
            "only {} member(s) succeeded; the limit extraction needs at least two",
            trajectories.len()
        )));
    }
    let ok_trajs: Vec<Trajectory> = trajectories.iter().map(|t| (*t).clone()).collect();
    // Align the member list with the successful runs for the diagnostics.
    let ok_members: Vec<_> = spec
        .members
        .iter()
        .zip(&results)
        .filter(|(_, r)| r.is_ok())
        .map(|(m, _)| m.clone())
        .collect();
    let diag_spec = FamilySpec::new(diag_system, ok_members, spec.limit_psi, spec.solver)
        .map_err(|e| CliError::Run(e.to_string()))?;

    let (mut bv, cauchy) =
        pointwise_limit(&diag_spec.system, &ok_trajs, &st.grid, &bvc.params).map_err(run_err)?;
    for (i, m) in cauchy.max_per_pair.iter().enumerate() {
        report.push((format!("cauchy_pair_{}_max", i + 1), io::fmt_f(*m)));
    }
    let _ = writeln!(text, "cauchy gaps (max per consecutive pair): {:?}", cauchy.max_per_pair);

    let limit_growth = diag_spec.limit_growth();
    if limit_growth.is_finite() {
        let thresholds = [limit_growth + 0.1, limit_growth + 0.2, limit_growth + 0.5];
        report.push((
            "excess_thresholds".into(),
            thresholds.iter().map(|f| format!("{f}")).collect::<Vec<_>>().join(","),
        ));
        for (i, traj) in ok_trajs.iter().enumerate() {
            let vals: Vec<String> = thresholds
                .iter()
                .map(|&f| slope_excess_measure(traj, f, limit_growth).map(io::fmt_f))
                .collect::<Result<_, _>>()
                .map_err(run_err)?;
            report.push((format!("member_{}_excess", i + 1), vals.join(",")));
        }
    }

    let equi = power_equi_integrability(&ok_trajs);
    for (i, v) in equi.iter().enumerate() {
        report.push((format!("member_{}_max_tau_power", i + 1), io::fmt_f(*v)));
    }

    let liminf = dissipation_liminf_check(&diag_spec, &ok_trajs, &bv, 0.0, st.grid.horizon())
        .map_err(run_err)?;
    report.push(("dissipation_liminf_margin".into(), io::fmt_f(liminf)));
    let _ = writeln!(text, "dissipation liminf margin on [0, T]: {liminf:.6e}");

    let gaps =
        energy_convergence_check(&diag_spec.system, &ok_trajs, &bv, bvc.window_pad).map_err(run_err)?;
    report.push(("energy_gap_off_jump_last".into(), io::fmt_f(gaps.max_off_jump_last)));
    report.push(("energy_gap_off_jump_prev".into(), io::fmt_f(gaps.max_off_jump_previous)));
    report.push(("energy_gap_in_window".into(), io::fmt_f(gaps.max_in_window)));

    let spot = assumption_spotcheck(&diag_spec.system, limit_growth, &st.initial_state)
        .map_err(run_err)?;
    match &spot.c1 {
        Ok((a, b)) => {
            report.push(("c1_a".into(), format!("{a}")));
            report.push(("c1_b".into(), format!("{b}")));
            let _ = writeln!(text, "C1 coercivity: certified with a = {a}, b = {b}");
        }
        Err((t, u, v)) => {
            report.push(("c1_witness_t".into(), io::fmt_f(*t)));
            report.push(("c1_witness_value".into(), io::fmt_f(*v)));
            let _ = writeln!(text, "C1 coercivity: FAILED, witness t = {t}, u = {u:?}, value = {v}");
        }
    }
    report.push(("c3_note".into(), spot.c3_note.into()));
    report.push(("c4_pass".into(), format!("{}", spot.c4_pass)));
    report.push(("c4_worst_gap".into(), io::fmt_f(spot.c4_worst_gap)));

    if limit_growth.is_finite() {
        // Rate-independent limit: price the jumps and validate the BV
        // solution.
        for jump in bv.jumps.iter_mut() {
            let cost = tricost(
                &diag_spec.system,
                jump.time,
                &jump.u_minus,
                &jump.u_at,
                &jump.u_plus,
                limit_growth,
                &path_opts,
            )
            .map_err(run_err)?;
            jump.tricost = Some(cost);
        }
        let stability = local_stability_check(
            &diag_spec.system,
            &bv,
            limit_growth,
            bvc.tol_stab,
            bvc.window_pad,
        )
        .map_err(run_err)?;
        report.push(("jump_count".into(), format!("{}", bv.jumps.len())));
        for (i, jump) in bv.jumps.iter().enumerate() {
            let drop = diag_spec.system.energy(jump.time, &jump.u_minus)
                - diag_spec.system.energy(jump.time, &jump.u_plus);
            report.push((format!("jump_{}_time", i + 1), io::fmt_f(jump.time)));
            report.push((
                format!("jump_{}_tricost", i + 1),
                io::fmt_f(jump.tricost.as_ref().map_or(f64::NAN, |c| c.value)),
            ));
            report.push((format!("jump_{}_energy_drop", i + 1), io::fmt_f(drop)));
        }
        report.push(("stability_checked".into(), format!("{}", stability.checked)));
        report.push(("stability_violations".into(), format!("{}", stability.violations.len())));
        report.push(("stability_max_excess".into(), io::fmt_f(stability.max_excess)));
        let verdict = validate_bv_solution(
            &diag_spec.system,
            &bv,
            &diag_spec.limit_psi,
            limit_growth,
            bvc.tol_stab,
            bvc.eb_tol,
            bvc.dyadic_depth,
            bvc.window_pad,
            &path_opts,
        )
        .map_err(run_err)?;
        report.push(("eb_max_abs_residual".into(), io::fmt_f(verdict.max_abs_residual)));
        report.push(("eb_min_residual".into(), io::fmt_f(verdict.min_residual)));
        report.push(("energy_scale".into(), io::fmt_f(verdict.energy_scale)));
        let verdict_str = if verdict.passed { "PASS" } else { "FAIL" };
        report.push(("bv_verdict".into(), verdict_str.into()));
        let _ = writeln!(
            text,
            "limit candidate: {} jump(s); stability violations {}; EB max |residual| {:.4e} \
             (scale {:.4e}); BV verdict {}",
            bv.jumps.len(),
            stability.violations.len(),
            verdict.max_abs_residual,
            verdict.energy_scale,
            verdict_str
        );
    } else {
        // Superlinear limit: the candidate is expected absolutely
        // continuous; audit it against the limit dissipation.
        let ac = !bv.has_jumps();
        report.push(("limit_ac".into(), format!("{ac}")));
        report.push(("jump_count".into(), format!("{}", bv.jumps.len())));
        if ac {
            let _ = writeln!(text, "limit is absolutely continuous; jump set empty");
        } else {
            let _ = writeln!(
                text,
                "WARNING: superlinear limit with {} detected jump(s)",
                bv.jumps.len()
            );
        }
        let limit_traj = Trajectory::from_states(
            &diag_spec.system,
            &diag_spec.limit_psi,
            st.grid.clone(),
            bv.states.clone(),
        )
        .map_err(run_err)?;
        let ed = ed_residual(&limit_traj, &diag_spec.limit_psi).map_err(run_err)?;
        report.push(("limit_ed_max_abs".into(), io::fmt_f(ed.max_abs)));
        let _ = writeln!(text, "limit ED max |residual| under the limit dissipation: {:.6e}", ed.max_abs);
    }

    let _ = writeln!(
        text,
        "note: a deterministic family reports the full-sequence trend; subsequential \
         behavior is not distinguished"
    );
    report.push((
        "subsequence_note".into(),
        "full-sequence trend reported; subsequences not distinguished".into(),
    ));

    io::write_bv_csv(&out_dir.join("limit_bv.csv"), &bv).map_err(io_err)?;
    io::write_jumps_csv(&out_dir.join("jumps.csv"), &bv).map_err(io_err)?;
    std::fs::write(out_dir.join("convergence_report.txt"), &text).map_err(io_err)?;
    io::write_kv(&out_dir.join("report.kv"), &report).map_err(io_err)?;
    print!("{text}");
    Ok(())
}
