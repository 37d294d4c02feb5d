//! Energy-dissipation audits along instrumented trajectories.
//!
//! The cumulative residual
//! `R_k = E_k + Σ_{j<k} τ_j (ψ(s_j) + ψ*(F_j)) − E_0 − Σ_{j<k} τ_j P_j`
//! quantifies the ψ-ψ* energy-dissipation identity: it tends to zero under
//! grid refinement for a ψ-gradient flow and stays nonnegative (up to
//! quadrature error) along arbitrary curves of an upper-gradient system,
//! since the opposite inequality always holds. The ψ* and power integrals
//! use the trapezoid rule on node values; ψ(s_j) uses the step-constant
//! discrete speed, matching the scheme's own discretization.

use crate::dissipation::DissipationFunction;
use crate::error::{Error, Result};
use crate::flow::Trajectory;
use crate::systems::EvolutionSystem;

/// Default relative tolerance of the velocity–slope check.
fn vs_tolerance(speed: f64) -> f64 {
    1e-6 * (1.0 + speed)
}

/// Cumulative energy-dissipation residuals per node.
#[derive(Debug, Clone)]
pub struct EdResidualReport {
    /// `R_k` aligned with the trajectory nodes; `R_0 = 0`.
    pub residuals: Vec<f64>,
    pub max_abs: f64,
    /// Nodes whose ψ*(F) term is infinite; their contribution is skipped and
    /// reported here instead of aborting the audit.
    pub infinite_conjugate_nodes: Vec<usize>,
}

/// Outcome of the velocity–slope relation check `F_k ∈ ∂ψ(s_{k−1})`.
#[derive(Debug, Clone, Copy)]
pub struct VelocitySlopeReport {
    pub checked: usize,
    pub violations: usize,
    pub max_gap: f64,
}

/// Full audit of one trajectory.
#[derive(Debug, Clone)]
pub struct AuditReport {
    pub ed: EdResidualReport,
    pub velocity_slope: VelocitySlopeReport,
    /// Worst chain-rule margin over all sub-intervals of the trajectory.
    pub chain_margin: f64,
    /// Quadrature scheme tag for the report files.
    pub quadrature: &'static str,
}

/// Computes the cumulative ED residuals of a trajectory.
pub fn ed_residual(traj: &Trajectory, psi: &DissipationFunction) -> Result<EdResidualReport> {
    let n = traj.len();
    let mut conj = Vec::with_capacity(n);
    let mut infinite_conjugate_nodes = Vec::new();
    for k in 0..n {
        let c = psi.conjugate(traj.chosen_f[k])?;
        if c.is_finite() {
            conj.push(c);
        } else {
            infinite_conjugate_nodes.push(k);
            conj.push(0.0);
        }
    }
    let mut residuals = Vec::with_capacity(n);
    residuals.push(0.0);
    let mut acc = 0.0;
    for j in 0..n - 1 {
        let tau = traj.grid.step_size(j);
        let diss = tau * psi.eval(traj.speeds[j])? + tau * 0.5 * (conj[j] + conj[j + 1]);
        let pow = tau * 0.5 * (traj.powers[j] + traj.powers[j + 1]);
        acc += diss - pow;
        residuals.push(traj.energies[j + 1] - traj.energies[0] + acc);
    }
    let max_abs = residuals.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    if !max_abs.is_finite() {
        return Err(Error::Domain("non-finite residual in ED audit".into()));
    }
    Ok(EdResidualReport { residuals, max_abs, infinite_conjugate_nodes })
}

/// Checks `F_k ∈ ∂ψ(s_{k−1})` at interior nodes within `1e-6·(1+s)`.
///
/// The dual bound at a node is paired with the speed of the incoming step:
/// the implicit step's optimality condition relates the differential at the
/// arrival point to the displacement that produced it.
pub fn velocity_slope_check(
    traj: &Trajectory,
    psi: &DissipationFunction,
) -> Result<VelocitySlopeReport> {
    let n = traj.len();
    let mut violations = 0;
    let mut max_gap = 0.0_f64;
    let mut checked = 0;
    for k in 1..n.saturating_sub(1) {
        let s = traj.speeds[k - 1];
        let (lo, hi) = psi.subdifferential(s)?;
        let f = traj.chosen_f[k];
        let gap = (lo - f).max(f - hi).max(0.0);
        checked += 1;
        max_gap = max_gap.max(gap);
        if gap > vs_tolerance(s) {
            violations += 1;
        }
    }
    Ok(VelocitySlopeReport { checked, violations, max_gap })
}

/// A sampled time-ordered curve `r ↦ (t(r), u(r))` through the state space.
#[derive(Debug, Clone)]
pub struct SampledCurve {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl SampledCurve {
    pub fn new(times: Vec<f64>, states: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != states.len() || times.len() < 2 {
            return Err(Error::Parameter("curve needs >= 2 aligned samples".into()));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Parameter("curve times must be nondecreasing".into()));
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Worst chain-rule margin
/// `min_{[α,β]} { E(q(β)) + ∫F|u̇| − E(q(α)) − ∫P·ṫ }`
/// over all sub-intervals of the sampled curve (trapezoid quadrature).
/// Nonnegative up to tolerance for upper-gradient systems.
pub fn chain_rule_check(
    sys: &EvolutionSystem,
    curve: &SampledCurve,
    f_choice: &[f64],
) -> Result<f64> {
    let n = curve.len();
    if f_choice.len() != n {
        return Err(Error::Parameter("F choice must align with the curve samples".into()));
    }
    let mut slopes = Vec::with_capacity(n);
    for k in 0..n {
        let slope = sys.slope(curve.times[k], &curve.states[k])?;
        if f_choice[k] < slope - 1e-9 * (1.0 + slope) {
            return Err(Error::Constraint(format!(
                "F choice {} below the slope {slope} at sample {k}",
                f_choice[k]
            )));
        }
        slopes.push(slope);
    }
    let powers: Vec<f64> = (0..n)
        .map(|k| sys.power(curve.times[k], &curve.states[k], f_choice[k].max(slopes[k])))
        .collect::<Result<_>>()?;
    // G_k = E(q_k) + Σ_{j<k} (∫F|u̇| − ∫P·ṫ); the worst margin over interval
    // pairs is min_k (G_k − max_{j<=k} G_j).
    let mut g = sys.energy(curve.times[0], &curve.states[0]);
    let mut running_max = g;
    let mut margin = 0.0_f64;
    for j in 0..n - 1 {
        let d = sys.metric().distance(&curve.states[j], &curve.states[j + 1])?;
        let dt = curve.times[j + 1] - curve.times[j];
        let f_term = 0.5 * (f_choice[j] + f_choice[j + 1]) * d;
        let p_term = 0.5 * (powers[j] + powers[j + 1]) * dt;
        g += f_term - p_term
            + sys.energy(curve.times[j + 1], &curve.states[j + 1])
            - sys.energy(curve.times[j], &curve.states[j]);
        margin = margin.min(g - running_max);
        running_max = running_max.max(g);
    }
    Ok(margin)
}

/// Runs the full audit of a trajectory: ED residuals, velocity–slope check,
/// and the chain-rule margin along the trajectory itself with `F` equal to
/// the recorded dual bounds.
pub fn audit_trajectory(
    sys: &EvolutionSystem,
    traj: &Trajectory,
    psi: &DissipationFunction,
) -> Result<AuditReport> {
    let ed = ed_residual(traj, psi)?;
    let velocity_slope = velocity_slope_check(traj, psi)?;
    let curve = SampledCurve::new(traj.grid.nodes().to_vec(), traj.states.clone())?;
    let f_choice: Vec<f64> = traj
        .chosen_f
        .iter()
        .zip(&traj.slopes)
        .map(|(f, s)| f.max(*s))
        .collect();
    let chain_margin = chain_rule_check(sys, &curve, &f_choice)?;
    Ok(AuditReport { ed, velocity_slope, chain_margin, quadrature: "trapezoid" })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{run_flow, SolverOptions, TimeGrid};
    use crate::systems::{make_example, BuiltinSystem, MetricStructure};

    fn quadratic_1d() -> EvolutionSystem {
        make_example(
            &BuiltinSystem::Quadratic { target0: vec![0.0], target_rate: vec![0.0] },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn constant_trajectory_at_critical_point_has_zero_residual() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let traj = run_flow(&sys, &psi, &[0.0], &grid, &SolverOptions::default()).unwrap();
        let report = ed_residual(&traj, &psi).unwrap();
        assert!(report.residuals.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn frozen_state_with_nonzero_gradient_accumulates_conjugate() {
        // u ≡ 1 under E = ½u²: only the ψ*(F) = ½F² term accumulates, so
        // R_k = Σ τ ψ*(1) = t_k/2, strictly increasing.
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let states = vec![vec![1.0]; 11];
        let traj = Trajectory::from_states(&sys, &psi, grid.clone(), states).unwrap();
        let report = ed_residual(&traj, &psi).unwrap();
        for (k, &r) in report.residuals.iter().enumerate() {
            let expect = 0.5 * grid.nodes()[k];
            assert!((r - expect).abs() <= 1e-12, "node {k}: {r} vs {expect}");
        }
        for w in report.residuals.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn quadratic_flow_residual_is_first_order_in_tau() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let opts = SolverOptions::default();
        let coarse = TimeGrid::uniform(1.0, 64).unwrap();
        let t1 = run_flow(&sys, &psi, &[1.0], &coarse, &opts).unwrap();
        let r1 = ed_residual(&t1, &psi).unwrap().max_abs;
        let t2 = run_flow(&sys, &psi, &[1.0], &coarse.halved(), &opts).unwrap();
        let r2 = ed_residual(&t2, &psi).unwrap().max_abs;
        assert!(r1 <= 1.0 * coarse.step_size(0), "residual {r1} not O(τ)");
        assert!(r1 / r2 >= 1.5, "halving τ gave ratio {}", r1 / r2);
    }

    #[test]
    fn velocity_slope_holds_on_flows_and_flags_adversarial_data() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let traj = run_flow(&sys, &psi, &[1.0], &grid, &SolverOptions::default()).unwrap();
        let vs = velocity_slope_check(&traj, &psi).unwrap();
        assert_eq!(vs.violations, 0, "max gap {}", vs.max_gap);

        // Sticking under ψ = L v: any F in [0, L] passes at zero speed.
        let lin = DissipationFunction::linear(1.0).unwrap();
        let stuck = Trajectory::from_states(&sys, &lin, grid.clone(), vec![vec![0.5]; 51]).unwrap();
        let vs = velocity_slope_check(&stuck, &lin).unwrap();
        assert_eq!(vs.violations, 0);

        // Adversarial: unit speed with F = 0 under ψ = v²/2 must be flagged
        // with gap 1.
        let mut adv = run_flow(&sys, &psi, &[1.0], &grid, &SolverOptions::default()).unwrap();
        for k in 0..adv.len() {
            adv.chosen_f[k] = 0.0;
        }
        for s in adv.speeds.iter_mut() {
            *s = 1.0;
        }
        let vs = velocity_slope_check(&adv, &psi).unwrap();
        assert_eq!(vs.violations, vs.checked);
        assert!((vs.max_gap - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn chain_rule_margins() {
        let sys = quadratic_1d();
        // Constant curve: margin 0.
        let c = SampledCurve::new(vec![0.0, 0.5, 1.0], vec![vec![0.3]; 3]).unwrap();
        let f: Vec<f64> = (0..3).map(|_| sys.slope(0.0, &[0.3]).unwrap()).collect();
        assert_eq!(chain_rule_check(&sys, &c, &f).unwrap(), 0.0);

        // Straight segment through the quadratic energy with F = slope: the
        // margin stays above -1e-6 at 10³ samples.
        let n = 1000;
        let times: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let states: Vec<Vec<f64>> = (0..n).map(|i| vec![1.0 - 2.0 * i as f64 / (n - 1) as f64]).collect();
        let curve = SampledCurve::new(times.clone(), states.clone()).unwrap();
        let slopes: Vec<f64> = (0..n)
            .map(|i| sys.slope(times[i], &states[i]).unwrap())
            .collect();
        let margin = chain_rule_check(&sys, &curve, &slopes).unwrap();
        assert!(margin >= -1e-6, "margin {margin}");

        // Raising F strictly increases the margin.
        let raised: Vec<f64> = slopes.iter().map(|s| s + 1.0).collect();
        let margin_up = chain_rule_check(&sys, &curve, &raised).unwrap();
        assert!(margin_up > margin);

        // F below the slope is a constraint error.
        let bad: Vec<f64> = slopes.iter().map(|s| (s - 0.5).max(0.0)).collect();
        assert!(chain_rule_check(&sys, &curve, &bad).is_err());
    }

    #[test]
    fn audit_is_deterministic() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 32).unwrap();
        let traj = run_flow(&sys, &psi, &[1.0], &grid, &SolverOptions::default()).unwrap();
        let a = audit_trajectory(&sys, &traj, &psi).unwrap();
        let b = audit_trajectory(&sys, &traj, &psi).unwrap();
        assert_eq!(a.ed.residuals, b.ed.residuals);
        assert_eq!(a.chain_margin, b.chain_margin);
    }

    #[test]
    fn infinite_conjugate_terms_are_reported_not_fatal() {
        // Dual bounds beyond the linear growth rate: ψ*(F) is infinite
        // there; the audit records the nodes and keeps going.
        let sys = quadratic_1d();
        let lin = DissipationFunction::linear(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        let mut traj = Trajectory::from_states(&sys, &lin, grid, vec![vec![2.0]; 5]).unwrap();
        for f in traj.chosen_f.iter_mut() {
            *f = 2.0;
        }
        let report = ed_residual(&traj, &lin).unwrap();
        assert_eq!(report.infinite_conjugate_nodes.len(), 5);
        assert!(report.residuals.iter().all(|r| r.is_finite()));
    }
}
