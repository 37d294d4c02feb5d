//! Variational time stepping for ψ-gradient flows.
//!
//! Each step solves the minimizing-movement problem
//! `u_{k+1} ∈ argmin τ·ψ(‖u − u_k‖_{u_k}/τ) + E(t_{k+1}, u)`,
//! which yields the one-step energy estimate
//! `E(t_{k+1}, u_{k+1}) + τ·ψ(s_k) ≤ E(t_{k+1}, u_k)` by minimality. The
//! trajectory is instrumented with discrete speeds, slopes, the admissible
//! dual bound per node (minimal selection), energies and powers, so that the
//! audit module can quantify the energy-dissipation identity afterwards.

mod inner;

pub use inner::{SolverOptions, StepDiagnostics};

use crate::dissipation::DissipationFunction;
use crate::error::{Error, Result};
use crate::systems::EvolutionSystem;

use inner::StepProblem;

/// A strictly increasing grid `0 = t_0 < … < t_N = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with the given number of steps on `[0, horizon]`.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Parameter(format!(
                "uniform grid needs horizon > 0 and steps > 0, got {horizon}, {steps}"
            )));
        }
        let nodes = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(Error::Parameter("grid needs nodes t_0 = 0 < ... < t_N".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Parameter("grid nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn step_size(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Grid with every step halved (used by refinement studies).
    pub fn halved(&self) -> Self {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(*self.nodes.last().unwrap());
        Self { nodes }
    }
}

/// A fully instrumented flow trajectory.
///
/// Node-indexed arrays have length `N+1`; the speeds are step quantities of
/// length `N`, with `speeds[k]` the discrete metric speed on
/// `[t_k, t_{k+1}]` measured in the norm at the left endpoint.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub speeds: Vec<f64>,
    pub slopes: Vec<f64>,
    pub chosen_f: Vec<f64>,
    pub energies: Vec<f64>,
    pub powers: Vec<f64>,
    pub step_diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// State at time `t` (left-constant interpolation on the grid).
    pub fn state_at(&self, t: f64) -> &[f64] {
        let nodes = self.grid.nodes();
        match nodes.binary_search_by(|n| n.partial_cmp(&t).unwrap()) {
            Ok(i) => &self.states[i],
            Err(0) => &self.states[0],
            Err(i) => &self.states[i - 1],
        }
    }

    /// Instruments externally produced states (e.g. a test curve or a
    /// resampled limit candidate) as a trajectory: discrete speeds, slopes,
    /// minimal-selection dual bounds, energies and powers are filled in.
    pub fn from_states(
        sys: &EvolutionSystem,
        psi: &DissipationFunction,
        grid: TimeGrid,
        states: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if states.len() != grid.nodes().len() {
            return Err(Error::Parameter("states must align with the grid nodes".into()));
        }
        let mut speeds = Vec::with_capacity(states.len() - 1);
        for k in 0..states.len() - 1 {
            let diff: Vec<f64> =
                states[k + 1].iter().zip(&states[k]).map(|(a, b)| a - b).collect();
            let disp = sys.metric().norm(&states[k], &diff)?;
            speeds.push(disp / grid.step_size(k));
        }
        instrument(sys, psi, grid, states, speeds, Vec::new())
    }
}

/// One minimizing-movement step: minimizes
/// `Φ(u) = τ·ψ(‖u − u_prev‖_{u_prev}/τ) + E(t_next, u)` and returns the new
/// state, guaranteeing `Φ(u) ≤ Φ(u_prev)`.
pub fn minimizing_movement_step(
    sys: &EvolutionSystem,
    psi: &DissipationFunction,
    t_next: f64,
    u_prev: &[f64],
    tau: f64,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, StepDiagnostics)> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {tau}")));
    }
    let problem = StepProblem { sys, psi, t_next, u_prev, tau };
    let spread = seed_spread(sys, psi, 0.0, u_prev, tau)?;
    problem.solve(spread, 0, opts)
}

/// Scale of the multi-start perturbations for the step leaving `(t, u)`.
///
/// The scale tracks the speed the dissipation admits at the current slope
/// (`∂ψ⁻¹` at the slope), so sticking phases stay local while steps whose
/// slope reaches the growth coefficient may search for a distant basin.
fn seed_spread(
    sys: &EvolutionSystem,
    psi: &DissipationFunction,
    t: f64,
    u: &[f64],
    tau: f64,
) -> Result<f64> {
    let slope = sys.slope(t, u)?;
    let growth = psi.growth_coefficient();
    let state_scale = 1.0 + u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let far = 4.0 * state_scale;
    let drive = if slope >= growth {
        far
    } else {
        tau * psi.inverse_subdifferential(slope)?
    };
    Ok(drive.min(far))
}

/// Runs the minimizing-movement scheme over the whole grid.
///
/// Per step, the discrete speed `s_k = ‖u_{k+1} − u_k‖_{u_k} / τ_k` is
/// recorded. The per-node dual bound follows the minimal selection rule:
/// simple power mode takes the slope itself while the node moves and caps it
/// at the growth coefficient when it rests; marginal systems minimize
/// `f ↦ s·f − P(t,u,f)` over a grid of admissible `f`.
pub fn run_flow(
    sys: &EvolutionSystem,
    psi: &DissipationFunction,
    u0: &[f64],
    grid: &TimeGrid,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    if u0.len() != sys.dimension() {
        return Err(Error::Parameter(format!(
            "initial state has dimension {}, system expects {}",
            u0.len(),
            sys.dimension()
        )));
    }
    let e0 = sys.energy(grid.nodes()[0], u0);
    if !e0.is_finite() {
        return Err(Error::Domain(format!("initial energy is not finite: {e0}")));
    }

    let n_steps = grid.steps();
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut speeds = Vec::with_capacity(n_steps);
    let mut diags = Vec::with_capacity(n_steps);
    states.push(u0.to_vec());

    let mut prev_disp = 0.0_f64;
    for k in 0..n_steps {
        let t_k = grid.nodes()[k];
        let t_next = grid.nodes()[k + 1];
        let tau = t_next - t_k;
        let u_prev = states[k].clone();
        let spread = seed_spread(sys, psi, t_k, &u_prev, tau)?
            .max(3.0 * prev_disp)
            .min(4.0 * (1.0 + u_prev.iter().fold(0.0_f64, |m, v| m.max(v.abs()))));
        let problem = StepProblem { sys, psi, t_next, u_prev: &u_prev, tau };
        let (u_next, diag) = problem.solve(spread, k, opts).map_err(|e| match e {
            Error::Step { residual, iterations, .. } => Error::Step { index: k, residual, iterations },
            other => other,
        })?;
        let diff: Vec<f64> = u_next.iter().zip(&u_prev).map(|(a, b)| a - b).collect();
        let disp = sys.metric().norm(&u_prev, &diff)?;
        speeds.push(disp / tau);
        prev_disp = disp;
        states.push(u_next);
        diags.push(diag);
    }

    instrument(sys, psi, grid.clone(), states, speeds, diags)
}

/// Computes slopes, minimal-selection dual bounds, energies and powers for
/// already computed states.
pub(crate) fn instrument(
    sys: &EvolutionSystem,
    psi: &DissipationFunction,
    grid: TimeGrid,
    states: Vec<Vec<f64>>,
    speeds: Vec<f64>,
    step_diagnostics: Vec<StepDiagnostics>,
) -> Result<Trajectory> {
    let growth = psi.growth_coefficient();
    let n = states.len();
    let mut slopes = Vec::with_capacity(n);
    let mut chosen_f = Vec::with_capacity(n);
    let mut energies = Vec::with_capacity(n);
    let mut powers = Vec::with_capacity(n);
    for k in 0..n {
        let t_k = grid.nodes()[k];
        let u_k = &states[k];
        let slope = sys.slope(t_k, u_k)?;
        let s_out = if k < speeds.len() { speeds[k] } else { 0.0 };
        let f_k = if sys.is_marginal() {
            minimal_selection_marginal(sys, t_k, u_k, s_out, slope, growth)?
        } else if s_out > 0.0 {
            slope
        } else {
            slope.min(growth)
        };
        slopes.push(slope);
        chosen_f.push(f_k);
        energies.push(sys.energy(t_k, u_k));
        powers.push(sys.power(t_k, u_k, f_k.max(slope))?);
    }
    Ok(Trajectory { grid, states, speeds, slopes, chosen_f, energies, powers, step_diagnostics })
}

/// Grid minimization of `f ↦ s·f − P(t,u,f)` over `f ∈ [slope, f_max]`,
/// ties resolved toward the smallest `f`.
fn minimal_selection_marginal(
    sys: &EvolutionSystem,
    t: f64,
    u: &[f64],
    s: f64,
    slope: f64,
    growth: f64,
) -> Result<f64> {
    let f_max = if growth.is_finite() {
        growth.max(slope)
    } else if slope > 0.0 {
        slope * 10.0
    } else {
        1.0
    };
    if f_max <= slope {
        return Ok(slope);
    }
    let mut best_f = slope;
    let mut best_obj = f64::INFINITY;
    let m = 256;
    for i in 0..=m {
        let f = slope + (f_max - slope) * i as f64 / m as f64;
        let p = sys.power(t, u, f)?;
        let obj = s * f - p;
        if obj < best_obj - 1e-15 * (1.0 + obj.abs()) {
            best_obj = obj;
            best_f = f;
        }
    }
    Ok(best_f)
}

/// One explicit Euler step along the dissipation-selected speed: the state
/// moves in the steepest-descent direction `−G(u)⁻¹ D_u E` with metric speed
/// `∂ψ⁻¹(F(t,u))`. A cross-check for the variational stepper, not the
/// primary integrator.
pub fn direct_ode_step(
    sys: &EvolutionSystem,
    psi: &DissipationFunction,
    t: f64,
    u: &[f64],
    tau: f64,
) -> Result<Vec<f64>> {
    let slope = sys.slope(t, u)?;
    if slope <= 0.0 {
        return Ok(u.to_vec());
    }
    let speed = psi.inverse_subdifferential(slope)?;
    let g = sys.grad(t, u);
    let dir = sys.metric().raise_index(u, &g)?;
    // ‖G⁻¹g‖_u equals the dual norm of g, i.e. the slope.
    Ok(u.iter().zip(&dir).map(|(ui, di)| ui - tau * speed * di / slope).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_example, BuiltinSystem, MetricStructure};
    use approx::assert_relative_eq;

    fn quadratic_1d() -> EvolutionSystem {
        make_example(
            &BuiltinSystem::Quadratic { target0: vec![0.0], target_rate: vec![0.0] },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::uniform(1.0, 0).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
        let g = TimeGrid::uniform(2.0, 4).unwrap();
        assert_eq!(g.steps(), 4);
        assert_relative_eq!(g.horizon(), 2.0);
        let h = g.halved();
        assert_eq!(h.steps(), 8);
        assert_relative_eq!(h.horizon(), 2.0);
    }

    #[test]
    fn step_examples() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let opts = SolverOptions::default();
        // (u − u_prev)/τ + u = 0 with u_prev = 1, τ = 0.5 gives u = 2/3.
        let (u, diag) = minimizing_movement_step(&sys, &psi, 0.5, &[1.0], 0.5, &opts).unwrap();
        assert!(diag.converged);
        assert_relative_eq!(u[0], 2.0 / 3.0, epsilon = 1e-10);

        // At a local minimizer of an autonomous, locally convex energy the
        // step is stationary.
        let (u, _) = minimizing_movement_step(&sys, &psi, 0.5, &[0.0], 0.5, &opts).unwrap();
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn linear_dissipation_sticks_below_the_rate() {
        // min L·|u − u_prev| + ½u² with L = 1, u_prev = 0.5: the slope
        // |E'(u_prev)| = 0.5 stays below L, so the minimizer is u_prev
        // itself (local stability, no motion).
        let sys = quadratic_1d();
        let psi = DissipationFunction::linear(1.0).unwrap();
        let opts = SolverOptions::default();
        let (u, _) = minimizing_movement_step(&sys, &psi, 0.5, &[0.5], 0.25, &opts).unwrap();
        assert_relative_eq!(u[0], 0.5, epsilon = 1e-12);
        // Above the rate the state moves until the slope hits L.
        let (u, _) = minimizing_movement_step(&sys, &psi, 0.5, &[1.8], 0.25, &opts).unwrap();
        assert_relative_eq!(u[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn quadratic_flow_matches_closed_form_recursion() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 64).unwrap();
        let tau = grid.step_size(0);
        let traj = run_flow(&sys, &psi, &[1.0], &grid, &SolverOptions::default()).unwrap();
        for (k, state) in traj.states.iter().enumerate() {
            let expect = (1.0 + tau).powi(-(k as i32));
            assert!(
                (state[0] - expect).abs() <= 1e-10,
                "state {k}: {} vs {expect}",
                state[0]
            );
        }
        // Continuum limit e^{-t} within O(τ).
        assert!((traj.final_state()[0] - (-1.0_f64).exp()).abs() <= 2.0 * tau);
    }

    #[test]
    fn one_step_energy_estimate_holds() {
        let sys = make_example(
            &BuiltinSystem::DoubleWell1d { load_a: 0.0, load_b: 1.0 },
            MetricStructure::Euclidean,
            1.6,
        )
        .unwrap();
        let psi = DissipationFunction::power(1.5).unwrap();
        let grid = TimeGrid::uniform(1.6, 100).unwrap();
        let traj = run_flow(&sys, &psi, &[-1.0], &grid, &SolverOptions::default()).unwrap();
        for k in 0..grid.steps() {
            let t_next = grid.nodes()[k + 1];
            let tau = grid.step_size(k);
            let lhs = sys.energy(t_next, &traj.states[k + 1])
                + tau * psi.eval(traj.speeds[k]).unwrap();
            let rhs = sys.energy(t_next, &traj.states[k]);
            assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()), "step {k}: {lhs} > {rhs}");
        }
    }

    #[test]
    fn stationary_start_yields_constant_trajectory() {
        let sys = quadratic_1d();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 16).unwrap();
        let traj = run_flow(&sys, &psi, &[0.0], &grid, &SolverOptions::default()).unwrap();
        assert!(traj.states.iter().all(|s| s[0] == 0.0));
        assert!(traj.speeds.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn near_rate_independent_double_well_has_fast_transition_near_fold() {
        // ℓ(t) = t ramps the double well; with ψ close to 1-homogeneous the
        // transition localizes near the fold of W' − ℓ at
        // ℓ* = 1 + 2/(3√3) ≈ 1.385.
        let sys = make_example(
            &BuiltinSystem::DoubleWell1d { load_a: 0.0, load_b: 1.0 },
            MetricStructure::Euclidean,
            1.6,
        )
        .unwrap();
        let psi = DissipationFunction::power(1.05).unwrap();
        let grid = TimeGrid::uniform(1.6, 400).unwrap();
        let traj = run_flow(&sys, &psi, &[-1.0], &grid, &SolverOptions::default()).unwrap();
        let (k_max, _) = traj
            .speeds
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) });
        let t_jump = traj.grid.nodes()[k_max];
        let fold = 1.0 + 2.0 / (3.0 * 3.0_f64.sqrt());
        assert!(
            (t_jump - fold).abs() <= 0.12,
            "transition at t = {t_jump}, fold at {fold}"
        );
        // Self-convergence: the halved grid moves the transition only slightly.
        let fine = run_flow(&sys, &psi, &[-1.0], &grid.halved(), &SolverOptions::default()).unwrap();
        let (k_fine, _) = fine
            .speeds
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bs), (i, &s)| if s > bs { (i, s) } else { (bi, bs) });
        let t_fine = fine.grid.nodes()[k_fine];
        assert!((t_jump - t_fine).abs() <= 0.05, "jump time moved: {t_jump} vs {t_fine}");
        // The landing state is on the opposite branch.
        assert!(traj.final_state()[0] > 1.0);
    }

    #[test]
    fn direct_ode_step_examples() {
        let sys = quadratic_1d();
        let p2 = DissipationFunction::power(2.0).unwrap();
        let u = direct_ode_step(&sys, &p2, 0.0, &[1.0], 0.1).unwrap();
        assert_relative_eq!(u[0], 0.9, epsilon = 1e-12);
        let u = direct_ode_step(&sys, &p2, 0.0, &[0.0], 0.1).unwrap();
        assert_eq!(u[0], 0.0);
        let p3 = DissipationFunction::power(3.0).unwrap();
        let u = direct_ode_step(&sys, &p3, 0.0, &[1.0], 0.1).unwrap();
        assert_relative_eq!(u[0], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn direct_and_variational_steppers_agree_to_first_order() {
        let sys = make_example(
            &BuiltinSystem::DoubleWell1d { load_a: 0.3, load_b: 0.5 },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 200).unwrap();
        let tau = grid.step_size(0);
        let traj = run_flow(&sys, &psi, &[0.2], &grid, &SolverOptions::default()).unwrap();
        let mut u = vec![0.2];
        for k in 0..grid.steps() {
            u = direct_ode_step(&sys, &psi, grid.nodes()[k], &u, tau).unwrap();
        }
        let gap = (u[0] - traj.final_state()[0]).abs();
        assert!(gap <= 5.0 * tau, "direct vs variational gap {gap} at τ = {tau}");
    }

    #[test]
    fn marginal_flow_runs_and_selects_admissible_bounds() {
        let sys = make_example(&BuiltinSystem::MarginalDemo, MetricStructure::Euclidean, 2.0).unwrap();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(2.0, 50).unwrap();
        let traj = run_flow(&sys, &psi, &[1.0], &grid, &SolverOptions::default()).unwrap();
        for k in 0..traj.len() {
            assert!(traj.chosen_f[k] >= traj.slopes[k] - 1e-9);
            assert!(traj.energies[k].is_finite());
        }
    }

    #[test]
    fn infinite_initial_energy_is_rejected() {
        let sys = EvolutionSystem::new(
            1,
            1.0,
            MetricStructure::Euclidean,
            Box::new(|_, u: &[f64]| 1.0 / u[0]),
            Box::new(|_, u: &[f64]| vec![-1.0 / (u[0] * u[0])]),
            Box::new(|_, _| 0.0),
        )
        .unwrap();
        let psi = DissipationFunction::power(2.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 4).unwrap();
        assert!(run_flow(&sys, &psi, &[0.0], &grid, &SolverOptions::default()).is_err());
    }
}
