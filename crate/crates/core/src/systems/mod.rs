//! Evolution systems `(X, d, E, F, P)` on ℝⁿ.
//!
//! An evolution system couples a metric structure with a time-dependent
//! energy. The slope `F(t,u)` is the dual norm of the (opposite)
//! differential of the energy and the power `P(t,u,f)` is its partial time
//! derivative; for marginal (envelope) energies both are computed from the
//! active branches of the minimization and the power depends on the
//! admissible dual bound `f ≥ F(t,u)`.

mod examples;
pub mod metric;

pub use examples::{make_example, BuiltinSystem};
pub use metric::{MetricStructure, MetricTensorFn};

use crate::error::{Error, Result};

pub type EnergyFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFieldFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// One branch `I(·,·,η)` of a marginal functional.
pub struct MarginalBranch {
    pub value: EnergyFn,
    pub grad_u: GradientFn,
    pub time_deriv: ScalarFieldFn,
}

/// A finite-index marginal functional `E(t,u) = min_η I(t,u,η)`.
///
/// The argmin set `M(t,u)` is resolved with an absolute tolerance
/// `argmin_tol · (1 + |E|)`, which keeps the active set stable near branch
/// crossings.
pub struct MarginalSystem {
    branches: Vec<MarginalBranch>,
    argmin_tol: f64,
}

impl MarginalSystem {
    pub fn new(branches: Vec<MarginalBranch>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Parameter("marginal system needs at least one branch".into()));
        }
        Ok(Self { branches, argmin_tol: 1e-9 })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Envelope value `min_η I(t,u,η)`.
    pub fn envelope(&self, t: f64, u: &[f64]) -> f64 {
        self.branches
            .iter()
            .map(|b| (b.value)(t, u))
            .fold(f64::INFINITY, f64::min)
    }

    /// Indices of branches within `argmin_tol·(1+|E|)` of the minimum.
    pub fn active_set(&self, t: f64, u: &[f64]) -> Vec<usize> {
        let min = self.envelope(t, u);
        let tol = self.argmin_tol * (1.0 + min.abs());
        self.branches
            .iter()
            .enumerate()
            .filter(|(_, b)| (b.value)(t, u) <= min + tol)
            .map(|(i, _)| i)
            .collect()
    }
}

/// How the power functional depends on the dual bound `f`.
pub enum PowerMode {
    /// `P(t,u,f) = ∂_t E(t,u)`, constant in `f`.
    Simple,
    /// Marginal power: max of `∂_t I(t,u,η)` over active branches whose
    /// differential has dual norm at most `f`.
    Marginal(MarginalSystem),
}

/// An evolution system on ℝⁿ with user-supplied closed-form derivatives.
///
/// Systems are immutable and all evaluations are pure, so they can be shared
/// across worker threads.
pub struct EvolutionSystem {
    dimension: usize,
    horizon: f64,
    metric: MetricStructure,
    energy: EnergyFn,
    grad: GradientFn,
    time_deriv: ScalarFieldFn,
    power_mode: PowerMode,
}

/// Feasibility slack for `power` at `f` slightly below the slope, matching
/// the argmin tolerance of marginal systems.
fn feasibility_tol(f: f64) -> f64 {
    1e-9 * (1.0 + f.abs())
}

impl EvolutionSystem {
    pub fn new(
        dimension: usize,
        horizon: f64,
        metric: MetricStructure,
        energy: EnergyFn,
        grad: GradientFn,
        time_deriv: ScalarFieldFn,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Parameter(format!("horizon must satisfy T > 0, got {horizon}")));
        }
        Ok(Self {
            dimension,
            horizon,
            metric,
            energy,
            grad,
            time_deriv,
            power_mode: PowerMode::Simple,
        })
    }

    /// Builds a marginal system; envelope, gradient selection and time
    /// derivative are derived from the branches.
    pub fn new_marginal(
        dimension: usize,
        horizon: f64,
        metric: MetricStructure,
        marginal: MarginalSystem,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::Parameter("dimension must be positive".into()));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Parameter(format!("horizon must satisfy T > 0, got {horizon}")));
        }
        Ok(Self {
            dimension,
            horizon,
            metric,
            energy: Box::new(|_, _| f64::NAN),
            grad: Box::new(|_, _| Vec::new()),
            time_deriv: Box::new(|_, _| f64::NAN),
            power_mode: PowerMode::Marginal(marginal),
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn metric(&self) -> &MetricStructure {
        &self.metric
    }

    pub fn is_marginal(&self) -> bool {
        matches!(self.power_mode, PowerMode::Marginal(_))
    }

    pub fn marginal(&self) -> Option<&MarginalSystem> {
        match &self.power_mode {
            PowerMode::Marginal(m) => Some(m),
            PowerMode::Simple => None,
        }
    }

    /// `E(t,u)`; for marginal systems the envelope over branches.
    pub fn energy(&self, t: f64, u: &[f64]) -> f64 {
        match &self.power_mode {
            PowerMode::Simple => (self.energy)(t, u),
            PowerMode::Marginal(m) => m.envelope(t, u),
        }
    }

    /// Spatial differential `D_u E(t,u)`.
    ///
    /// For marginal systems this is the differential of the branch that
    /// attains the minimum with the smallest dual norm, the selection the
    /// descent steps use.
    pub fn grad(&self, t: f64, u: &[f64]) -> Vec<f64> {
        match &self.power_mode {
            PowerMode::Simple => (self.grad)(t, u),
            PowerMode::Marginal(m) => {
                let active = m.active_set(t, u);
                let mut best: Option<(f64, Vec<f64>)> = None;
                for idx in active {
                    let g = (m.branches[idx].grad_u)(t, u);
                    let n = self.metric.dual_norm(u, &g).unwrap_or(f64::INFINITY);
                    if best.as_ref().map_or(true, |(bn, _)| n < *bn) {
                        best = Some((n, g));
                    }
                }
                best.map(|(_, g)| g).unwrap_or_else(|| vec![0.0; u.len()])
            }
        }
    }

    /// Partial time derivative `∂_t E(t,u)` (marginal: of the first active
    /// branch; use [`EvolutionSystem::power`] for the f-constrained value).
    pub fn time_deriv(&self, t: f64, u: &[f64]) -> f64 {
        match &self.power_mode {
            PowerMode::Simple => (self.time_deriv)(t, u),
            PowerMode::Marginal(m) => {
                let active = m.active_set(t, u);
                (m.branches[active[0]].time_deriv)(t, u)
            }
        }
    }

    /// Slope `F(t,u)`: the dual norm of the differential; for marginal
    /// systems the minimal dual norm over active branches.
    pub fn slope(&self, t: f64, u: &[f64]) -> Result<f64> {
        match &self.power_mode {
            PowerMode::Simple => self.metric.dual_norm(u, &(self.grad)(t, u)),
            PowerMode::Marginal(m) => {
                let active = m.active_set(t, u);
                let mut min = f64::INFINITY;
                for idx in active {
                    let g = (m.branches[idx].grad_u)(t, u);
                    min = min.min(self.metric.dual_norm(u, &g)?);
                }
                Ok(min)
            }
        }
    }

    /// Power `P(t,u,f)` for an admissible dual bound `f ≥ F(t,u)`.
    ///
    /// Simple systems return `∂_t E(t,u)` independently of `f`; marginal
    /// systems maximize `∂_t I(t,u,η)` over active branches with dual norm
    /// at most `f`, which is nondecreasing in `f`. Below the slope the
    /// feasible set is empty and a constraint error is returned.
    pub fn power(&self, t: f64, u: &[f64], f: f64) -> Result<f64> {
        let slope = self.slope(t, u)?;
        if f < slope - feasibility_tol(f) {
            return Err(Error::Constraint(format!(
                "power queried at f = {f} below the slope {slope}"
            )));
        }
        match &self.power_mode {
            PowerMode::Simple => Ok((self.time_deriv)(t, u)),
            PowerMode::Marginal(m) => {
                let active = m.active_set(t, u);
                let mut best = f64::NEG_INFINITY;
                for idx in active {
                    let g = (m.branches[idx].grad_u)(t, u);
                    let n = self.metric.dual_norm(u, &g)?;
                    if n <= f + feasibility_tol(f) {
                        best = best.max((m.branches[idx].time_deriv)(t, u));
                    }
                }
                if best == f64::NEG_INFINITY {
                    return Err(Error::Constraint(format!(
                        "no active branch with dual norm <= {f} at t = {t}"
                    )));
                }
                Ok(best)
            }
        }
    }
}
