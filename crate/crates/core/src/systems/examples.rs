//! Built-in example systems.

use super::metric::MetricStructure;
use super::{EvolutionSystem, MarginalBranch, MarginalSystem};
use crate::error::{Error, Result};

/// Double-well potential `W(u) = (u²−1)²/4`.
pub(crate) fn double_well(u: f64) -> f64 {
    let q = u * u - 1.0;
    0.25 * q * q
}

/// `W'(u) = u³ − u`.
pub(crate) fn double_well_prime(u: f64) -> f64 {
    u * u * u - u
}

/// Parameter sets of the shipped example systems.
#[derive(Debug, Clone, PartialEq)]
pub enum BuiltinSystem {
    /// `E(t,u) = W(u) − ℓ(t)·u` with `W(u) = (u²−1)²/4`, `ℓ(t) = a + b·t`.
    DoubleWell1d { load_a: f64, load_b: f64 },
    /// Finite-difference surrogate on `n` points with mesh `h`:
    /// `E(t,u) = Σᵢ (u_{i+1}−u_i)²/(2h) + Σᵢ (W(uᵢ) − ℓ(t)uᵢ)·h`.
    AllenCahnFd { n: usize, load_a: f64, load_b: f64 },
    /// `E(t,u) = ½‖u − a(t)‖²` with `a(t) = target0 + t·target_rate`.
    Quadratic { target0: Vec<f64>, target_rate: Vec<f64> },
    /// Two-branch marginal demo: `I(t,u,1) = u² − t`, `I(t,u,2) = u² + t`.
    MarginalDemo,
}

/// Constructs one of the shipped example systems with the given metric and
/// time horizon.
pub fn make_example(
    spec: &BuiltinSystem,
    metric: MetricStructure,
    horizon: f64,
) -> Result<EvolutionSystem> {
    match spec {
        BuiltinSystem::DoubleWell1d { load_a, load_b } => {
            let (a, b) = (*load_a, *load_b);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Parameter("load coefficients must be finite".into()));
            }
            EvolutionSystem::new(
                1,
                horizon,
                metric,
                Box::new(move |t, u: &[f64]| double_well(u[0]) - (a + b * t) * u[0]),
                Box::new(move |t, u: &[f64]| vec![double_well_prime(u[0]) - (a + b * t)]),
                Box::new(move |_t, u: &[f64]| -b * u[0]),
            )
        }
        BuiltinSystem::AllenCahnFd { n, load_a, load_b } => {
            let n = *n;
            if n == 0 {
                return Err(Error::Parameter("allen_cahn_fd needs n >= 1".into()));
            }
            let h = if n > 1 { 1.0 / (n as f64 - 1.0) } else { 1.0 };
            let (a, b) = (*load_a, *load_b);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::Parameter("load coefficients must be finite".into()));
            }
            let energy = move |t: f64, u: &[f64]| {
                let load = a + b * t;
                let mut e = 0.0;
                for i in 0..u.len().saturating_sub(1) {
                    let d = u[i + 1] - u[i];
                    e += d * d / (2.0 * h);
                }
                for &ui in u {
                    e += (double_well(ui) - load * ui) * h;
                }
                e
            };
            let grad = move |t: f64, u: &[f64]| {
                let load = a + b * t;
                let m = u.len();
                let mut g = vec![0.0; m];
                for i in 0..m.saturating_sub(1) {
                    let d = (u[i + 1] - u[i]) / h;
                    g[i] -= d;
                    g[i + 1] += d;
                }
                for (i, &ui) in u.iter().enumerate() {
                    g[i] += (double_well_prime(ui) - load) * h;
                }
                g
            };
            let dt = move |_t: f64, u: &[f64]| -b * u.iter().sum::<f64>() * h;
            EvolutionSystem::new(n, horizon, metric, Box::new(energy), Box::new(grad), Box::new(dt))
        }
        BuiltinSystem::Quadratic { target0, target_rate } => {
            if target0.len() != target_rate.len() || target0.is_empty() {
                return Err(Error::Parameter(
                    "quadratic target and rate must have equal positive length".into(),
                ));
            }
            let (t0, tr) = (target0.clone(), target_rate.clone());
            let target = move |t: f64| -> Vec<f64> {
                t0.iter().zip(&tr).map(|(a0, a1)| a0 + t * a1).collect()
            };
            let tgt_e = target.clone();
            let tgt_g = target.clone();
            let tgt_p = target;
            let rate = target_rate.clone();
            EvolutionSystem::new(
                target0.len(),
                horizon,
                metric,
                Box::new(move |t, u: &[f64]| {
                    let a = tgt_e(t);
                    0.5 * u.iter().zip(&a).map(|(x, ai)| (x - ai) * (x - ai)).sum::<f64>()
                }),
                Box::new(move |t, u: &[f64]| {
                    let a = tgt_g(t);
                    u.iter().zip(&a).map(|(x, ai)| x - ai).collect()
                }),
                Box::new(move |t, u: &[f64]| {
                    let a = tgt_p(t);
                    -u.iter().zip(&a).zip(&rate).map(|((x, ai), ri)| ri * (x - ai)).sum::<f64>()
                }),
            )
        }
        BuiltinSystem::MarginalDemo => {
            let branches = vec![
                MarginalBranch {
                    value: Box::new(|t, u: &[f64]| u[0] * u[0] - t),
                    grad_u: Box::new(|_t, u: &[f64]| vec![2.0 * u[0]]),
                    time_deriv: Box::new(|_t, _u: &[f64]| -1.0),
                },
                MarginalBranch {
                    value: Box::new(|t, u: &[f64]| u[0] * u[0] + t),
                    grad_u: Box::new(|_t, u: &[f64]| vec![2.0 * u[0]]),
                    time_deriv: Box::new(|_t, _u: &[f64]| 1.0),
                },
            ];
            EvolutionSystem::new_marginal(1, horizon, metric, MarginalSystem::new(branches)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quadratic_energy_at_origin_target() {
        let sys = make_example(
            &BuiltinSystem::Quadratic { target0: vec![0.0, 0.0], target_rate: vec![0.0, 0.0] },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(sys.energy(0.0, &[1.0, 0.0]), 0.5);
    }

    #[test]
    fn double_well_bottom_is_critical() {
        let sys = make_example(
            &BuiltinSystem::DoubleWell1d { load_a: 0.0, load_b: 0.0 },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap();
        assert_eq!(sys.energy(0.0, &[1.0]), 0.0);
        assert_eq!(sys.slope(0.0, &[1.0]).unwrap(), 0.0);
    }

    #[test]
    fn allen_cahn_constant_well_state_has_zero_energy() {
        let sys = make_example(
            &BuiltinSystem::AllenCahnFd { n: 3, load_a: 0.0, load_b: 0.0 },
            MetricStructure::Euclidean,
            1.0,
        )
        .unwrap();
        assert_eq!(sys.energy(0.0, &[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(make_example(
            &BuiltinSystem::AllenCahnFd { n: 0, load_a: 0.0, load_b: 0.0 },
            MetricStructure::Euclidean,
            1.0
        )
        .is_err());
        assert!(make_example(
            &BuiltinSystem::Quadratic { target0: vec![0.0], target_rate: vec![] },
            MetricStructure::Euclidean,
            1.0
        )
        .is_err());
    }
}
