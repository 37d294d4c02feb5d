//! Metric dissipation functions.
//!
//! A dissipation function is a convex nondecreasing `ψ : [0,∞) → [0,∞)` with
//! `ψ(0) = 0`. Its growth coefficient `L = lim_{v→∞} ψ(v)/v` separates the
//! superlinear case (`L = ∞`, absolutely continuous flows) from the
//! linear-growth case (`L < ∞`, rate-independent behaviour with jumps in the
//! limit). The Legendre conjugate `ψ*(f) = sup_{v≥0} (fv − ψ(v))` is finite
//! exactly up to `L`.

use crate::error::{Error, Result};

/// Tolerance (in `v`) of the golden-section conjugate fallback.
const GOLDEN_TOL: f64 = 1e-10;

/// Built-in dissipation families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// `ψ(v) = v^p / p`, `p > 1`. Superlinear.
    Power { p: f64 },
    /// `ψ(v) = v + ε v^p`, `p > 1`, `ε ≥ 0`. Superlinear for `ε > 0`.
    ViscousLinear { eps: f64, p: f64 },
    /// `ψ(v) = ∫_0^v (r ∧ L) dr`: quadratic below the cap, linear above.
    CappedQuadratic { cap: f64 },
    /// `ψ(v) = √(1+v²) − 1`, shifted so that `ψ(0) = 0`. Growth 1.
    PseudoRelativistic,
    /// `ψ(v) = L v`. The rate-independent (1-homogeneous) case.
    Linear { rate: f64 },
}

/// A convex metric dissipation function with its derived growth coefficient.
///
/// Values are immutable after construction; every operation is pure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationFunction {
    family: Family,
    growth: f64,
}

fn check_nonneg_finite(x: f64, what: &str) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("{what} must be finite and >= 0, got {x}")));
    }
    Ok(())
}

impl DissipationFunction {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Parameter(format!("power exponent must satisfy p > 1, got {p}")));
        }
        Ok(Self { family: Family::Power { p }, growth: f64::INFINITY })
    }

    pub fn viscous_linear(eps: f64, p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Parameter(format!("viscous exponent must satisfy p > 1, got {p}")));
        }
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Parameter(format!("viscosity must satisfy eps >= 0, got {eps}")));
        }
        let growth = if eps > 0.0 { f64::INFINITY } else { 1.0 };
        Ok(Self { family: Family::ViscousLinear { eps, p }, growth })
    }

    pub fn capped_quadratic(cap: f64) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::Parameter(format!("cap must satisfy L > 0, got {cap}")));
        }
        Ok(Self { family: Family::CappedQuadratic { cap }, growth: cap })
    }

    pub fn pseudo_relativistic() -> Self {
        Self { family: Family::PseudoRelativistic, growth: 1.0 }
    }

    pub fn linear(rate: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Parameter(format!("rate must satisfy L > 0, got {rate}")));
        }
        Ok(Self { family: Family::Linear { rate }, growth: rate })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// `L = lim_{v→∞} ψ(v)/v`; `+∞` exactly for the superlinear families.
    pub fn growth_coefficient(&self) -> f64 {
        self.growth
    }

    pub fn is_superlinear(&self) -> bool {
        self.growth.is_infinite()
    }

    /// Evaluates `ψ(v)` by the family's closed form.
    pub fn eval(&self, v: f64) -> Result<f64> {
        check_nonneg_finite(v, "speed v")?;
        Ok(self.eval_unchecked(v))
    }

    fn eval_unchecked(&self, v: f64) -> f64 {
        match self.family {
            Family::Power { p } => v.powf(p) / p,
            Family::ViscousLinear { eps, p } => v + eps * v.powf(p),
            Family::CappedQuadratic { cap } => {
                if v <= cap {
                    0.5 * v * v
                } else {
                    cap * v - 0.5 * cap * cap
                }
            }
            Family::PseudoRelativistic => (1.0 + v * v).sqrt() - 1.0,
            Family::Linear { rate } => rate * v,
        }
    }

    /// Legendre conjugate `ψ*(f) = sup_{v≥0} (fv − ψ(v))`.
    ///
    /// Returns `+∞` exactly when `f` exceeds the growth coefficient. All
    /// families use closed forms except `ViscousLinear`, which falls back to
    /// golden-section maximization of the concave map `v ↦ fv − ψ(v)`.
    pub fn conjugate(&self, f: f64) -> Result<f64> {
        check_nonneg_finite(f, "dual variable f")?;
        if f > self.growth {
            return Ok(f64::INFINITY);
        }
        let value = match self.family {
            Family::Power { p } => {
                let q = p / (p - 1.0);
                f.powf(q) / q
            }
            Family::ViscousLinear { eps, .. } => {
                if f <= 1.0 {
                    // fv − v − εv^p is maximal at v = 0.
                    0.0
                } else {
                    debug_assert!(eps > 0.0, "eps = 0 has growth 1, handled above");
                    self.conjugate_golden_section(f)
                }
            }
            Family::CappedQuadratic { .. } => 0.5 * f * f,
            Family::PseudoRelativistic => 1.0 - (1.0 - f * f).max(0.0).sqrt(),
            Family::Linear { .. } => 0.0,
        };
        Ok(value)
    }

    /// Golden-section maximization of `v ↦ fv − ψ(v)` on a bracket found by
    /// geometric expansion. The maximand is concave for convex ψ.
    fn conjugate_golden_section(&self, f: f64) -> f64 {
        let g = |v: f64| f * v - self.eval_unchecked(v);
        // Expand until the maximand decreases.
        let mut hi = 1.0;
        while g(2.0 * hi) > g(hi) {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        hi *= 2.0;
        let inv_phi = 0.5 * (5.0_f64.sqrt() - 1.0);
        let (mut a, mut b) = (0.0_f64, hi);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        let (mut gc, mut gd) = (g(c), g(d));
        while (b - a) > GOLDEN_TOL * (1.0 + b.abs()) {
            if gc > gd {
                b = d;
                d = c;
                gd = gc;
                c = b - inv_phi * (b - a);
                gc = g(c);
            } else {
                a = c;
                c = d;
                gc = gd;
                d = a + inv_phi * (b - a);
                gd = g(d);
            }
        }
        g(0.5 * (a + b)).max(0.0)
    }

    /// Convex subdifferential `∂ψ(v) = [ψ'(v−), ψ'(v+)]`.
    ///
    /// At `v = 0` this is `[0, ψ'(0+)]`; elsewhere the families are
    /// differentiable and the interval degenerates to a point.
    pub fn subdifferential(&self, v: f64) -> Result<(f64, f64)> {
        check_nonneg_finite(v, "speed v")?;
        let derivative = match self.family {
            Family::Power { p } => v.powf(p - 1.0),
            Family::ViscousLinear { eps, p } => 1.0 + eps * p * v.powf(p - 1.0),
            Family::CappedQuadratic { cap } => v.min(cap),
            Family::PseudoRelativistic => v / (1.0 + v * v).sqrt(),
            Family::Linear { rate } => rate,
        };
        if v == 0.0 {
            Ok((0.0, derivative))
        } else {
            Ok((derivative, derivative))
        }
    }

    /// Smallest `v ≥ 0` with `f ∈ ∂ψ(v)`, defined for `0 ≤ f < L`.
    ///
    /// This is the speed selected by the Fenchel equality case `ψ(v) + ψ*(f)
    /// = fv`; the direct-ODE stepper drives the state at this speed.
    pub fn inverse_subdifferential(&self, f: f64) -> Result<f64> {
        check_nonneg_finite(f, "dual variable f")?;
        if f >= self.growth {
            return Err(Error::Range(format!(
                "no finite speed: f = {f} is not below the growth coefficient {}",
                self.growth
            )));
        }
        let v = match self.family {
            Family::Power { p } => f.powf(1.0 / (p - 1.0)),
            Family::ViscousLinear { eps, p } => {
                if f <= 1.0 {
                    0.0
                } else {
                    ((f - 1.0) / (eps * p)).powf(1.0 / (p - 1.0))
                }
            }
            Family::CappedQuadratic { .. } => f,
            Family::PseudoRelativistic => f / (1.0 - f * f).sqrt(),
            Family::Linear { .. } => 0.0,
        };
        Ok(v)
    }
}
