//! Metric structures on the state space.
//!
//! A metric structure assigns to every base point `u` a norm on tangent
//! vectors. Distances are exact for the flat structures and are computed by
//! straight-segment quadrature (with Richardson refinement) in the
//! Riemannian case, where the segment is an upper bound of the geodesic
//! distance.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Map from a state to a symmetric positive-definite matrix.
pub type MetricTensorFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Norm family used on tangent spaces.
#[derive(Clone)]
pub enum MetricStructure {
    /// The standard Euclidean norm at every base point.
    Euclidean,
    /// `‖v‖² = Σ wᵢ vᵢ²` with positive weights.
    DiagonalWeights(Vec<f64>),
    /// `‖v‖²_u = vᵀ G(u) v` with a state-dependent SPD tensor.
    Riemannian(MetricTensorFn),
}

impl fmt::Debug for MetricStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricStructure::Euclidean => write!(f, "Euclidean"),
            MetricStructure::DiagonalWeights(w) => write!(f, "DiagonalWeights({w:?})"),
            MetricStructure::Riemannian(_) => write!(f, "Riemannian(<tensor fn>)"),
        }
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

impl MetricStructure {
    pub fn diagonal(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Parameter("diagonal weights must be finite and > 0".into()));
        }
        Ok(MetricStructure::DiagonalWeights(weights))
    }

    pub fn riemannian<G>(tensor: G) -> Self
    where
        G: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        MetricStructure::Riemannian(Arc::new(tensor))
    }

    /// Norm of the tangent vector `v` at base point `u`.
    pub fn norm(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        check_dims(u, v)?;
        match self {
            MetricStructure::Euclidean => Ok(v.iter().map(|x| x * x).sum::<f64>().sqrt()),
            MetricStructure::DiagonalWeights(w) => {
                check_dims(v, w)?;
                Ok(v.iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>().sqrt())
            }
            MetricStructure::Riemannian(g) => {
                let gm = g(u);
                if gm.nrows() != u.len() || gm.ncols() != u.len() {
                    return Err(Error::Metric("metric tensor has wrong shape".into()));
                }
                let vv = DVector::from_column_slice(v);
                let q = (&vv.transpose() * &gm * &vv)[(0, 0)];
                let v2 = vv.norm_squared();
                if q < 0.0 || (q == 0.0 && v2 > 0.0) {
                    return Err(Error::Metric(format!(
                        "non-positive quadratic form: v'Gv = {q} at |v|² = {v2}"
                    )));
                }
                Ok(q.sqrt())
            }
        }
    }

    /// Dual norm of the covector `xi` at base point `u`:
    /// `sup { ⟨ξ, v⟩ : ‖v‖_u ≤ 1 }`.
    pub fn dual_norm(&self, u: &[f64], xi: &[f64]) -> Result<f64> {
        check_dims(u, xi)?;
        match self {
            MetricStructure::Euclidean => Ok(xi.iter().map(|x| x * x).sum::<f64>().sqrt()),
            MetricStructure::DiagonalWeights(w) => {
                check_dims(xi, w)?;
                Ok(xi.iter().zip(w).map(|(x, wi)| x * x / wi).sum::<f64>().sqrt())
            }
            MetricStructure::Riemannian(g) => {
                let gm = g(u);
                if gm.nrows() != u.len() || gm.ncols() != u.len() {
                    return Err(Error::Metric("metric tensor has wrong shape".into()));
                }
                let chol = gm.clone().cholesky().ok_or_else(|| {
                    Error::Metric("metric tensor is not positive definite".into())
                })?;
                let xv = DVector::from_column_slice(xi);
                let solved = chol.solve(&xv);
                let q = xv.dot(&solved);
                Ok(q.max(0.0).sqrt())
            }
        }
    }

    /// Applies `G(u)⁻¹` to a covector, turning a differential into the
    /// steepest-descent tangent direction.
    pub fn raise_index(&self, u: &[f64], xi: &[f64]) -> Result<Vec<f64>> {
        check_dims(u, xi)?;
        match self {
            MetricStructure::Euclidean => Ok(xi.to_vec()),
            MetricStructure::DiagonalWeights(w) => {
                check_dims(xi, w)?;
                Ok(xi.iter().zip(w).map(|(x, wi)| x / wi).collect())
            }
            MetricStructure::Riemannian(g) => {
                let gm = g(u);
                let chol = gm.cholesky().ok_or_else(|| {
                    Error::Metric("metric tensor is not positive definite".into())
                })?;
                let solved = chol.solve(&DVector::from_column_slice(xi));
                Ok(solved.as_slice().to_vec())
            }
        }
    }

    /// Applies `G(u)` to a tangent vector (lowers the index).
    pub fn lower_index(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dims(u, v)?;
        match self {
            MetricStructure::Euclidean => Ok(v.to_vec()),
            MetricStructure::DiagonalWeights(w) => {
                check_dims(v, w)?;
                Ok(v.iter().zip(w).map(|(x, wi)| x * wi).collect())
            }
            MetricStructure::Riemannian(g) => {
                let gm = g(u);
                let prod = gm * DVector::from_column_slice(v);
                Ok(prod.as_slice().to_vec())
            }
        }
    }

    /// Distance between two states.
    ///
    /// Exact for `Euclidean` and `DiagonalWeights`; for `Riemannian` this is
    /// the straight-segment length `∫₀¹ ‖u1−u0‖_{γ(s)} ds` computed by
    /// Simpson quadrature with Richardson refinement, an upper bound of the
    /// geodesic distance.
    pub fn distance(&self, u0: &[f64], u1: &[f64]) -> Result<f64> {
        check_dims(u0, u1)?;
        match self {
            MetricStructure::Euclidean | MetricStructure::DiagonalWeights(_) => {
                let diff: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
                self.norm(u0, &diff)
            }
            MetricStructure::Riemannian(_) => {
                let diff: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| a - b).collect();
                if diff.iter().all(|&d| d == 0.0) {
                    return Ok(0.0);
                }
                let speed = |s: f64| -> Result<f64> {
                    let point: Vec<f64> =
                        u0.iter().zip(u1).map(|(a, b)| a + s * (b - a)).collect();
                    self.norm(&point, &diff)
                };
                let simpson = |m: usize| -> Result<f64> {
                    let h = 1.0 / m as f64;
                    let mut acc = speed(0.0)? + speed(1.0)?;
                    for i in 1..m {
                        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                        acc += w * speed(i as f64 * h)?;
                    }
                    Ok(acc * h / 3.0)
                };
                let mut m = 8;
                let mut prev = simpson(m)?;
                loop {
                    m *= 2;
                    let cur = simpson(m)?;
                    let richardson = cur + (cur - prev) / 15.0;
                    if (cur - prev).abs() <= 1e-12 * (1.0 + cur.abs()) || m >= 1 << 14 {
                        return Ok(richardson);
                    }
                    prev = cur;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn norm_examples() {
        let e = MetricStructure::Euclidean;
        assert_relative_eq!(e.norm(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        let d = MetricStructure::diagonal(vec![4.0]).unwrap();
        assert_relative_eq!(d.norm(&[0.0], &[2.0]).unwrap(), 4.0);
        let r = MetricStructure::riemannian(|_u: &[f64]| DMatrix::from_diagonal_element(1, 1, 4.0));
        assert_relative_eq!(r.norm(&[7.0], &[1.0]).unwrap(), 2.0);
    }

    #[test]
    fn dual_norm_examples() {
        let e = MetricStructure::Euclidean;
        assert_eq!(e.dual_norm(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 0.0);
        let r = MetricStructure::riemannian(|_u: &[f64]| DMatrix::from_diagonal_element(1, 1, 4.0));
        assert_relative_eq!(r.dual_norm(&[0.0], &[2.0]).unwrap(), 1.0);
    }

    #[test]
    fn dual_norm_matches_unit_ball_sup_oracle() {
        // Random SPD 3x3 tensor; the dual norm must match the sup of ⟨ξ, v⟩
        // over random unit-ball directions within 1e-3 relative.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(3, 3);
        let metric = MetricStructure::riemannian(move |_u: &[f64]| spd.clone());
        let u = [0.3, -0.1, 0.8];
        let xi = [0.7, -1.2, 0.4];
        let exact = metric.dual_norm(&u, &xi).unwrap();
        let mut best = 0.0_f64;
        for _ in 0..10_000 {
            let dir: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = metric.norm(&u, &dir).unwrap();
            if n == 0.0 {
                continue;
            }
            let pairing: f64 = xi.iter().zip(&dir).map(|(x, d)| x * d).sum();
            best = best.max(pairing.abs() / n);
        }
        assert!((exact - best).abs() / exact <= 1e-3, "exact {exact} vs oracle {best}");
    }

    #[test]
    fn norm_axioms_on_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let metrics = vec![
            MetricStructure::Euclidean,
            MetricStructure::diagonal(vec![0.5, 2.0, 3.0]).unwrap(),
            MetricStructure::riemannian(|u: &[f64]| {
                let s = 1.0 + u.iter().map(|x| x * x).sum::<f64>();
                DMatrix::from_diagonal(&DVector::from_vec(vec![s, 2.0 * s, 0.5 * s]))
            }),
        ];
        for metric in &metrics {
            for _ in 0..200 {
                let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let w: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let lam: f64 = rng.gen_range(-3.0..3.0);
                let nv = metric.norm(&u, &v).unwrap();
                let scaled: Vec<f64> = v.iter().map(|x| lam * x).collect();
                assert_relative_eq!(
                    metric.norm(&u, &scaled).unwrap(),
                    lam.abs() * nv,
                    epsilon = 1e-10,
                    max_relative = 1e-10
                );
                let sum: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
                let nw = metric.norm(&u, &w).unwrap();
                assert!(metric.norm(&u, &sum).unwrap() <= nv + nw + 1e-12);
                assert_eq!(metric.norm(&u, &[0.0, 0.0, 0.0]).unwrap(), 0.0);
                if v.iter().any(|&x| x != 0.0) {
                    assert!(nv > 0.0);
                }
            }
        }
    }

    #[test]
    fn distance_examples() {
        let e = MetricStructure::Euclidean;
        assert_relative_eq!(e.distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(e.distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // G(u) = (1+u²)² in 1D: ∫₀¹ (1+s²) ds = 4/3.
        let r = MetricStructure::riemannian(|u: &[f64]| {
            let c = (1.0 + u[0] * u[0]).powi(2);
            DMatrix::from_diagonal_element(1, 1, c)
        });
        assert_relative_eq!(r.distance(&[0.0], &[1.0]).unwrap(), 4.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_spd_tensor() {
        let bad = MetricStructure::riemannian(|_u: &[f64]| DMatrix::from_diagonal_element(1, 1, -1.0));
        assert!(bad.norm(&[0.0], &[1.0]).is_err());
        assert!(bad.dual_norm(&[0.0], &[1.0]).is_err());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = MetricStructure::diagonal(vec![1.0, 1.0]).unwrap();
        assert!(d.norm(&[0.0, 0.0], &[1.0]).is_err());
        assert!(d.norm(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).is_err());
    }
}
