//! Analytic precomputation of the shared weight matrix used by the unrolled
//! solvers.
//!
//! Column i of W minimizes the cross-coherence energy `||W^H A||_F^2` subject
//! to the Hermitian pairing `w_i^H a_i = 1`. With `G = A A^H (+ delta I)` the
//! minimizer has the closed form `w_i = G^{-1} a_i / (a_i^H G^{-1} a_i)`; one
//! shared Cholesky factorization serves all columns.

use crate::error::{Result, TomoError};
use crate::geometry::SteeringMatrix;
use crate::linalg::{dot, CMat, Cholesky};
use crate::scalar::Real;
use num_complex::Complex;

/// Precomputed weight matrix together with its verification numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct AlistaWeights<T> {
    w: CMat<T>,
    tikhonov_delta: T,
    constraint_residual: T,
    objective_value: T,
    geometry_hash: u64,
}

impl<T: Real> AlistaWeights<T> {
    pub fn matrix(&self) -> &CMat<T> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.rows()
    }

    pub fn l(&self) -> usize {
        self.w.cols()
    }

    pub fn tikhonov_delta(&self) -> T {
        self.tikhonov_delta
    }

    /// `max_i |w_i^H a_i - 1|` recorded at precompute time.
    pub fn constraint_residual(&self) -> T {
        self.constraint_residual
    }

    /// `||W^H A||_F^2` recorded at precompute time.
    pub fn objective_value(&self) -> T {
        self.objective_value
    }

    pub fn geometry_hash(&self) -> u64 {
        self.geometry_hash
    }

    /// Reassemble from raw parts (used by the binary cache reader).
    pub fn from_parts(
        w: CMat<T>,
        tikhonov_delta: T,
        constraint_residual: T,
        objective_value: T,
        geometry_hash: u64,
    ) -> Self {
        Self { w, tikhonov_delta, constraint_residual, objective_value, geometry_hash }
    }
}

/// Cross-coherence energy `||W^H A||_F^2`.
pub fn coherence_objective<T: Real>(w: &CMat<T>, a: &CMat<T>) -> T {
    assert_eq!(w.rows(), a.rows(), "coherence objective dimension mismatch");
    let mut acc = T::zero();
    for i in 0..w.cols() {
        let wi = w.col(i);
        for j in 0..a.cols() {
            acc = acc + dot(&wi, &a.col(j)).norm_sqr();
        }
    }
    acc
}

/// Solve the per-column constrained minimization for the whole matrix.
///
/// Fails when `G = A A^H + delta I` is not positive definite; pass a positive
/// `delta` (or use [`precompute_w_auto`]) for rank-deficient steering matrices.
pub fn precompute_w<T: Real>(
    steering: &SteeringMatrix<T>,
    delta: T,
) -> Result<AlistaWeights<T>> {
    if delta < T::zero() {
        return Err(TomoError::invalid("tikhonov delta must be nonnegative"));
    }
    let a = steering.matrix();
    let n = a.rows();
    let mut g = a.gram_rows();
    if delta > T::zero() {
        for i in 0..n {
            *g.at_mut(i, i) = g.at(i, i) + Complex::new(delta, T::zero());
        }
    }
    let factor = Cholesky::new(&g).map_err(|e| {
        if delta.is_zero() {
            TomoError::numerical(format!(
                "gram matrix is singular; retry with a positive tikhonov delta ({e})"
            ))
        } else {
            e
        }
    })?;

    let l = a.cols();
    let mut w = CMat::zeros(n, l);
    let mut worst = T::zero();
    for i in 0..l {
        let ai = a.col(i);
        let gi = factor.solve(&ai);
        // a_i^H G^{-1} a_i is real and positive for PD G.
        let denom = dot(&ai, &gi).re;
        if !(denom > T::zero()) {
            return Err(TomoError::numerical(format!(
                "degenerate normalization for column {i}"
            )));
        }
        for r in 0..n {
            *w.at_mut(r, i) = gi[r].unscale(denom);
        }
        let pairing = dot(&w.col(i), &ai);
        let residual = (pairing - Complex::new(T::one(), T::zero())).norm();
        worst = worst.max(residual);
    }
    let objective = coherence_objective(&w, a);
    Ok(AlistaWeights {
        w,
        tikhonov_delta: delta,
        constraint_residual: worst,
        objective_value: objective,
        geometry_hash: steering.geometry_hash(),
    })
}

/// [`precompute_w`] with `delta = 0`, falling back to
/// `delta = 1e-8 * trace(G) / N` if the unregularized Gram is ill-conditioned.
pub fn precompute_w_auto<T: Real>(steering: &SteeringMatrix<T>) -> Result<AlistaWeights<T>> {
    match precompute_w(steering, T::zero()) {
        Ok(w) => Ok(w),
        Err(_) => {
            let g = steering.matrix().gram_rows();
            let trace: T = (0..g.rows()).map(|i| g.at(i, i).re).sum();
            let delta = T::of(1e-8) * trace / T::of(g.rows() as f64);
            precompute_w(steering, delta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImagingGeometry;
    use crate::linalg::norm;
    use num_complex::Complex64;
    use num_traits::Zero;

    fn steering() -> SteeringMatrix<f64> {
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0)
            .unwrap()
            .build_steering()
    }

    fn identity_steering(n: usize) -> SteeringMatrix<f64> {
        SteeringMatrix::from_parts(CMat::identity(n), 0)
    }

    #[test]
    fn identity_input_returns_identity() {
        let a = identity_steering(6);
        let w = precompute_w(&a, 0.0).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let expect = if r == c { Complex64::new(1.0, 0.0) } else { Complex64::zero() };
                assert!((w.matrix().at(r, c) - expect).norm() < 1e-12);
            }
        }
        assert!(w.constraint_residual() < 1e-12);
        assert!((w.objective_value() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_pairing_is_one() {
        let a = steering();
        let w = precompute_w(&a, 0.0).unwrap();
        for i in 0..a.l() {
            let p = dot(&w.matrix().col(i), &a.column(i));
            assert!((p - Complex64::new(1.0, 0.0)).norm() < 1e-8);
        }
        assert!(w.constraint_residual() < 1e-8);
    }

    #[test]
    fn coherence_objective_homogeneity() {
        let a = steering();
        let w = precompute_w(&a, 0.0).unwrap();
        let base = coherence_objective(w.matrix(), a.matrix());
        let mut scaled = w.matrix().clone();
        for r in 0..scaled.rows() {
            for c in 0..scaled.cols() {
                *scaled.at_mut(r, c) = scaled.at(r, c).scale(3.0);
            }
        }
        let v = coherence_objective(&scaled, a.matrix());
        assert!((v - 9.0 * base).abs() / base < 1e-10);
    }

    #[test]
    fn column_phase_invariance() {
        // Rotating a steering column by a global phase leaves |w_i^H a_i|
        // untouched and the objective unchanged.
        let a = steering();
        let w0 = precompute_w(&a, 0.0).unwrap();
        let mut rotated = a.matrix().clone();
        let phase = Complex64::from_polar(1.0, 1.2345);
        for r in 0..rotated.rows() {
            *rotated.at_mut(r, 40) = rotated.at(r, 40) * phase;
        }
        let a2 = SteeringMatrix::from_parts(rotated, a.geometry_hash());
        let w1 = precompute_w(&a2, 0.0).unwrap();
        assert!((w0.objective_value() - w1.objective_value()).abs() < 1e-9);
        let p0 = dot(&w0.matrix().col(40), &a.column(40)).norm();
        let p1 = dot(&w1.matrix().col(40), &a2.column(40)).norm();
        assert!((p0 - p1).abs() < 1e-10);
    }

    #[test]
    fn singular_gram_requires_delta() {
        // Duplicate a baseline row pattern: rank-1 matrix.
        let mut m = CMat::zeros(4, 16);
        for r in 0..4 {
            for c in 0..16 {
                *m.at_mut(r, c) = Complex64::new(1.0, 0.0);
            }
        }
        let a = SteeringMatrix::from_parts(m, 7);
        assert!(precompute_w(&a, 0.0).is_err());
        let w = precompute_w_auto(&a).unwrap();
        assert!(w.tikhonov_delta() > 0.0);
        assert!(w.constraint_residual() < 1e-6);
    }

    #[test]
    fn kkt_projected_gradient_vanishes() {
        // Stationarity check independent of the closed form: the gradient
        // 2 G w_i must lie in the complex span of a_i.
        let a = steering();
        let w = precompute_w(&a, 0.0).unwrap();
        let g = a.matrix().gram_rows();
        for i in (0..a.l()).step_by(9) {
            let ai = a.column(i);
            let grad: Vec<Complex64> = g.matvec(&w.matrix().col(i)).iter().map(|c| c.scale(2.0)).collect();
            let coef = dot(&ai, &grad) / dot(&ai, &ai);
            let proj: Vec<Complex64> =
                grad.iter().zip(ai.iter()).map(|(gr, av)| gr - av * coef).collect();
            assert!(norm(&proj) < 1e-6, "projected gradient norm {}", norm(&proj));
        }
    }
}
