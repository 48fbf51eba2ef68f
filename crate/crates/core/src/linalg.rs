//! Dense complex linear algebra sized for this problem (N ~ 8 channels,
//! L ~ 128 elevation bins): matrix-vector products, a Hermitian Cholesky
//! solver, a Jacobi eigensolver for Hermitian matrices and a power iteration
//! for the largest eigenvalue of a Gram operator.

use crate::error::{Result, TomoError};
use crate::scalar::Real;
use num_complex::Complex;
use num_traits::{One, Zero};

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            *m.at_mut(i, i) = Complex::one();
        }
        m
    }

    /// Build from row-major data; `data.len()` must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TomoError::invalid(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> Complex<T> {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut Complex<T> {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[Complex<T>] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|r| self.at(r, c)).collect()
    }

    /// `A x` for a length-`cols` vector.
    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut acc = Complex::zero();
                for (a, b) in row.iter().zip(x.iter()) {
                    acc = acc + a * b;
                }
                acc
            })
            .collect()
    }

    /// `A^H y` for a length-`rows` vector, without forming the adjoint.
    pub fn adjoint_matvec(&self, y: &[Complex<T>]) -> Vec<Complex<T>> {
        assert_eq!(y.len(), self.rows, "adjoint_matvec dimension mismatch");
        let mut out = vec![Complex::zero(); self.cols];
        for r in 0..self.rows {
            let row = self.row(r);
            let yr = y[r];
            for (o, a) in out.iter_mut().zip(row.iter()) {
                *o = *o + a.conj() * yr;
            }
        }
        out
    }

    /// Gram matrix `A A^H` (rows x rows), Hermitian by construction.
    pub fn gram_rows(&self) -> CMat<T> {
        let n = self.rows;
        let mut g = CMat::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let mut acc = Complex::zero();
                for (a, b) in self.row(i).iter().zip(self.row(j).iter()) {
                    acc = acc + a * b.conj();
                }
                *g.at_mut(i, j) = acc;
                if i != j {
                    *g.at_mut(j, i) = acc.conj();
                }
            }
        }
        g
    }

    pub fn frobenius_norm_sqr(&self) -> T {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// `sum_i conj(a_i) b_i`, the Hermitian inner product.
pub fn dot<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = Complex::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc = acc + x.conj() * y;
    }
    acc
}

pub fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|c| c.norm_sqr()).sum()
}

pub fn norm<T: Real>(v: &[Complex<T>]) -> T {
    norm_sqr(v).sqrt()
}

pub fn sub<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Vec<Complex<T>> {
    a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
}

/// Cholesky factor of a Hermitian positive-definite matrix, `A = L L^H`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: CMat<T>,
}

impl<T: Real> Cholesky<T> {
    /// Factor a Hermitian positive-definite matrix. Fails when a pivot drops
    /// below `n * eps * max_diag`, which flags singular or indefinite input.
    pub fn new(a: &CMat<T>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(TomoError::invalid("cholesky requires a square matrix"));
        }
        let max_diag = (0..n)
            .map(|i| a.at(i, i).re.abs())
            .fold(T::zero(), |m, v| m.max(v));
        let tol = T::of(n as f64) * T::epsilon() * max_diag.max(T::one());
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut diag = a.at(j, j).re;
            for k in 0..j {
                diag = diag - l.at(j, k).norm_sqr();
            }
            if diag <= tol {
                return Err(TomoError::numerical(format!(
                    "cholesky pivot {:e} at column {j}: matrix is not positive definite",
                    diag.to_f64_lossy()
                )));
            }
            let djj = diag.sqrt();
            *l.at_mut(j, j) = Complex::new(djj, T::zero());
            for i in (j + 1)..n {
                let mut acc = a.at(i, j);
                for k in 0..j {
                    acc = acc - l.at(i, k) * l.at(j, k).conj();
                }
                *l.at_mut(i, j) = acc / djj;
            }
        }
        Ok(Self { l })
    }

    /// Solve `A x = b` via forward and back substitution.
    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.l.rows();
        assert_eq!(b.len(), n, "cholesky solve dimension mismatch");
        // L y = b
        let mut y = vec![Complex::zero(); n];
        for i in 0..n {
            let mut acc = b[i];
            for k in 0..i {
                acc = acc - self.l.at(i, k) * y[k];
            }
            y[i] = acc / self.l.at(i, i).re;
        }
        // L^H x = y
        let mut x = vec![Complex::zero(); n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            for k in (i + 1)..n {
                acc = acc - self.l.at(k, i).conj() * x[k];
            }
            x[i] = acc / self.l.at(i, i).re;
        }
        x
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi sweeps.
///
/// Returns `(eigenvalues, V)` with eigenvalues sorted descending and the
/// columns of `V` holding the matching orthonormal eigenvectors.
pub fn hermitian_eig<T: Real>(a: &CMat<T>) -> Result<(Vec<T>, CMat<T>)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(TomoError::invalid("hermitian_eig requires a square matrix"));
    }
    let mut m = a.clone();
    let mut v = CMat::identity(n);
    let scale = m.frobenius_norm_sqr().sqrt().max(T::one());
    let tol = scale * T::of(1e-14).max(T::epsilon() * T::of(8.0));
    let max_sweeps = 60;

    for _ in 0..max_sweeps {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m.at(p, q).norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.at(p, q);
                let mag = apq.norm();
                if mag <= scale * T::epsilon() {
                    continue;
                }
                // Unitary rotation zeroing the (p, q) entry. The phase of the
                // off-diagonal entry is absorbed into the rotation so the
                // classical real-Jacobi angle formulas apply.
                let phase = apq / mag;
                let app = m.at(p, p).re;
                let aqq = m.at(q, q).re;
                let tau = (aqq - app) / (T::of(2.0) * mag);
                let t = if tau.is_zero() {
                    T::one()
                } else {
                    let sign = if tau >= T::zero() { T::one() } else { -T::one() };
                    sign / (tau.abs() + (T::one() + tau * tau).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                // Column update: [p q] <- [p q] * [[c, s*phase], [-s*conj(phase), c]]
                let gpq = phase.scale(s);
                for r in 0..n {
                    let mp = m.at(r, p);
                    let mq = m.at(r, q);
                    *m.at_mut(r, p) = mp.scale(c) - mq * gpq.conj();
                    *m.at_mut(r, q) = mq.scale(c) + mp * gpq;
                }
                for r in 0..n {
                    let mp = m.at(p, r);
                    let mq = m.at(q, r);
                    *m.at_mut(p, r) = mp.scale(c) - mq * gpq;
                    *m.at_mut(q, r) = mq.scale(c) + mp * gpq.conj();
                }
                for r in 0..n {
                    let vp = v.at(r, p);
                    let vq = v.at(r, q);
                    *v.at_mut(r, p) = vp.scale(c) - vq * gpq.conj();
                    *v.at_mut(r, q) = vq.scale(c) + vp * gpq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<T> = (0..n).map(|i| m.at(i, i).re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).expect("finite eigenvalues"));
    let eigvals: Vec<T> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (new_c, &old_c) in order.iter().enumerate() {
        for r in 0..n {
            *vectors.at_mut(r, new_c) = v.at(r, old_c);
        }
    }
    Ok((eigvals, vectors))
}

/// Largest eigenvalue of the Gram operator `A^H A`, computed exactly through
/// the eigendecomposition of the small-side Gram matrix (`A A^H` shares the
/// nonzero spectrum). Steering Grams have tightly clustered leading
/// eigenvalues, which stalls plain power iteration.
pub fn gram_largest_eigenvalue<T: Real>(a: &CMat<T>) -> Result<T> {
    let g = if a.rows() <= a.cols() {
        a.gram_rows()
    } else {
        let n = a.cols();
        let mut g = CMat::zeros(n, n);
        for i in 0..n {
            let ci = a.col(i);
            for j in i..n {
                let v = dot(&ci, &a.col(j));
                *g.at_mut(i, j) = v;
                if i != j {
                    *g.at_mut(j, i) = v.conj();
                }
            }
        }
        g
    };
    let (vals, _) = hermitian_eig(&g)?;
    Ok(vals.first().copied().unwrap_or(T::zero()).max(T::zero()))
}
