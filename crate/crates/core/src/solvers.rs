//! Classical sparse baselines: complex soft thresholding, ISTA for the
//! LASSO objective, orthogonal matching pursuit and a truncated-SVD
//! pseudoinverse. These serve as comparison solvers and as label sources
//! for bootstrap training.

use crate::error::{Result, TomoError};
use crate::geometry::SteeringMatrix;
use crate::linalg::{dot, hermitian_eig, norm, norm_sqr, sub, CMat, Cholesky};
use crate::net::{forward, NetworkParams};
use crate::scalar::Real;
use crate::simulate::{PixelMeasurement, ReflectivityProfile};
use crate::weights::AlistaWeights;
use num_complex::Complex;
use num_traits::Zero;

/// Phase-preserving soft threshold `(x/|x|) max(|x| - theta, 0)`; zero input
/// maps to zero. Fails on a negative threshold.
pub fn soft_threshold<T: Real>(x: Complex<T>, theta: T) -> Result<Complex<T>> {
    if theta < T::zero() {
        return Err(TomoError::invalid("soft threshold must be nonnegative"));
    }
    Ok(shrink(x, theta))
}

/// Unchecked shrink used by the inner loops (theta nonnegative by construction).
#[inline]
pub(crate) fn shrink<T: Real>(x: Complex<T>, theta: T) -> Complex<T> {
    let r = x.norm();
    if r <= theta || r.is_zero() {
        Complex::zero()
    } else {
        x.scale((r - theta) / r)
    }
}

/// Step-size rule for ISTA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule<T> {
    /// `1.01 * lambda_max(A^H A)` computed by power iteration.
    Auto,
    /// Caller-supplied value; must exceed `lambda_max(A^H A)`.
    Fixed(T),
}

#[derive(Debug, Clone)]
pub struct IstaConfig<T> {
    pub reg_lambda: T,
    pub step: StepRule<T>,
    pub max_iters: usize,
    /// Relative-change stopping tolerance.
    pub tol: T,
}

impl<T: Real> IstaConfig<T> {
    pub fn new(reg_lambda: T) -> Self {
        IstaConfig { reg_lambda, step: StepRule::Auto, max_iters: 200, tol: T::of(1e-6) }
    }
}

#[derive(Debug, Clone)]
pub struct IstaSolution<T> {
    pub profile: ReflectivityProfile<T>,
    /// LASSO objective after every iteration.
    pub objectives: Vec<T>,
    pub iterations: usize,
    pub step_l: T,
}

/// LASSO objective `0.5 ||y - A gamma||^2 + lambda ||gamma||_1`.
pub fn lasso_objective<T: Real>(
    y: &[Complex<T>],
    a: &CMat<T>,
    reg_lambda: T,
    gamma: &[Complex<T>],
) -> T {
    let r = sub(y, &a.matvec(gamma));
    let l1: T = gamma.iter().map(|c| c.norm()).sum();
    T::of(0.5) * norm_sqr(&r) + reg_lambda * l1
}

/// Iterative soft thresholding from a zero start:
/// `gamma <- shrink(gamma + (1/L) A^H (y - A gamma), lambda / L)`.
pub fn ista<T: Real>(
    y: &PixelMeasurement<T>,
    steering: &SteeringMatrix<T>,
    cfg: &IstaConfig<T>,
) -> Result<IstaSolution<T>> {
    if y.n() != steering.n() {
        return Err(TomoError::invalid("measurement length does not match steering rows"));
    }
    if !(cfg.reg_lambda > T::zero()) {
        return Err(TomoError::invalid("reg_lambda must be positive"));
    }
    let a = steering.matrix();
    let step_l = match cfg.step {
        StepRule::Fixed(l) => {
            if !(l > T::zero()) {
                return Err(TomoError::invalid("step size must be positive"));
            }
            l
        }
        StepRule::Auto => {
            let lam = crate::linalg::gram_largest_eigenvalue(a)?;
            T::of(1.01) * lam
        }
    };
    let theta = cfg.reg_lambda / step_l;
    let inv_l = T::one() / step_l;
    let mut gamma = vec![Complex::zero(); steering.l()];
    let mut objectives = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        let residual = sub(&y.values, &a.matvec(&gamma));
        let grad = a.adjoint_matvec(&residual);
        let next: Vec<Complex<T>> = gamma
            .iter()
            .zip(grad.iter())
            .map(|(g, d)| shrink(*g + d.scale(inv_l), theta))
            .collect();
        let change = norm(&sub(&next, &gamma));
        let scale = norm(&gamma).max(T::epsilon());
        gamma = next;
        objectives.push(lasso_objective(&y.values, a, cfg.reg_lambda, &gamma));
        if change / scale < cfg.tol {
            break;
        }
    }
    Ok(IstaSolution {
        profile: ReflectivityProfile { values: gamma, geometry_hash: steering.geometry_hash() },
        objectives,
        iterations,
        step_l,
    })
}

#[derive(Debug, Clone)]
pub struct OmpConfig<T> {
    pub max_sparsity: usize,
    pub residual_tol: T,
}

impl<T: Real> Default for OmpConfig<T> {
    fn default() -> Self {
        OmpConfig { max_sparsity: 4, residual_tol: T::of(1e-9) }
    }
}

#[derive(Debug, Clone)]
pub struct OmpSolution<T> {
    pub profile: ReflectivityProfile<T>,
    pub support: Vec<usize>,
    /// Residual norm after every refit.
    pub residual_norms: Vec<T>,
    /// True when selected columns became numerically dependent.
    pub stopped_early: bool,
}

/// Orthogonal matching pursuit with complex inner products and a full
/// least-squares refit on the selected support each iteration.
pub fn omp<T: Real>(
    y: &PixelMeasurement<T>,
    steering: &SteeringMatrix<T>,
    cfg: &OmpConfig<T>,
) -> Result<OmpSolution<T>> {
    if y.n() != steering.n() {
        return Err(TomoError::invalid("measurement length does not match steering rows"));
    }
    if cfg.max_sparsity == 0 {
        return Err(TomoError::invalid("max_sparsity must be at least 1"));
    }
    let a = steering.matrix();
    let l = steering.l();
    let col_norms: Vec<T> = (0..l).map(|c| norm(&a.col(c))).collect();
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs: Vec<Complex<T>> = Vec::new();
    let mut residual = y.values.clone();
    let mut residual_norms = Vec::new();
    let mut stopped_early = false;

    while support.len() < cfg.max_sparsity.min(steering.n()) {
        if norm(&residual) <= cfg.residual_tol {
            break;
        }
        let corr = a.adjoint_matvec(&residual);
        let mut best = None;
        let mut best_val = T::zero();
        for (i, c) in corr.iter().enumerate() {
            if support.contains(&i) || col_norms[i].is_zero() {
                continue;
            }
            let v = c.norm() / col_norms[i];
            if best.is_none() || v > best_val {
                best = Some(i);
                best_val = v;
            }
        }
        let Some(pick) = best else { break };
        support.push(pick);

        // Normal equations on the selected columns.
        let k = support.len();
        let mut gram = CMat::zeros(k, k);
        let mut rhs = vec![Complex::zero(); k];
        let cols: Vec<Vec<Complex<T>>> = support.iter().map(|&i| a.col(i)).collect();
        for i in 0..k {
            for j in 0..k {
                *gram.at_mut(i, j) = dot(&cols[i], &cols[j]);
            }
            rhs[i] = dot(&cols[i], &y.values);
        }
        match Cholesky::new(&gram) {
            Ok(f) => coeffs = f.solve(&rhs),
            Err(_) => {
                // Dependent columns: drop the last pick and stop.
                support.pop();
                stopped_early = true;
                break;
            }
        }
        residual = y.values.clone();
        for (ci, col) in coeffs.iter().zip(cols.iter()) {
            for (r, cv) in residual.iter_mut().zip(col.iter()) {
                *r = *r - cv * ci;
            }
        }
        residual_norms.push(norm(&residual));
    }

    let mut values = vec![Complex::zero(); l];
    for (&i, &c) in support.iter().zip(coeffs.iter()) {
        values[i] = c;
    }
    Ok(OmpSolution {
        profile: ReflectivityProfile { values, geometry_hash: steering.geometry_hash() },
        support,
        residual_norms,
        stopped_early,
    })
}

/// Truncation rule for the SVD pseudoinverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SvdTruncation<T> {
    /// Keep the top-r singular directions.
    Rank(usize),
    /// Keep singular values `>= factor * sigma_max`.
    RelativeThreshold(T),
}

#[derive(Debug, Clone)]
pub struct SvdSolution<T> {
    pub profile: ReflectivityProfile<T>,
    pub kept_rank: usize,
    pub singular_values: Vec<T>,
}

/// Minimum-norm least-squares solution restricted to the leading singular
/// directions of the steering matrix. Returns a zero profile (with
/// `kept_rank == 0`) when the truncation excludes every direction.
pub fn svd_inverse<T: Real>(
    y: &PixelMeasurement<T>,
    steering: &SteeringMatrix<T>,
    truncation: SvdTruncation<T>,
) -> Result<SvdSolution<T>> {
    if y.n() != steering.n() {
        return Err(TomoError::invalid("measurement length does not match steering rows"));
    }
    let a = steering.matrix();
    let n = a.rows();
    let l = a.cols();
    if let SvdTruncation::Rank(r) = truncation {
        if r > n.min(l) {
            return Err(TomoError::invalid(format!(
                "rank {} exceeds min(N, L) = {}",
                r,
                n.min(l)
            )));
        }
    }
    // Singular structure via the small-side Gram matrix. For our geometries
    // N << L, so this is the N x N eigenproblem of A A^H.
    let (eigvals, u) = hermitian_eig(&a.gram_rows())?;
    let sigma: Vec<T> = eigvals.iter().map(|&v| v.max(T::zero()).sqrt()).collect();
    let sigma_max = sigma.first().copied().unwrap_or(T::zero());
    let invertible_floor = sigma_max * T::of(1e-12);
    let keep = |i: usize, s: T| -> bool {
        if s <= invertible_floor {
            return false;
        }
        match truncation {
            SvdTruncation::Rank(r) => i < r,
            SvdTruncation::RelativeThreshold(f) => s >= f * sigma_max,
        }
    };
    let mut gamma = vec![Complex::zero(); l];
    let mut kept = 0usize;
    for (i, &s) in sigma.iter().enumerate() {
        if !keep(i, s) {
            continue;
        }
        kept += 1;
        let ui = u.col(i);
        // gamma += A^H u_i (u_i^H y) / sigma_i^2
        let coeff = dot(&ui, &y.values) / (s * s);
        let contrib = a.adjoint_matvec(&ui);
        for (g, c) in gamma.iter_mut().zip(contrib.iter()) {
            *g = *g + c * coeff;
        }
    }
    Ok(SvdSolution {
        profile: ReflectivityProfile { values: gamma, geometry_hash: steering.geometry_hash() },
        kept_rank: kept,
        singular_values: sigma,
    })
}

/// Solver selectable by name from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Omp,
    Ista,
    Svd,
    Alista,
    Atasi,
}

impl SolverKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "omp" => Some(SolverKind::Omp),
            "ista" => Some(SolverKind::Ista),
            "svd" => Some(SolverKind::Svd),
            "alista" => Some(SolverKind::Alista),
            "atasi" => Some(SolverKind::Atasi),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SolverKind::Omp => "omp",
            SolverKind::Ista => "ista",
            SolverKind::Svd => "svd",
            SolverKind::Alista => "alista",
            SolverKind::Atasi => "atasi",
        }
    }
}

/// A ready-to-run per-pixel solver: configuration plus any trained state.
#[derive(Debug, Clone)]
pub enum Solver<T> {
    Omp(OmpConfig<T>),
    Ista(IstaConfig<T>),
    Svd(SvdTruncation<T>),
    /// Unrolled network; covers both threshold modes via the params.
    Network { weights: AlistaWeights<T>, params: NetworkParams<T> },
}

impl<T: Real> Solver<T> {
    pub fn solve(
        &self,
        y: &PixelMeasurement<T>,
        steering: &SteeringMatrix<T>,
    ) -> Result<ReflectivityProfile<T>> {
        match self {
            Solver::Omp(cfg) => Ok(omp(y, steering, cfg)?.profile),
            Solver::Ista(cfg) => Ok(ista(y, steering, cfg)?.profile),
            Solver::Svd(trunc) => Ok(svd_inverse(y, steering, *trunc)?.profile),
            Solver::Network { weights, params } => {
                // The scalars are trained in the unit-peak gauge; normalizing
                // here makes the solver scale-equivariant.
                let peak = y.values.iter().map(|c| c.norm()).fold(T::zero(), T::max);
                if peak.is_zero() {
                    return Ok(forward(y, steering, weights, params, false)?.0);
                }
                let scaled = PixelMeasurement {
                    values: y.values.iter().map(|v| v.unscale(peak)).collect(),
                    snr: y.snr,
                };
                let (mut out, _) = forward(&scaled, steering, weights, params, false)?;
                for v in out.values.iter_mut() {
                    *v = v.scale(peak);
                }
                Ok(out)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Solver::Omp(_) => "omp",
            Solver::Ista(_) => "ista",
            Solver::Svd(_) => "svd",
            Solver::Network { params, .. } => match params.mode {
                crate::net::ThresholdMode::Adaptive => "atasi",
                crate::net::ThresholdMode::Constant => "alista",
            },
        }
    }
}
