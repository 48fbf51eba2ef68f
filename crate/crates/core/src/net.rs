//! The unrolled K-layer shrinkage solver.
//!
//! Each layer scales the precomputed weight matrix by a learned step `beta_k`,
//! takes one gradient step against the running residual, derives an
//! element-wise threshold that falls off with the local signal magnitude
//! (`theta_i = mu_k / (|z_i| + eps)`), shrinks, and refreshes the residual:
//!
//! ```text
//! z^k     = gamma^{k-1} - beta_k W^H D^{k-1}
//! theta^k = mu_k / (|z^k| + eps)        (element-wise; constant mode: mu_k)
//! gamma^k = shrink(z^k, theta^k)
//! D^k     = A gamma^k - y
//! ```
//!
//! starting from `gamma^0 = 0`, `D^0 = -y`. With K = 1 this is exactly one
//! proximal-gradient step. The same driver also runs the layer-constant
//! threshold variant (`theta^k = mu_k` broadcast), which is the conventional
//! analytic-weight unrolling the adaptive mode is compared against.

use crate::error::{Result, TomoError};
use crate::geometry::SteeringMatrix;
use crate::scalar::Real;
use crate::simulate::{PixelMeasurement, ReflectivityProfile};
use crate::solvers::shrink;
use crate::weights::AlistaWeights;
use num_complex::Complex;
use num_traits::Zero;

/// How the shrinkage floor `eps` is chosen for a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule<T> {
    Fixed(T),
    /// `factor * max_n |y_n|`, scale-free across pixels of different brightness.
    RelativeToPeak(T),
}

impl<T: Real> EpsilonRule<T> {
    pub fn resolve(&self, y: &[Complex<T>]) -> T {
        match self {
            EpsilonRule::Fixed(v) => *v,
            EpsilonRule::RelativeToPeak(f) => {
                let peak = y.iter().map(|c| c.norm()).fold(T::zero(), T::max);
                *f * peak
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = match self {
            EpsilonRule::Fixed(v) | EpsilonRule::RelativeToPeak(v) => *v,
        };
        if v > T::zero() {
            Ok(())
        } else {
            Err(TomoError::invalid("epsilon rule requires a positive value"))
        }
    }
}

/// Whether thresholds adapt per element or stay constant within a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Adaptive,
    Constant,
}

impl ThresholdMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdMode::Adaptive => "adaptive",
            ThresholdMode::Constant => "constant",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adaptive" => Some(ThresholdMode::Adaptive),
            "constant" => Some(ThresholdMode::Constant),
            _ => None,
        }
    }
}

/// The 2K learned scalars plus the threshold configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub mu: Vec<T>,
    pub beta: Vec<T>,
    pub epsilon_rule: EpsilonRule<T>,
    pub mode: ThresholdMode,
    pub geometry_hash: u64,
}

impl<T: Real> NetworkParams<T> {
    /// Uniform initialization: every layer starts from the given scalars.
    pub fn constant_init(
        layers: usize,
        mu: T,
        beta: T,
        epsilon_rule: EpsilonRule<T>,
        mode: ThresholdMode,
        geometry_hash: u64,
    ) -> Result<Self> {
        let p = NetworkParams {
            mu: vec![mu; layers],
            beta: vec![beta; layers],
            epsilon_rule,
            mode,
            geometry_hash,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn layers(&self) -> usize {
        self.mu.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.is_empty() {
            return Err(TomoError::invalid("network needs at least one layer"));
        }
        if self.mu.len() != self.beta.len() {
            return Err(TomoError::invalid("mu and beta lists must have equal length"));
        }
        if self.mu.iter().any(|m| !(*m > T::zero())) {
            return Err(TomoError::invalid("every mu must be positive"));
        }
        if self.mu.iter().chain(self.beta.iter()).any(|v| !v.is_finite()) {
            return Err(TomoError::invalid("parameters must be finite"));
        }
        self.epsilon_rule.validate()
    }
}

/// Per-layer intermediates captured during a forward pass.
#[derive(Debug, Clone)]
pub struct LayerTrace<T> {
    /// Pre-shrinkage estimates z^k, k = 1..=K.
    pub z: Vec<Vec<Complex<T>>>,
    /// Element-wise thresholds theta^k.
    pub theta: Vec<Vec<T>>,
    /// Post-shrinkage estimates gamma^k.
    pub gamma: Vec<Vec<Complex<T>>>,
    /// Residuals D^k = A gamma^k - y.
    pub residual: Vec<Vec<Complex<T>>>,
    /// The epsilon value the pass resolved to.
    pub epsilon: T,
}

/// Element-wise adaptive thresholds `mu / (|z_i| + eps)`.
pub fn adaptive_threshold<T: Real>(z: &[Complex<T>], mu: T, epsilon: T) -> Vec<T> {
    z.iter().map(|zi| mu / (zi.norm() + epsilon)).collect()
}

fn thresholds<T: Real>(z: &[Complex<T>], mu: T, epsilon: T, mode: ThresholdMode) -> Vec<T> {
    match mode {
        ThresholdMode::Adaptive => adaptive_threshold(z, mu, epsilon),
        ThresholdMode::Constant => vec![mu; z.len()],
    }
}

/// One unrolled layer. Returns `(z, theta, gamma_next, residual_next)`.
#[allow(clippy::too_many_arguments)]
pub fn layer_step<T: Real>(
    gamma_prev: &[Complex<T>],
    residual_prev: &[Complex<T>],
    weights: &AlistaWeights<T>,
    beta: T,
    mu: T,
    epsilon: T,
    steering: &SteeringMatrix<T>,
    y: &[Complex<T>],
    mode: ThresholdMode,
) -> Result<(Vec<Complex<T>>, Vec<T>, Vec<Complex<T>>, Vec<Complex<T>>)> {
    if gamma_prev.len() != steering.l()
        || residual_prev.len() != steering.n()
        || y.len() != steering.n()
        || weights.n() != steering.n()
        || weights.l() != steering.l()
    {
        return Err(TomoError::invalid("layer_step dimension mismatch"));
    }
    let wd = weights.matrix().adjoint_matvec(residual_prev);
    let z: Vec<Complex<T>> = gamma_prev
        .iter()
        .zip(wd.iter())
        .map(|(g, w)| g - w.scale(beta))
        .collect();
    let theta = thresholds(&z, mu, epsilon, mode);
    let gamma_next: Vec<Complex<T>> =
        z.iter().zip(theta.iter()).map(|(zi, th)| shrink(*zi, *th)).collect();
    let mut residual_next = steering.matrix().matvec(&gamma_next);
    for (r, yv) in residual_next.iter_mut().zip(y.iter()) {
        *r = *r - yv;
    }
    Ok((z, theta, gamma_next, residual_next))
}

/// Run the K-layer unrolled solver on one pixel.
///
/// Refuses weights whose geometry hash differs from the steering matrix.
pub fn forward<T: Real>(
    y: &PixelMeasurement<T>,
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    params: &NetworkParams<T>,
    capture_trace: bool,
) -> Result<(ReflectivityProfile<T>, Option<LayerTrace<T>>)> {
    params.validate()?;
    if weights.geometry_hash() != steering.geometry_hash() {
        return Err(TomoError::HashMismatch(format!(
            "weights were computed for geometry {:#x}, steering is {:#x}",
            weights.geometry_hash(),
            steering.geometry_hash()
        )));
    }
    if y.n() != steering.n() {
        return Err(TomoError::invalid("measurement length does not match steering rows"));
    }
    let epsilon = params.epsilon_rule.resolve(&y.values);
    let k = params.layers();
    let mut gamma = vec![Complex::zero(); steering.l()];
    let mut residual: Vec<Complex<T>> = y.values.iter().map(|v| -v).collect();
    let mut trace = capture_trace.then(|| LayerTrace {
        z: Vec::with_capacity(k),
        theta: Vec::with_capacity(k),
        gamma: Vec::with_capacity(k),
        residual: Vec::with_capacity(k),
        epsilon,
    });
    for layer in 0..k {
        let (z, theta, gamma_next, residual_next) = layer_step(
            &gamma,
            &residual,
            weights,
            params.beta[layer],
            params.mu[layer],
            epsilon,
            steering,
            &y.values,
            params.mode,
        )?;
        gamma = gamma_next;
        residual = residual_next;
        if let Some(t) = trace.as_mut() {
            t.z.push(z);
            t.theta.push(theta);
            t.gamma.push(gamma.clone());
            t.residual.push(residual.clone());
        }
    }
    let profile = ReflectivityProfile { values: gamma, geometry_hash: steering.geometry_hash() };
    Ok((profile, trace))
}
