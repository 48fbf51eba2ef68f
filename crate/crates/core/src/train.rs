//! End-to-end optimization of the 2K layer scalars by reverse-mode
//! differentiation through the unrolled forward pass.
//!
//! The chain runs backwards through the shrinkage (subgradient zero on the
//! dead zone and at the kink), through the threshold's dependence on the
//! pre-shrinkage signal, and through the residual recursion via `W` and `A`.
//! Gradients for a complex intermediate `o` are carried in the composite form
//! `g = dL/dRe(o) + j dL/dIm(o)`, so for any real parameter p the chain rule
//! reads `dL/dp = Re(sum_i conj(g_i) do_i/dp)`.

use crate::error::{Result, TomoError};
use crate::geometry::SteeringMatrix;
use crate::metrics::nmse;
use crate::net::{forward, LayerTrace, NetworkParams, ThresholdMode};
use crate::scalar::Real;
use crate::simulate::{derive_seed, fisher_yates, TrainingSample};
use crate::weights::AlistaWeights;
use num_complex::Complex;
use num_traits::Zero;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// Floor applied to every `mu` after an optimizer step.
const MU_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind<T> {
    Adam { beta1: T, beta2: T, eps: T },
    Sgd { momentum: T },
}

impl<T: Real> OptimizerKind<T> {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8) }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig<T> {
    pub learning_rate: T,
    pub optimizer: OptimizerKind<T>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without improvement before the learning rate decays.
    pub lr_patience: usize,
    pub lr_factor: T,
    pub seed: u64,
    /// Keep `beta >= 0` after each step (`mu` is always floored).
    pub clamp_nonneg: bool,
    /// Grow the network layer by layer (train the 1-layer prefix, extend,
    /// retrain, ...) before a final full-depth pass, instead of training the
    /// full depth directly from the searched initialization.
    pub progressive: bool,
}

impl<T: Real> TrainConfig<T> {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            learning_rate: T::of(0.001),
            optimizer: OptimizerKind::adam(),
            epochs,
            batch_size: 64,
            lr_patience: 10,
            lr_factor: T::of(0.5),
            seed,
            clamp_nonneg: true,
            progressive: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > T::zero()) {
            return Err(TomoError::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(TomoError::invalid("batch size must be at least 1"));
        }
        Ok(())
    }
}

/// Optimizer state over the flattened `[mu..., beta...]` vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind<T>,
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind<T>, dim: usize) -> Self {
        OptimizerState { kind, first: vec![T::zero(); dim], second: vec![T::zero(); dim], step: 0 }
    }

    pub fn update(&mut self, params: &mut [T], grads: &[T], lr: T) {
        debug_assert_eq!(params.len(), grads.len());
        self.step += 1;
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = T::of(self.step as f64);
                let bc1 = T::one() - beta1.powf(t);
                let bc2 = T::one() - beta2.powf(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.first[i] = beta1 * self.first[i] + (T::one() - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (T::one() - beta2) * g * g;
                    let m_hat = self.first[i] / bc1;
                    let v_hat = self.second[i] / bc2;
                    params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerKind::Sgd { momentum } => {
                for i in 0..params.len() {
                    self.first[i] = momentum * self.first[i] + grads[i];
                    params[i] = params[i] - lr * self.first[i];
                }
            }
        }
    }
}

/// Scale a sample so its measurement has unit peak magnitude (zero
/// measurements pass through). The shared thresholds have a quadratic
/// amplitude gauge, so training and network inference both run in this
/// normalized gauge; outputs are rescaled back by the caller.
pub fn normalize_sample<T: Real>(s: &TrainingSample<T>) -> TrainingSample<T> {
    let peak = s.measurement.values.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    if peak.is_zero() {
        return s.clone();
    }
    TrainingSample {
        measurement: crate::simulate::PixelMeasurement {
            values: s.measurement.values.iter().map(|v| v.unscale(peak)).collect(),
            snr: s.measurement.snr,
        },
        label: crate::simulate::ReflectivityProfile {
            values: s.label.values.iter().map(|v| v.unscale(peak)).collect(),
            geometry_hash: s.label.geometry_hash,
        },
    }
}

/// Mean squared reconstruction error over a batch:
/// `(1/B) sum_b ||gamma_hat_b - label_b||^2`.
pub fn batch_loss<T: Real>(
    gamma_hat: &[Vec<Complex<T>>],
    labels: &[Vec<Complex<T>>],
) -> Result<T> {
    if gamma_hat.is_empty() || gamma_hat.len() != labels.len() {
        return Err(TomoError::invalid("loss needs equal, nonempty batches"));
    }
    let mut acc = T::zero();
    for (g, l) in gamma_hat.iter().zip(labels.iter()) {
        if g.len() != l.len() {
            return Err(TomoError::invalid("loss shape mismatch"));
        }
        acc = acc + sample_loss(g, l);
    }
    Ok(acc / T::of(gamma_hat.len() as f64))
}

fn sample_loss<T: Real>(gamma_hat: &[Complex<T>], label: &[Complex<T>]) -> T {
    gamma_hat
        .iter()
        .zip(label.iter())
        .map(|(g, l)| (g - l).norm_sqr())
        .sum()
}

/// Backward pass through the shrink of one layer.
///
/// Returns the composite gradient with respect to `z` and the contribution to
/// `dmu`. Entries on the dead zone (including the kink itself) propagate
/// nothing.
fn shrink_backward<T: Real>(
    g_gamma: &[Complex<T>],
    z: &[Complex<T>],
    gamma: &[Complex<T>],
    mu: T,
    epsilon: T,
    mode: ThresholdMode,
) -> (Vec<Complex<T>>, T) {
    let mut g_z = vec![Complex::zero(); z.len()];
    let mut dmu = T::zero();
    for i in 0..z.len() {
        if gamma[i].is_zero() {
            continue; // dead zone / kink: subgradient 0
        }
        let zi = z[i];
        let gi = g_gamma[i];
        let r = zi.norm();
        let rho = (gi.conj() * zi).re;
        let (h, h_prime, dmu_i) = match mode {
            ThresholdMode::Adaptive => {
                // gamma = z (1 - mu / (r (r + eps)))
                let denom = r * (r + epsilon);
                let h = T::one() - mu / denom;
                let h_prime = mu * (T::of(2.0) * r + epsilon) / (denom * denom);
                (h, h_prime, -rho / denom)
            }
            ThresholdMode::Constant => {
                // gamma = z (1 - mu / r)
                let h = T::one() - mu / r;
                let h_prime = mu / (r * r);
                (h, h_prime, -rho / r)
            }
        };
        g_z[i] = gi.scale(h) + zi.scale(h_prime * rho / r);
        dmu = dmu + dmu_i;
    }
    (g_z, dmu)
}

/// Reverse-mode gradients of the per-sample loss with respect to every layer
/// scalar. The trace must come from [`forward`] on the same inputs.
pub fn backward<T: Real>(
    trace: &LayerTrace<T>,
    y: &[Complex<T>],
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    params: &NetworkParams<T>,
    label: &[Complex<T>],
) -> Result<(Vec<T>, Vec<T>)> {
    let k = params.layers();
    if trace.z.len() != k {
        return Err(TomoError::invalid(format!(
            "trace has {} layers, params have {}",
            trace.z.len(),
            k
        )));
    }
    if label.len() != steering.l() || y.len() != steering.n() {
        return Err(TomoError::invalid("backward dimension mismatch"));
    }
    let epsilon = trace.epsilon;
    let mut dmu = vec![T::zero(); k];
    let mut dbeta = vec![T::zero(); k];

    // Loss gradient at the network output.
    let mut g_gamma: Vec<Complex<T>> = trace.gamma[k - 1]
        .iter()
        .zip(label.iter())
        .map(|(g, l)| (g - l).scale(T::of(2.0)))
        .collect();

    let d0: Vec<Complex<T>> = y.iter().map(|v| -v).collect();
    for layer in (0..k).rev() {
        let (g_z, dmu_k) = shrink_backward(
            &g_gamma,
            &trace.z[layer],
            &trace.gamma[layer],
            params.mu[layer],
            epsilon,
            params.mode,
        );
        dmu[layer] = dmu_k;

        // z^k = gamma^{k-1} - beta_k W^H D^{k-1}
        let d_prev = if layer == 0 { &d0 } else { &trace.residual[layer - 1] };
        let wd = weights.matrix().adjoint_matvec(d_prev);
        let mut acc = T::zero();
        for (g, w) in g_z.iter().zip(wd.iter()) {
            acc = acc + (g.conj() * w).re;
        }
        dbeta[layer] = -acc;

        if layer > 0 {
            // Gradient into D^{k-1} and then into gamma^{k-1} through
            // D^{k-1} = A gamma^{k-1} - y.
            let wgz = weights.matrix().matvec(&g_z);
            let g_d: Vec<Complex<T>> = wgz.iter().map(|v| v.scale(-params.beta[layer])).collect();
            let back = steering.matrix().adjoint_matvec(&g_d);
            g_gamma = g_z
                .iter()
                .zip(back.iter())
                .map(|(a, b)| a + b)
                .collect();
        }
    }
    Ok((dmu, dbeta))
}

/// Loss and gradients for one sample (forward with trace, then backward).
pub fn sample_gradient<T: Real>(
    sample: &TrainingSample<T>,
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    params: &NetworkParams<T>,
) -> Result<(T, Vec<T>, Vec<T>)> {
    let (out, trace) = forward(&sample.measurement, steering, weights, params, true)?;
    let trace = trace.expect("trace requested");
    let loss = sample_loss(&out.values, &sample.label.values);
    let (dmu, dbeta) = backward(
        &trace,
        &sample.measurement.values,
        steering,
        weights,
        params,
        &sample.label.values,
    )?;
    Ok((loss, dmu, dbeta))
}

/// Data-driven initialization by a coarse deterministic grid search.
///
/// The loss surface over the shared scalars is a narrow valley: too little
/// thresholding lets the non-Hermitian update amplify crosstalk, too much
/// lands in the all-zero dead basin where every gradient vanishes. Neither
/// failure mode is escapable by gradient steps, so the starting point is
/// picked by evaluating the mean loss of uniform `(beta, mu)` candidates on
/// a calibration batch: `beta` over a log grid and `mu` scaled to put the
/// thresholds at various multiples of the median first-layer signal.
pub fn init_params<T: Real>(
    dataset: &[TrainingSample<T>],
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    layers: usize,
    mode: ThresholdMode,
    epsilon_rule: crate::net::EpsilonRule<T>,
) -> Result<NetworkParams<T>> {
    if dataset.is_empty() {
        return Err(TomoError::invalid("calibration needs at least one sample"));
    }
    let calib: Vec<TrainingSample<T>> =
        dataset[..dataset.len().min(64)].iter().map(normalize_sample).collect();
    let mut eps_acc = T::zero();
    let mut peak_acc = T::zero();
    let mut corr_mags: Vec<T> = Vec::new();
    for s in &calib {
        let corr = weights.matrix().adjoint_matvec(&s.measurement.values);
        let peak = corr.iter().map(|c| c.norm()).fold(T::zero(), T::max);
        peak_acc = peak_acc + peak;
        corr_mags.extend(corr.iter().map(|c| c.norm()));
        eps_acc = eps_acc + epsilon_rule.resolve(&s.measurement.values);
    }
    corr_mags.sort_by(|a, b| a.partial_cmp(b).expect("finite magnitudes"));
    let med_corr = corr_mags[corr_mags.len() / 2].max(T::of(1e-12));
    let n_calib = T::of(calib.len() as f64);
    let peak_corr = (peak_acc / n_calib).max(T::of(1e-12));
    let eps_mean = eps_acc / n_calib;

    // Threshold scale from a first-layer signal magnitude m: the value that
    // puts theta(m) at m itself, i.e. the largest mu keeping m alive.
    let mu_for = |m: T| match mode {
        ThresholdMode::Adaptive => m * (m + eps_mean),
        ThresholdMode::Constant => m,
    };

    // Candidate schedules: beta either constant or ramping up geometrically
    // across layers; mu scaled to the median (gentle) or the peak
    // (winner-take-all) first-layer signal, constant or decaying, floored
    // above zero so the tail layers never run unthresholded.
    let mut beta_schedules: Vec<Vec<T>> = Vec::new();
    for &beta in &[0.02, 0.05, 0.1, 0.2, 0.35, 0.5, 0.8] {
        beta_schedules.push(vec![T::of(beta); layers]);
    }
    for &(lo, hi) in &[(0.02, 0.2), (0.05, 0.35), (0.05, 0.5), (0.1, 0.5)] {
        if layers > 1 {
            let ratio = T::of(hi / lo);
            let step = T::one() / T::of((layers - 1) as f64);
            beta_schedules
                .push((0..layers).map(|i| T::of(lo) * ratio.powf(T::of(i as f64) * step)).collect());
        }
    }
    let mut candidates: Vec<NetworkParams<T>> = Vec::new();
    for betas in &beta_schedules {
        let med_z = betas[0] * med_corr;
        let peak_z = betas[0] * peak_corr;
        let mut mu_scales: Vec<T> = Vec::new();
        for &factor in &[0.3, 1.0, 2.0, 4.0] {
            mu_scales.push(T::of(factor) * mu_for(med_z));
        }
        for &q in &[0.3, 0.6, 0.9] {
            mu_scales.push(T::of(q) * mu_for(peak_z));
        }
        for &mu0 in &mu_scales {
            let mu0 = mu0.max(T::of(MU_FLOOR));
            for &ratio in &[1.0, 0.7, 0.85] {
                let r = T::of(ratio);
                let floor = (T::of(0.01) * mu0).max(T::of(MU_FLOOR));
                let mu: Vec<T> =
                    (0..layers).map(|i| (mu0 * r.powi(i as i32)).max(floor)).collect();
                let p = NetworkParams {
                    mu,
                    beta: betas.clone(),
                    epsilon_rule,
                    mode,
                    geometry_hash: steering.geometry_hash(),
                };
                p.validate()?;
                candidates.push(p);
            }
        }
    }

    // Score candidates with the trainer's own objective: label-equalized
    // per-sample loss clipped at the all-zero level.
    let mut best: Option<(T, NetworkParams<T>)> = None;
    for candidate in candidates {
        let mut loss_acc = T::zero();
        let mut ok = true;
        for s in &calib {
            match forward(&s.measurement, steering, weights, &candidate, false) {
                Ok((out, _)) => {
                    let l = sample_loss(&out.values, &s.label.values);
                    if !l.is_finite() {
                        ok = false;
                        break;
                    }
                    let e: T = s.label.values.iter().map(|c| c.norm_sqr()).sum();
                    loss_acc = loss_acc + (l / e.max(T::of(1e-2))).min(T::one());
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        if best.as_ref().map_or(true, |(b, _)| loss_acc < *b) {
            best = Some((loss_acc, candidate));
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| TomoError::numerical("no finite initialization candidate found"))
}

/// Per-epoch record of the training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats<T> {
    pub epoch: usize,
    pub train_loss: T,
    pub val_nmse: Option<T>,
    pub learning_rate: T,
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainResult<T> {
    pub params: NetworkParams<T>,
    pub curve: Vec<EpochStats<T>>,
    pub optimizer: OptimizerState<T>,
}

/// Minimize the empirical loss over the 2K scalars.
///
/// Deterministic for a fixed seed: sample order is drawn from a counter-mode
/// generator and gradient accumulation folds in batch order, so the result is
/// independent of the worker count. With `cfg.progressive` (default) the
/// depth grows one layer at a time, each new layer warm-started from the last
/// trained one, followed by a full-depth pass on the remaining epoch budget.
pub fn train<T: Real>(
    dataset: &[TrainingSample<T>],
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    net_init: &NetworkParams<T>,
    cfg: &TrainConfig<T>,
    validation: Option<&[TrainingSample<T>]>,
) -> Result<TrainResult<T>> {
    cfg.validate()?;
    net_init.validate()?;
    let dataset: Vec<TrainingSample<T>> = dataset.iter().map(normalize_sample).collect();
    let validation: Option<Vec<TrainingSample<T>>> =
        validation.map(|v| v.iter().map(normalize_sample).collect());
    let dataset = dataset.as_slice();
    let validation = validation.as_deref();
    let k = net_init.layers();
    if !cfg.progressive || k == 1 || cfg.epochs == 0 {
        return train_fixed_depth(dataset, steering, weights, net_init, cfg, validation);
    }
    let stage_epochs = (cfg.epochs / (k + 1)).max(1);
    let final_epochs = cfg.epochs.saturating_sub(stage_epochs * k);
    let mut stage_params = NetworkParams {
        mu: vec![net_init.mu[0]],
        beta: vec![net_init.beta[0]],
        epsilon_rule: net_init.epsilon_rule,
        mode: net_init.mode,
        geometry_hash: net_init.geometry_hash,
    };
    let mut curve: Vec<EpochStats<T>> = Vec::new();
    let mut last = None;
    for stage in 0..k {
        if stage > 0 {
            let tail_mu = *stage_params.mu.last().expect("nonempty");
            let tail_beta = *stage_params.beta.last().expect("nonempty");
            stage_params.mu.push(tail_mu);
            stage_params.beta.push(tail_beta);
        }
        let epochs = if stage + 1 == k { stage_epochs + final_epochs } else { stage_epochs };
        let mut stage_cfg = cfg.clone();
        stage_cfg.epochs = epochs;
        stage_cfg.seed = derive_seed(cfg.seed, 50, stage as u64);
        let out = train_fixed_depth(
            dataset,
            steering,
            weights,
            &stage_params,
            &stage_cfg,
            validation,
        )?;
        stage_params = out.params.clone();
        for e in &out.curve {
            let mut e = e.clone();
            e.epoch = curve.len();
            curve.push(e);
        }
        last = Some(out.optimizer);
    }
    let optimizer = last.expect("at least one stage");
    Ok(TrainResult { params: stage_params, curve, optimizer })
}

fn train_fixed_depth<T: Real>(
    dataset: &[TrainingSample<T>],
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    net_init: &NetworkParams<T>,
    cfg: &TrainConfig<T>,
    validation: Option<&[TrainingSample<T>]>,
) -> Result<TrainResult<T>> {
    if dataset.is_empty() {
        return Err(TomoError::invalid("training dataset is empty"));
    }
    if weights.geometry_hash() != steering.geometry_hash() {
        return Err(TomoError::HashMismatch(
            "weights do not match the steering matrix".into(),
        ));
    }
    let k = net_init.layers();
    // With nonnegativity clamping on (the default) the scalars are optimized
    // in log space: Adam steps become multiplicative, which handles the very
    // different natural scales of mu and beta and keeps the optimizer from
    // jumping across the narrow band where the shrinkage stays alive.
    let log_space = cfg.clamp_nonneg;
    let floor = T::of(MU_FLOOR);
    let encode = |p: T| if log_space { p.max(floor).ln() } else { p };
    let mut flat: Vec<T> = net_init
        .mu
        .iter()
        .chain(net_init.beta.iter())
        .map(|&p| encode(p))
        .collect();
    let decode = |q: T, is_mu: bool| -> T {
        if log_space {
            q.exp().max(floor)
        } else if is_mu {
            q.max(floor)
        } else {
            q
        }
    };
    let mut opt = OptimizerState::new(cfg.optimizer, 2 * k);
    let mut lr = cfg.learning_rate;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = T::infinity();
    let mut best_flat = flat.clone();
    let mut stall = 0usize;
    let mut params = net_init.clone();

    // Per-sample weights equalize label energy, turning each term into an
    // NMSE; terms are additionally clipped at 1 (the loss of the all-zero
    // output) with zero gradient when clipped. Under plain MSE the noisiest
    // samples reward silence more than any live reconstruction and the
    // mixed-protocol optimum collapses to the dead basin; with equalize+clip
    // a sample the network cannot help simply stops contributing instead of
    // dragging every parameter toward zero output.
    let sample_weights: Vec<T> = dataset
        .iter()
        .map(|s| {
            let e: T = s.label.values.iter().map(|c| c.norm_sqr()).sum();
            T::one() / e.max(T::of(1e-2))
        })
        .collect();
    let clip = T::one();

    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, 10, epoch as u64));
        fisher_yates(&mut indices, &mut rng);
        let mut loss_sum = T::zero();
        for batch in indices.chunks(cfg.batch_size) {
            for i in 0..k {
                params.mu[i] = decode(flat[i], true);
                params.beta[i] = decode(flat[k + i], false);
            }
            let per_sample: Result<Vec<(T, Vec<T>, Vec<T>)>> = batch
                .par_iter()
                .map(|&idx| sample_gradient(&dataset[idx], steering, weights, &params))
                .collect();
            let per_sample = per_sample?;
            let scale = T::one() / T::of(batch.len() as f64);
            let mut grad = vec![T::zero(); 2 * k];
            for (&idx, (loss, dmu, dbeta)) in batch.iter().zip(per_sample.iter()) {
                let weighted = *loss * sample_weights[idx];
                // Above the clip the slope drops to 5%: enough pressure to
                // keep noise leakage on hopeless samples in check without
                // letting them dominate.
                let (term, gscale) = if weighted >= clip {
                    (clip + T::of(0.05) * (weighted - clip), T::of(0.05))
                } else {
                    (weighted, T::one())
                };
                loss_sum = loss_sum + term;
                let ws = sample_weights[idx] * scale * gscale;
                for i in 0..k {
                    grad[i] = grad[i] + dmu[i] * ws;
                    grad[k + i] = grad[k + i] + dbeta[i] * ws;
                }
            }
            if log_space {
                // chain rule through p = exp(q)
                for i in 0..k {
                    grad[i] = grad[i] * params.mu[i];
                    grad[k + i] = grad[k + i] * params.beta[i];
                }
            }
            opt.update(&mut flat, &grad, lr);
            if !log_space {
                for m in flat[..k].iter_mut() {
                    *m = m.max(floor);
                }
            }
        }
        let train_loss = loss_sum / T::of(dataset.len() as f64);
        if !train_loss.is_finite() {
            return Err(TomoError::numerical(format!(
                "training diverged at epoch {epoch}: loss is not finite (lr {lr})"
            )));
        }
        for i in 0..k {
            params.mu[i] = decode(flat[i], true);
            params.beta[i] = decode(flat[k + i], false);
        }
        let val_nmse = match validation {
            Some(val) if !val.is_empty() => Some(validation_nmse(val, steering, weights, &params)?),
            _ => None,
        };
        curve.push(EpochStats { epoch, train_loss, val_nmse, learning_rate: lr });

        // Reduce-on-plateau; remember the best epoch so a late slide into the
        // dead basin cannot poison the returned parameters.
        let improved = train_loss < best - T::of(1e-4) * best.abs().max(T::of(1e-30));
        if train_loss < best {
            best_flat.copy_from_slice(&flat);
        }
        if improved {
            best = train_loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.lr_patience {
                lr = lr * cfg.lr_factor;
                stall = 0;
            }
        }
    }
    if cfg.epochs > 0 {
        flat.copy_from_slice(&best_flat);
    }
    for i in 0..k {
        params.mu[i] = decode(flat[i], true);
        params.beta[i] = decode(flat[k + i], false);
    }
    Ok(TrainResult { params, curve, optimizer: opt })
}

/// Mean per-sample NMSE of the network over a dataset (evaluated through the
/// same unit-peak gauge the deployed solver uses; NMSE itself is invariant to
/// the joint rescaling).
pub fn validation_nmse<T: Real>(
    samples: &[TrainingSample<T>],
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    params: &NetworkParams<T>,
) -> Result<T> {
    let values: Result<Vec<T>> = samples
        .par_iter()
        .map(|s| {
            let s = normalize_sample(s);
            let (out, _) = forward(&s.measurement, steering, weights, params, false)?;
            nmse(&out.values, &s.label.values)
        })
        .collect();
    let values = values?;
    Ok(values.iter().copied().sum::<T>() / T::of(values.len() as f64))
}

/// One row of a gradient verification report.
#[derive(Debug, Clone)]
pub struct GradRow<T> {
    pub name: String,
    pub analytic: T,
    pub finite_diff: T,
    pub rel_error: T,
    /// True when some shrinkage argument sits within the margin of its
    /// threshold in the layers this coordinate feeds, making the loss locally
    /// non-smooth in the coordinate.
    pub kink_adjacent: bool,
}

#[derive(Debug, Clone)]
pub struct GradientReport<T> {
    pub rows: Vec<GradRow<T>>,
}

impl<T: Real> GradientReport<T> {
    /// Fraction of non-kink coordinates whose relative error stays below `tol`.
    pub fn pass_fraction(&self, tol: T) -> T {
        let eligible: Vec<&GradRow<T>> = self.rows.iter().filter(|r| !r.kink_adjacent).collect();
        if eligible.is_empty() {
            return T::one();
        }
        let pass = eligible.iter().filter(|r| r.rel_error < tol).count();
        T::of(pass as f64) / T::of(eligible.len() as f64)
    }
}

/// Compare analytic gradients against central finite differences on one
/// sample. Coordinates whose layers sit within `kink_margin` of a shrinkage
/// boundary are flagged rather than trusted.
pub fn finite_diff_check<T: Real>(
    params: &NetworkParams<T>,
    sample: &TrainingSample<T>,
    steering: &SteeringMatrix<T>,
    weights: &AlistaWeights<T>,
    h: T,
    kink_margin: T,
) -> Result<GradientReport<T>> {
    if !(h > T::zero()) {
        return Err(TomoError::invalid("finite-difference step must be positive"));
    }
    let k = params.layers();
    let (_, dmu, dbeta) = sample_gradient(sample, steering, weights, params)?;

    // Distance to the nearest shrinkage boundary per layer, from the base run.
    let (_, trace) = forward(&sample.measurement, steering, weights, params, true)?;
    let trace = trace.expect("trace requested");
    let layer_margin: Vec<T> = (0..k)
        .map(|layer| {
            trace.z[layer]
                .iter()
                .zip(trace.theta[layer].iter())
                .map(|(z, th)| (z.norm() - *th).abs())
                .fold(T::infinity(), T::min)
        })
        .collect();
    // A coordinate of layer j feeds every layer >= j.
    let suffix_kink: Vec<bool> = (0..k)
        .map(|j| layer_margin[j..].iter().any(|m| *m <= kink_margin))
        .collect();

    let loss_at = |flat: &[T]| -> Result<T> {
        let mut p = params.clone();
        p.mu.copy_from_slice(&flat[..k]);
        p.beta.copy_from_slice(&flat[k..]);
        let (out, _) = forward(&sample.measurement, steering, weights, &p, false)?;
        Ok(sample_loss(&out.values, &sample.label.values))
    };

    let base: Vec<T> = params.mu.iter().chain(params.beta.iter()).copied().collect();
    let mut rows = Vec::with_capacity(2 * k);
    for j in 0..2 * k {
        let layer = j % k;
        // Keep mu positive under the probe.
        let h_eff = if j < k { h.min(base[j] / T::of(2.0)).max(T::of(1e-12)) } else { h };
        let mut plus = base.clone();
        plus[j] = plus[j] + h_eff;
        let mut minus = base.clone();
        minus[j] = minus[j] - h_eff;
        let fd = (loss_at(&plus)? - loss_at(&minus)?) / (T::of(2.0) * h_eff);
        let analytic = if j < k { dmu[j] } else { dbeta[j - k] };
        let denom = analytic.abs().max(fd.abs()).max(T::of(1e-12));
        rows.push(GradRow {
            name: if j < k { format!("mu[{layer}]") } else { format!("beta[{layer}]") },
            analytic,
            finite_diff: fd,
            rel_error: (analytic - fd).abs() / denom,
            kink_adjacent: suffix_kink[layer],
        });
    }
    Ok(GradientReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImagingGeometry;
    use crate::net::EpsilonRule;
    use crate::simulate::{simulate_pixel, ReflectivityProfile, SnrSpec};
    use crate::weights::precompute_w;

    fn setup(l: usize) -> (ImagingGeometry<f64>, SteeringMatrix<f64>, AlistaWeights<f64>) {
        let g =
            ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, l, -12.5, 12.5, 0.0).unwrap();
        let a = g.build_steering();
        let w = precompute_w(&a, 0.0).unwrap();
        (g, a, w)
    }

    fn one_sample(
        g: &ImagingGeometry<f64>,
        a: &SteeringMatrix<f64>,
        seed: u64,
    ) -> TrainingSample<f64> {
        let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
        label.values[g.l() / 3] = Complex::new(1.0, 0.4);
        label.values[2 * g.l() / 3] = Complex::new(-0.5, 0.9);
        let measurement = simulate_pixel(&label, a, SnrSpec::Db(20.0), seed).unwrap();
        TrainingSample { measurement, label }
    }

    #[test]
    fn loss_identities() {
        let a: Vec<Vec<Complex<f64>>> = vec![vec![Complex::new(1.0, 0.0), Complex::new(0.0, 2.0)]];
        assert_eq!(batch_loss(&a, &a).unwrap(), 0.0);
        let b = vec![vec![Complex::new(2.0, 0.0), Complex::new(0.0, 2.0)]];
        // single unit-vector residual
        assert!((batch_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        // scaling residuals by c scales loss by c^2
        let c = vec![vec![Complex::new(4.0, 0.0), Complex::new(0.0, 2.0)]];
        assert!((batch_loss(&c, &a).unwrap() - 9.0).abs() < 1e-15);
        assert!(batch_loss::<f64>(&[], &[]).is_err());
    }

    #[test]
    fn zero_sample_gives_zero_gradients() {
        let (g, a, w) = setup(32);
        let sample = TrainingSample {
            measurement: crate::simulate::PixelMeasurement {
                values: vec![Complex::zero(); a.n()],
                snr: SnrSpec::Noiseless,
            },
            label: ReflectivityProfile::zeros(g.l(), g.hash()),
        };
        let params = NetworkParams::constant_init(
            4,
            0.05,
            0.05,
            EpsilonRule::Fixed(0.01),
            ThresholdMode::Adaptive,
            a.geometry_hash(),
        )
        .unwrap();
        let (loss, dmu, dbeta) = sample_gradient(&sample, &a, &w, &params).unwrap();
        assert_eq!(loss, 0.0);
        assert!(dmu.iter().all(|v| *v == 0.0));
        assert!(dbeta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn one_layer_gradients_match_closed_form() {
        // K = 1 on a tiny geometry. With gamma^0 = 0 the pre-shrinkage signal
        // is z = beta * c with c = W^H y, whose phase does not depend on beta.
        // Writing the active entries in polar form gives scalar expressions
        // for dL/dbeta and dL/dmu that we evaluate directly.
        let g = ImagingGeometry::uniform_array(0.05, 100.0, 2, 0.3, 2, -2.0, 2.0, 0.0).unwrap();
        let a = g.build_steering();
        let w = precompute_w(&a, 1e-9).unwrap();
        let mut label = ReflectivityProfile::zeros(2, g.hash());
        label.values[0] = Complex::new(0.4, -0.2);
        let y = simulate_pixel(&label, &a, SnrSpec::Db(25.0), 3).unwrap();
        let sample = TrainingSample { measurement: y.clone(), label: label.clone() };

        let beta = 0.3f64;
        let mu = 0.02f64;
        let eps = 0.01f64;
        let params = NetworkParams::constant_init(
            1,
            mu,
            beta,
            EpsilonRule::Fixed(eps),
            ThresholdMode::Adaptive,
            a.geometry_hash(),
        )
        .unwrap();
        let (_, dmu, dbeta) = sample_gradient(&sample, &a, &w, &params).unwrap();

        let c = w.matrix().adjoint_matvec(&y.values);
        let mut dbeta_hand = 0.0;
        let mut dmu_hand = 0.0;
        for i in 0..2 {
            let cn = c[i].norm();
            let r = beta * cn;
            let theta = mu / (r + eps);
            if r <= theta {
                continue;
            }
            let phi = c[i] / cn;
            let gamma_i = phi.scale(r - theta);
            let resid = gamma_i - label.values[i];
            let dgamma_dbeta = phi.scale(cn + mu * cn / ((r + eps) * (r + eps)));
            let dgamma_dmu = phi.scale(-1.0 / (r + eps));
            dbeta_hand += 2.0 * (resid.conj() * dgamma_dbeta).re;
            dmu_hand += 2.0 * (resid.conj() * dgamma_dmu).re;
        }
        assert!((dbeta[0] - dbeta_hand).abs() < 1e-10, "{} vs {}", dbeta[0], dbeta_hand);
        assert!((dmu[0] - dmu_hand).abs() < 1e-10, "{} vs {}", dmu[0], dmu_hand);
    }

    #[test]
    fn finite_diff_report_shape_and_agreement() {
        let (g, a, w) = setup(48);
        let sample = one_sample(&g, &a, 5);
        let params = init_params(
            std::slice::from_ref(&sample),
            &a,
            &w,
            5,
            ThresholdMode::Adaptive,
            EpsilonRule::RelativeToPeak(0.005),
        )
        .unwrap();
        let report = finite_diff_check(&params, &sample, &a, &w, 1e-6, 1e-5).unwrap();
        assert_eq!(report.rows.len(), 10);
        assert!(
            report.pass_fraction(1e-4) >= 0.95,
            "pass fraction {}",
            report.pass_fraction(1e-4)
        );
    }

    #[test]
    fn constant_mode_gradients_agree_with_finite_differences() {
        let (g, a, w) = setup(48);
        let sample = one_sample(&g, &a, 8);
        let params = init_params(
            std::slice::from_ref(&sample),
            &a,
            &w,
            4,
            ThresholdMode::Constant,
            EpsilonRule::Fixed(0.01),
        )
        .unwrap();
        let report = finite_diff_check(&params, &sample, &a, &w, 1e-6, 1e-5).unwrap();
        assert!(report.pass_fraction(1e-4) >= 0.95);
    }

    #[test]
    fn kink_adjacent_coordinate_is_flagged_not_failed() {
        let (g, a, w) = setup(16);
        // Constant mode with mu equal to one |z| value puts that entry exactly
        // on the shrinkage boundary.
        let sample = one_sample(&g, &a, 13);
        let probe = NetworkParams::constant_init(
            1,
            0.05,
            0.1,
            EpsilonRule::Fixed(0.01),
            ThresholdMode::Constant,
            a.geometry_hash(),
        )
        .unwrap();
        let (_, trace) = forward(&sample.measurement, &a, &w, &probe, true).unwrap();
        let z0 = trace.unwrap().z[0][4].norm();
        let mut tuned = probe.clone();
        tuned.mu = vec![z0 + 5e-8];
        let report = finite_diff_check(&tuned, &sample, &a, &w, 1e-6, 1e-5).unwrap();
        assert!(report.rows.iter().all(|r| r.kink_adjacent));
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (g, a, w) = setup(32);
        let data = vec![one_sample(&g, &a, 1)];
        let init = init_params(
            &data,
            &a,
            &w,
            3,
            ThresholdMode::Adaptive,
            EpsilonRule::RelativeToPeak(0.005),
        )
        .unwrap();
        let cfg = TrainConfig::new(0, 7);
        let out = train(&data, &a, &w, &init, &cfg, None).unwrap();
        assert_eq!(out.params, init);
        assert!(out.curve.is_empty());
    }

    #[test]
    fn single_sample_overfits() {
        let (g, a, w) = setup(32);
        let data = vec![one_sample(&g, &a, 2)];
        let init = init_params(
            &data,
            &a,
            &w,
            6,
            ThresholdMode::Adaptive,
            EpsilonRule::RelativeToPeak(0.005),
        )
        .unwrap();
        let mut cfg = TrainConfig::new(500, 3);
        cfg.batch_size = 1;
        cfg.learning_rate = 0.01;
        let out = train(&data, &a, &w, &init, &cfg, None).unwrap();
        let first = out.curve.first().unwrap().train_loss;
        let last = out.curve.last().unwrap().train_loss;
        assert!(last < 1e-3 * first, "loss {first} -> {last}");
        // after warmup the loss should not increase
        let warm = &out.curve[10..];
        let mut best = f64::INFINITY;
        for e in warm {
            assert!(e.train_loss <= best * 1.5 + 1e-12, "loss spike at {}", e.epoch);
            best = best.min(e.train_loss);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (g, a, w) = setup(32);
        let data: Vec<_> = (0..8).map(|i| one_sample(&g, &a, i)).collect();
        let init = init_params(
            &data,
            &a,
            &w,
            4,
            ThresholdMode::Adaptive,
            EpsilonRule::RelativeToPeak(0.005),
        )
        .unwrap();
        let cfg = TrainConfig::new(20, 11);
        let r1 = train(&data, &a, &w, &init, &cfg, None).unwrap();
        let r2 = train(&data, &a, &w, &init, &cfg, None).unwrap();
        assert_eq!(r1.params, r2.params, "same seed must give identical parameters");
        assert_eq!(r1.curve, r2.curve);
    }
}
