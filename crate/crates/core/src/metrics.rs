//! Quantitative evaluation: reconstruction error metrics, the elevation
//! CRLB for closely spaced scatterers, peak extraction and Monte Carlo
//! detection-success-rate studies.

use crate::error::{Result, TomoError};
use crate::geometry::ImagingGeometry;
use crate::scalar::Real;
use crate::simulate::{add_noise, derive_seed, PixelMeasurement, SnrSpec};
use crate::solvers::Solver;
use num_complex::Complex;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// PSNR reported for identical grids instead of infinity.
pub const PSNR_CAP_DB: f64 = 300.0;

/// Normalized squared error `||x - ref||^2 / ||ref||^2`.
pub fn nmse<T: Real>(x: &[Complex<T>], reference: &[Complex<T>]) -> Result<T> {
    if x.len() != reference.len() {
        return Err(TomoError::invalid("nmse shape mismatch"));
    }
    let ref_energy: T = reference.iter().map(|c| c.norm_sqr()).sum();
    if ref_energy.is_zero() {
        return Err(TomoError::invalid("nmse reference has zero energy"));
    }
    let err: T = x
        .iter()
        .zip(reference.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err / ref_energy)
}

/// A real-valued voxel grid (range x azimuth x elevation magnitudes).
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid<T> {
    pub nr: usize,
    pub na: usize,
    pub nz: usize,
    pub data: Vec<T>,
}

impl<T: Real> VoxelGrid<T> {
    pub fn new(nr: usize, na: usize, nz: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nr * na * nz {
            return Err(TomoError::invalid("voxel grid size mismatch"));
        }
        Ok(Self { nr, na, nz, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn idx(&self, r: usize, a: usize, z: usize) -> usize {
        (r * self.na + a) * self.nz + z
    }

    pub fn peak(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(*v))
    }

    /// Copy with unit peak magnitude (unchanged when already all zero).
    pub fn peak_normalized(&self) -> Self {
        let p = self.peak();
        if p.is_zero() {
            return self.clone();
        }
        Self {
            nr: self.nr,
            na: self.na,
            nz: self.nz,
            data: self.data.iter().map(|v| *v / p).collect(),
        }
    }
}

fn check_same_shape<T: Real>(a: &VoxelGrid<T>, b: &VoxelGrid<T>) -> Result<()> {
    if a.nr != b.nr || a.na != b.na || a.nz != b.nz {
        return Err(TomoError::invalid("voxel grids have different shapes"));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB between peak-normalized grids:
/// `-10 log10( ||x - ref||^2 / num(ref) )`, capped at [`PSNR_CAP_DB`].
pub fn psnr<T: Real>(x: &VoxelGrid<T>, reference: &VoxelGrid<T>) -> Result<T> {
    check_same_shape(x, reference)?;
    if reference.peak().is_zero() {
        return Err(TomoError::invalid("psnr reference is identically zero"));
    }
    let xn = x.peak_normalized();
    let rn = reference.peak_normalized();
    let n = rn.len();
    let mse: T = xn
        .data
        .iter()
        .zip(rn.data.iter())
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum::<T>()
        / T::of(n as f64);
    if mse.is_zero() {
        return Ok(T::of(PSNR_CAP_DB));
    }
    let v = -T::of(10.0) * mse.log10();
    Ok(v.min(T::of(PSNR_CAP_DB)))
}

/// Global-statistics structural similarity over magnitude voxels, clamped to
/// [0, 1]. `k1`/`k2` default to 0.01/0.03 and `dynamic_range` to the peak of
/// the normalized data (1.0).
pub fn ssim<T: Real>(
    x: &VoxelGrid<T>,
    reference: &VoxelGrid<T>,
    k1: T,
    k2: T,
    dynamic_range: T,
) -> Result<T> {
    check_same_shape(x, reference)?;
    let n = T::of(x.len() as f64);
    if x.is_empty() {
        return Err(TomoError::invalid("ssim on empty grids"));
    }
    let mean = |g: &VoxelGrid<T>| g.data.iter().copied().sum::<T>() / n;
    let mx = mean(x);
    let my = mean(reference);
    let mut vx = T::zero();
    let mut vy = T::zero();
    let mut cov = T::zero();
    for (a, b) in x.data.iter().zip(reference.data.iter()) {
        let da = *a - mx;
        let db = *b - my;
        vx = vx + da * da;
        vy = vy + db * db;
        cov = cov + da * db;
    }
    vx = vx / n;
    vy = vy / n;
    cov = cov / n;
    let c1 = (k1 * dynamic_range) * (k1 * dynamic_range);
    let c2 = (k2 * dynamic_range) * (k2 * dynamic_range);
    let v = ((T::of(2.0) * mx * my + c1) * (T::of(2.0) * cov + c2))
        / ((mx * mx + my * my + c1) * (vx + vy + c2));
    Ok(v.max(T::zero()).min(T::one()))
}

/// Joint grey-level / neighborhood-mean entropy of a voxel grid.
///
/// Magnitudes are peak-normalized and quantized to 256 grey levels. Each
/// voxel pairs its level `i` with the rounded mean level `j` of its 3x3x3
/// neighborhood (in-bounds cells only, center included); the entropy of the
/// joint histogram `-sum P ln P` is returned. Constant grids give 0 and the
/// value is invariant under positive scaling.
pub fn entropy3d<T: Real>(grid: &VoxelGrid<T>) -> Result<T> {
    if grid.is_empty() {
        return Err(TomoError::invalid("entropy of an empty grid"));
    }
    let peak = grid.peak();
    let quantize = |v: T| -> usize {
        if peak.is_zero() {
            return 0;
        }
        let q = (v / peak * T::of(255.0)).round().to_f64_lossy() as isize;
        q.clamp(0, 255) as usize
    };
    let levels: Vec<usize> = grid.data.iter().map(|v| quantize(*v)).collect();
    let mut hist = vec![0u64; 256 * 256];
    let (nr, na, nz) = (grid.nr as isize, grid.na as isize, grid.nz as isize);
    for r in 0..nr {
        for a in 0..na {
            for z in 0..nz {
                let mut sum = 0usize;
                let mut count = 0usize;
                for dr in -1..=1 {
                    for da in -1..=1 {
                        for dz in -1..=1 {
                            let (rr, aa, zz) = (r + dr, a + da, z + dz);
                            if rr < 0 || rr >= nr || aa < 0 || aa >= na || zz < 0 || zz >= nz {
                                continue;
                            }
                            sum += levels
                                [grid.idx(rr as usize, aa as usize, zz as usize)];
                            count += 1;
                        }
                    }
                }
                let i = levels[grid.idx(r as usize, a as usize, z as usize)];
                let j = ((sum as f64 / count as f64).round() as usize).min(255);
                hist[i * 256 + j] += 1;
            }
        }
    }
    let total = grid.len() as f64;
    let mut entropy = 0.0f64;
    for &f in &hist {
        if f == 0 {
            continue;
        }
        let p = f as f64 / total;
        entropy -= p * p.ln();
    }
    Ok(T::of(entropy))
}

/// CRLB outputs for a double-scatterer configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrlbSigma<T> {
    /// Single-scatterer elevation CRLB.
    pub sigma_s: T,
    /// Interference inflation factor (clamped at 1).
    pub c0: T,
    /// Double-scatterer bound `c0 * sigma_s`.
    pub sigma_d: T,
}

/// Elevation CRLB for two scatterers at normalized spacing `alpha` with phase
/// difference `delta_phi`, at linear SNR `snr`:
///
/// ```text
/// sigma_s = lambda R0 / (4 pi sqrt(2 N snr) sigma_b)
/// c0^2    = max( 40 a^-2 (1 - a/3) /
///                (9 - 6(3-2a) cos(2 dphi - 2 pi a / N) + (3-2a)^2), 1 )
/// ```
///
/// `sigma_b` is the standard deviation of the baseline positions (for a
/// uniform linear array of aperture B this is close to `B / sqrt(12)`).
/// Substituting the elevation resolution for the aperture here would shrink
/// the bound an order of magnitude below what any estimator can reach.
pub fn crlb_sigma<T: Real>(
    geometry: &ImagingGeometry<T>,
    snr_linear: T,
    alpha: T,
    delta_phi: T,
) -> Result<CrlbSigma<T>> {
    if !(snr_linear > T::zero()) {
        return Err(TomoError::invalid("snr must be positive"));
    }
    if !(alpha > T::zero()) {
        return Err(TomoError::invalid("alpha must be positive"));
    }
    let n = T::of(geometry.n() as f64);
    let mean_b: T = geometry.baselines_m().iter().copied().sum::<T>() / n;
    let var_b: T = geometry
        .baselines_m()
        .iter()
        .map(|&b| (b - mean_b) * (b - mean_b))
        .sum::<T>()
        / n;
    let sigma_b = var_b.sqrt();
    if sigma_b.is_zero() {
        return Err(TomoError::invalid("baselines have zero spread"));
    }
    let four_pi = T::of(4.0) * T::PI();
    let sigma_s = geometry.wavelength_m() * geometry.range_m()
        / (four_pi * (T::of(2.0) * n * snr_linear).sqrt() * sigma_b);
    let three_minus = T::of(3.0) - T::of(2.0) * alpha;
    let num = T::of(40.0) / (alpha * alpha) * (T::one() - alpha / T::of(3.0));
    let ang = T::of(2.0) * delta_phi - T::of(2.0) * T::PI() * alpha / n;
    let den = T::of(9.0) - T::of(6.0) * three_minus * ang.cos() + three_minus * three_minus;
    let c0 = (num / den).max(T::one()).sqrt();
    Ok(CrlbSigma { sigma_s, c0, sigma_d: c0 * sigma_s })
}

/// A local maximum extracted from a reflectivity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak<T> {
    pub index: usize,
    /// Grid elevation, optionally refined by parabolic interpolation.
    pub elevation_m: T,
    pub magnitude: T,
}

/// Extract up to `max_peaks` local maxima of `|gamma|` above
/// `floor_fraction * max |gamma|`, strongest first. With `refine`, a 3-point
/// parabolic fit shifts each peak by at most half a grid cell.
pub fn extract_peaks<T: Real>(
    gamma: &[Complex<T>],
    elevation_grid: &[T],
    max_peaks: usize,
    floor_fraction: T,
    refine: bool,
) -> Result<Vec<Peak<T>>> {
    if gamma.len() != elevation_grid.len() {
        return Err(TomoError::invalid("profile and grid lengths differ"));
    }
    if !(floor_fraction > T::zero() && floor_fraction < T::one()) {
        return Err(TomoError::invalid("floor_fraction must lie in (0, 1)"));
    }
    let mags: Vec<T> = gamma.iter().map(|c| c.norm()).collect();
    let peak = mags.iter().fold(T::zero(), |m, v| m.max(*v));
    if peak.is_zero() {
        return Ok(Vec::new());
    }
    let floor = floor_fraction * peak;
    let l = mags.len();
    let spacing = if l > 1 { elevation_grid[1] - elevation_grid[0] } else { T::one() };
    let mut found: Vec<Peak<T>> = Vec::new();
    for i in 0..l {
        let m = mags[i];
        if m < floor {
            continue;
        }
        let left_ok = i == 0 || mags[i - 1] <= m;
        let right_ok = i + 1 == l || mags[i + 1] < m;
        if !(left_ok && right_ok) {
            continue;
        }
        let mut elevation = elevation_grid[i];
        if refine && i > 0 && i + 1 < l {
            let (a, b, c) = (mags[i - 1], mags[i], mags[i + 1]);
            let denom = a - T::of(2.0) * b + c;
            if denom.abs() > T::epsilon() {
                let delta = (T::of(0.5) * (a - c) / denom)
                    .max(-T::of(0.5))
                    .min(T::of(0.5));
                elevation = elevation + delta * spacing;
            }
        }
        found.push(Peak { index: i, elevation_m: elevation, magnitude: m });
    }
    found.sort_by(|a, b| b.magnitude.partial_cmp(&a.magnitude).expect("finite magnitudes"));
    found.truncate(max_peaks);
    Ok(found)
}

/// Monte Carlo detection-success-rate configuration for double scatterers.
#[derive(Debug, Clone)]
pub struct DsrConfig<T> {
    pub snr_db: T,
    /// Normalized spacing `d_s / rho_s`.
    pub alpha: T,
    /// Amplitude ratio of the stronger to the weaker scatterer (>= 1).
    pub amp_ratio: T,
    /// Fixed phase difference between the two scatterers, or `None` to draw
    /// both phases independently per trial (the CRLB gate then uses the
    /// realized difference). The common phase is always randomized.
    pub phase_diff_rad: Option<T>,
    pub trials: usize,
    pub crlb_multiplier: T,
    /// Relative floor for peak extraction.
    pub peak_floor_fraction: T,
}

impl<T: Real> DsrConfig<T> {
    pub fn new(snr_db: T, alpha: T) -> Self {
        DsrConfig {
            snr_db,
            alpha,
            amp_ratio: T::one(),
            phase_diff_rad: None,
            trials: 1000,
            crlb_multiplier: T::of(3.0),
            peak_floor_fraction: T::of(0.05),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(TomoError::invalid("trials must be at least 1"));
        }
        if !(self.alpha > T::zero()) {
            return Err(TomoError::invalid("alpha must be positive"));
        }
        if self.amp_ratio < T::one() {
            return Err(TomoError::invalid("amp_ratio is stronger/weaker, must be >= 1"));
        }
        Ok(())
    }
}

/// Detection-success-rate estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsrResult<T> {
    pub rate: T,
    pub successes: usize,
    pub trials: usize,
    pub std_error: T,
}

/// Run the double-scatterer Monte Carlo.
///
/// Each trial places two scatterers `alpha * rho_s` apart at a random
/// absolute elevation (kept inside the grid), simulates the measurement at
/// the configured SNR from the exact off-grid positions, solves, extracts two
/// peaks, and counts success when both estimates fall within
/// `crlb_multiplier * sigma_d` and `0.5 d_s` of their true elevations under
/// the best pairing. Fewer than two extracted peaks counts as failure.
pub fn dsr_monte_carlo<T: Real>(
    cfg: &DsrConfig<T>,
    geometry: &ImagingGeometry<T>,
    solver: &Solver<T>,
    rng_seed: u64,
) -> Result<DsrResult<T>> {
    cfg.validate()?;
    let rho = geometry.rayleigh_resolution()?;
    let spacing = cfg.alpha * rho;
    let snr_linear = T::of(10.0).powf(cfg.snr_db / T::of(10.0));
    let fixed_gate = match cfg.phase_diff_rad {
        Some(dphi) => {
            let bound = crlb_sigma(geometry, snr_linear, cfg.alpha, dphi)?;
            Some(cfg.crlb_multiplier * bound.sigma_d)
        }
        None => None,
    };
    let gate_half = T::of(0.5) * spacing;
    let steering = geometry.build_steering();

    let pad = geometry.grid_spacing();
    let lo = geometry.grid_min() + spacing / T::of(2.0) + pad;
    let hi = geometry.grid_max() - spacing / T::of(2.0) - pad;
    if !(hi > lo) {
        return Err(TomoError::invalid("scatterer spacing exceeds the usable grid span"));
    }

    let successes = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(rng_seed, 20, trial as u64));
            let center = lo.to_f64_lossy()
                + rng.random::<f64>() * (hi.to_f64_lossy() - lo.to_f64_lossy());
            let s1 = T::of(center) - spacing / T::of(2.0);
            let s2 = T::of(center) + spacing / T::of(2.0);
            let phase1 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            let dphi = match cfg.phase_diff_rad {
                Some(d) => d,
                None => T::of(rng.random::<f64>() * 2.0 * std::f64::consts::PI),
            };
            let gate_crlb = match fixed_gate {
                Some(g) => g,
                None => {
                    let Ok(bound) = crlb_sigma(geometry, snr_linear, cfg.alpha, dphi) else {
                        return 0usize;
                    };
                    cfg.crlb_multiplier * bound.sigma_d
                }
            };
            let a1 = Complex::from_polar(T::one(), T::of(phase1));
            let a2 = Complex::from_polar(T::one() / cfg.amp_ratio, T::of(phase1) + dphi);
            let v1 = geometry.steering_vector_at(s1);
            let v2 = geometry.steering_vector_at(s2);
            let mut y: Vec<Complex<T>> = v1
                .iter()
                .zip(v2.iter())
                .map(|(u, v)| u * a1 + v * a2)
                .collect();
            let signal_power: T = y.iter().map(|c| c.norm_sqr()).sum();
            let sigma_sqr = signal_power / (T::of(geometry.n() as f64) * snr_linear);
            add_noise(&mut y, sigma_sqr, derive_seed(rng_seed, 21, trial as u64));
            let measurement = PixelMeasurement { values: y, snr: SnrSpec::Db(cfg.snr_db) };

            let Ok(profile) = solver.solve(&measurement, &steering) else {
                return 0usize;
            };
            let Ok(peaks) = extract_peaks(
                &profile.values,
                geometry.elevation_grid_m(),
                2,
                cfg.peak_floor_fraction,
                true,
            ) else {
                return 0usize;
            };
            if peaks.len() < 2 {
                return 0usize;
            }
            let (e1, e2) = (peaks[0].elevation_m, peaks[1].elevation_m);
            let direct = (e1 - s1).abs().max((e2 - s2).abs());
            let swapped = (e1 - s2).abs().max((e2 - s1).abs());
            let (err1, err2) = if direct <= swapped {
                ((e1 - s1).abs(), (e2 - s2).abs())
            } else {
                ((e1 - s2).abs(), (e2 - s1).abs())
            };
            let ok = err1 <= gate_crlb
                && err2 <= gate_crlb
                && err1 <= gate_half
                && err2 <= gate_half;
            usize::from(ok)
        })
        .sum::<usize>();

    let trials = cfg.trials;
    let rate = T::of(successes as f64) / T::of(trials as f64);
    let std_error = (rate * (T::one() - rate) / T::of(trials as f64)).sqrt();
    Ok(DsrResult { rate, successes, trials, std_error })
}

/// Bundle of the scene-level quality metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport<T> {
    pub nmse: T,
    pub psnr_db: T,
    pub ssim: T,
    pub entropy3d: T,
    pub runtime_s: T,
}

/// Spearman rank correlation of `y` against its index order; 1.0 means the
/// sequence increases monotonically. Used for trend assertions on sweeps.
pub fn spearman_against_order<T: Real>(y: &[T]) -> T {
    let n = y.len();
    if n < 2 {
        return T::one();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| y[i].partial_cmp(&y[j]).expect("finite values"));
    // Average ranks over ties.
    let mut ranks = vec![T::zero(); n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && y[order[j + 1]] == y[order[i]] {
            j += 1;
        }
        let avg = T::of((i + j) as f64 / 2.0);
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    let mean = T::of((n - 1) as f64 / 2.0);
    let mut num = T::zero();
    let mut dx = T::zero();
    let mut dy = T::zero();
    for (idx, r) in ranks.iter().enumerate() {
        let a = T::of(idx as f64) - mean;
        let b = *r - mean;
        num = num + a * b;
        dx = dx + a * a;
        dy = dy + b * b;
    }
    if dx.is_zero() || dy.is_zero() {
        return T::zero();
    }
    num / (dx * dy).sqrt()
}
