//! Whole-scene orchestration: run a per-pixel solver over a measurement
//! stack, assemble profile cubes and voxel grids, extract point clouds and
//! threshold maps, and bootstrap training sets from a baseline solver.

use crate::error::{Result, TomoError};
use crate::geometry::{ImagingGeometry, SteeringMatrix};
use crate::metrics::{extract_peaks, Peak, VoxelGrid};
use crate::net::forward;
use crate::scalar::Real;
use crate::simulate::{
    add_noise, PixelMeasurement, ReflectivityProfile, ScattererSet, SnrSpec, TrainingSample,
};
use crate::solvers::Solver;
use num_complex::Complex;
use num_traits::Zero;
use rayon::prelude::*;
use std::time::Instant;

/// Stack of co-registered channel measurements over a range-azimuth raster.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementStack<T> {
    pub n_azimuth: usize,
    pub n_range: usize,
    pub n_channels: usize,
    /// `[azimuth][range][channel]`, row-major.
    pub data: Vec<Complex<T>>,
    pub geometry_hash: u64,
}

impl<T: Real> MeasurementStack<T> {
    pub fn zeros(n_azimuth: usize, n_range: usize, n_channels: usize, geometry_hash: u64) -> Self {
        Self {
            n_azimuth,
            n_range,
            n_channels,
            data: vec![Complex::zero(); n_azimuth * n_range * n_channels],
            geometry_hash,
        }
    }

    pub fn pixel(&self, az: usize, rg: usize) -> &[Complex<T>] {
        let base = (az * self.n_range + rg) * self.n_channels;
        &self.data[base..base + self.n_channels]
    }

    pub fn pixel_mut(&mut self, az: usize, rg: usize) -> &mut [Complex<T>] {
        let base = (az * self.n_range + rg) * self.n_channels;
        &mut self.data[base..base + self.n_channels]
    }

    pub fn n_pixels(&self) -> usize {
        self.n_azimuth * self.n_range
    }
}

/// Per-pixel reflectivity profiles over the raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCube<T> {
    pub n_azimuth: usize,
    pub n_range: usize,
    pub l: usize,
    /// `[azimuth][range][elevation]`, row-major.
    pub data: Vec<Complex<T>>,
    pub geometry_hash: u64,
}

impl<T: Real> ProfileCube<T> {
    pub fn zeros(n_azimuth: usize, n_range: usize, l: usize, geometry_hash: u64) -> Self {
        Self {
            n_azimuth,
            n_range,
            l,
            data: vec![Complex::zero(); n_azimuth * n_range * l],
            geometry_hash,
        }
    }

    pub fn profile(&self, az: usize, rg: usize) -> &[Complex<T>] {
        let base = (az * self.n_range + rg) * self.l;
        &self.data[base..base + self.l]
    }

    /// Magnitude voxels ordered (range, azimuth, elevation), peak-normalized.
    pub fn to_voxels(&self) -> VoxelGrid<T> {
        let mut data = vec![T::zero(); self.data.len()];
        for az in 0..self.n_azimuth {
            for rg in 0..self.n_range {
                let p = self.profile(az, rg);
                for (z, v) in p.iter().enumerate() {
                    data[(rg * self.n_azimuth + az) * self.l + z] = v.norm();
                }
            }
        }
        let grid = VoxelGrid { nr: self.n_range, na: self.n_azimuth, nz: self.l, data };
        grid.peak_normalized()
    }
}

/// Final-layer threshold summaries captured next to a reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCube<T> {
    pub n_azimuth: usize,
    pub n_range: usize,
    pub l: usize,
    pub data: Vec<T>,
}

impl<T: Real> ThetaCube<T> {
    pub fn theta(&self, az: usize, rg: usize) -> &[T] {
        let base = (az * self.n_range + rg) * self.l;
        &self.data[base..base + self.l]
    }
}

/// Bookkeeping from a stack reconstruction.
#[derive(Debug, Clone)]
pub struct ReconstructReport {
    /// Pixels whose solve failed (zeroed in the cube).
    pub failed_pixels: Vec<(usize, usize)>,
    /// Summed per-pixel solve time.
    pub solver_time_s: f64,
    /// Wall-clock time of the whole pass.
    pub wall_time_s: f64,
}

/// Apply a solver to every pixel of the stack. Pixel order never affects the
/// result; failed pixels are recorded and left zero.
pub fn reconstruct_stack<T: Real>(
    stack: &MeasurementStack<T>,
    steering: &SteeringMatrix<T>,
    solver: &Solver<T>,
) -> Result<(ProfileCube<T>, ReconstructReport)> {
    if stack.n_channels != steering.n() {
        return Err(TomoError::invalid("stack channel count does not match steering rows"));
    }
    if stack.geometry_hash != steering.geometry_hash() {
        return Err(TomoError::HashMismatch(
            "stack and steering matrix come from different geometries".into(),
        ));
    }
    let wall = Instant::now();
    let l = steering.l();
    let pixels: Vec<(usize, usize)> = (0..stack.n_azimuth)
        .flat_map(|az| (0..stack.n_range).map(move |rg| (az, rg)))
        .collect();
    let results: Vec<(Vec<Complex<T>>, bool, f64)> = pixels
        .par_iter()
        .map(|&(az, rg)| {
            let y = PixelMeasurement {
                values: stack.pixel(az, rg).to_vec(),
                snr: SnrSpec::Noiseless,
            };
            let t0 = Instant::now();
            match solver.solve(&y, steering) {
                Ok(p) => (p.values, false, t0.elapsed().as_secs_f64()),
                Err(_) => (vec![Complex::zero(); l], true, t0.elapsed().as_secs_f64()),
            }
        })
        .collect();

    let mut cube =
        ProfileCube::zeros(stack.n_azimuth, stack.n_range, l, stack.geometry_hash);
    let mut failed = Vec::new();
    let mut solver_time = 0.0;
    for ((az, rg), (values, fail, dt)) in pixels.into_iter().zip(results) {
        let base = (az * stack.n_range + rg) * l;
        cube.data[base..base + l].copy_from_slice(&values);
        solver_time += dt;
        if fail {
            failed.push((az, rg));
        }
    }
    Ok((
        cube,
        ReconstructReport {
            failed_pixels: failed,
            solver_time_s: solver_time,
            wall_time_s: wall.elapsed().as_secs_f64(),
        },
    ))
}

/// Reconstruct with the unrolled network while capturing the final-layer
/// thresholds per pixel (for threshold-map export).
pub fn reconstruct_stack_with_theta<T: Real>(
    stack: &MeasurementStack<T>,
    steering: &SteeringMatrix<T>,
    weights: &crate::weights::AlistaWeights<T>,
    params: &crate::net::NetworkParams<T>,
) -> Result<(ProfileCube<T>, ThetaCube<T>, ReconstructReport)> {
    if stack.n_channels != steering.n() {
        return Err(TomoError::invalid("stack channel count does not match steering rows"));
    }
    if stack.geometry_hash != steering.geometry_hash() {
        return Err(TomoError::HashMismatch(
            "stack and steering matrix come from different geometries".into(),
        ));
    }
    let wall = Instant::now();
    let l = steering.l();
    let pixels: Vec<(usize, usize)> = (0..stack.n_azimuth)
        .flat_map(|az| (0..stack.n_range).map(move |rg| (az, rg)))
        .collect();
    let results: Vec<(Vec<Complex<T>>, Vec<T>, bool)> = pixels
        .par_iter()
        .map(|&(az, rg)| {
            let y = PixelMeasurement {
                values: stack.pixel(az, rg).to_vec(),
                snr: SnrSpec::Noiseless,
            };
            match forward(&y, steering, weights, params, true) {
                Ok((p, trace)) => {
                    let theta = trace
                        .map(|t| t.theta.last().cloned().unwrap_or_default())
                        .unwrap_or_default();
                    (p.values, theta, false)
                }
                Err(_) => (vec![Complex::zero(); l], vec![T::zero(); l], true),
            }
        })
        .collect();

    let mut cube = ProfileCube::zeros(stack.n_azimuth, stack.n_range, l, stack.geometry_hash);
    let mut theta =
        ThetaCube { n_azimuth: stack.n_azimuth, n_range: stack.n_range, l, data: vec![T::zero(); stack.n_pixels() * l] };
    let mut failed = Vec::new();
    for ((az, rg), (values, th, fail)) in pixels.into_iter().zip(results) {
        let base = (az * stack.n_range + rg) * l;
        cube.data[base..base + l].copy_from_slice(&values);
        theta.data[base..base + l].copy_from_slice(&th);
        if fail {
            failed.push((az, rg));
        }
    }
    let wall_s = wall.elapsed().as_secs_f64();
    Ok((
        cube,
        theta,
        ReconstructReport { failed_pixels: failed, solver_time_s: wall_s, wall_time_s: wall_s },
    ))
}

/// Simulate the measurement stack of a scene.
///
/// Each pixel coherently sums its scatterers through the exact (off-grid)
/// steering vectors. The noise level is set from the scene-wide mean signal
/// power so empty pixels carry noise too.
pub fn simulate_stack<T: Real>(
    scene: &ScattererSet<T>,
    geometry: &ImagingGeometry<T>,
    n_azimuth: usize,
    n_range: usize,
    snr: SnrSpec<T>,
    rng_seed: u64,
) -> Result<MeasurementStack<T>> {
    let mut stack = MeasurementStack::zeros(n_azimuth, n_range, geometry.n(), geometry.hash());
    for r in scene.records() {
        if r.azimuth_idx >= n_azimuth || r.range_idx >= n_range {
            return Err(TomoError::invalid(format!(
                "scatterer at ({}, {}) outside the {}x{} raster",
                r.azimuth_idx, r.range_idx, n_azimuth, n_range
            )));
        }
        let v = geometry.steering_vector_at(r.elevation_m);
        let px = stack.pixel_mut(r.azimuth_idx, r.range_idx);
        for (p, s) in px.iter_mut().zip(v.iter()) {
            *p = *p + s * r.reflectivity;
        }
    }
    if let Some(snr_lin) = snr.linear() {
        let total_power: T = stack.data.iter().map(|c| c.norm_sqr()).sum();
        let n_pixels = T::of(stack.n_pixels() as f64);
        let mean_pixel_power = total_power / n_pixels;
        if mean_pixel_power.is_zero() {
            return Err(TomoError::invalid("finite SNR requested for an empty scene"));
        }
        let sigma_sqr = mean_pixel_power / (T::of(geometry.n() as f64) * snr_lin);
        add_noise(&mut stack.data, sigma_sqr, rng_seed);
    }
    Ok(stack)
}

/// Rasterize scene truth onto the reconstruction lattice (reflectivities
/// accumulated at the snapped elevation node).
pub fn scene_to_cube<T: Real>(
    scene: &ScattererSet<T>,
    geometry: &ImagingGeometry<T>,
    n_azimuth: usize,
    n_range: usize,
) -> Result<ProfileCube<T>> {
    let mut cube = ProfileCube::zeros(n_azimuth, n_range, geometry.l(), geometry.hash());
    for r in scene.records() {
        if r.azimuth_idx >= n_azimuth || r.range_idx >= n_range {
            return Err(TomoError::invalid("scatterer outside the raster"));
        }
        let z = geometry.snap_to_grid(r.elevation_m);
        let base = (r.azimuth_idx * n_range + r.range_idx) * geometry.l();
        cube.data[base + z] = cube.data[base + z] + r.reflectivity;
    }
    Ok(cube)
}

/// Flat-earth mapping between raster/elevation coordinates and local metric
/// coordinates, using the constant incident angle of the geometry.
#[derive(Debug, Clone, Copy)]
pub struct CoordConvention<T> {
    pub azimuth_spacing_m: T,
    pub range_spacing_m: T,
    pub incident_angle_rad: T,
}

impl<T: Real> CoordConvention<T> {
    /// (azimuth, slant-range offset, elevation) -> (x, ground range, height).
    pub fn to_ground(&self, az_idx: T, rg_idx: T, elevation: T) -> (T, T, T) {
        let sin_t = self.incident_angle_rad.sin();
        let cos_t = self.incident_angle_rad.cos();
        let x = az_idx * self.azimuth_spacing_m;
        let delta_r = rg_idx * self.range_spacing_m;
        let height = elevation * sin_t;
        let ground = delta_r / sin_t + elevation * cos_t;
        (x, ground, height)
    }

    /// Inverse of [`Self::to_ground`].
    pub fn to_radar(&self, x: T, ground: T, height: T) -> (T, T, T) {
        let sin_t = self.incident_angle_rad.sin();
        let cos_t = self.incident_angle_rad.cos();
        let elevation = height / sin_t;
        let delta_r = (ground - elevation * cos_t) * sin_t;
        (
            x / self.azimuth_spacing_m,
            delta_r / self.range_spacing_m,
            elevation,
        )
    }
}

/// One exported point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub x_m: f32,
    pub y_m: f32,
    pub z_m: f32,
    pub intensity: f32,
}

/// Peak-extraction settings for point-cloud export.
#[derive(Debug, Clone, Copy)]
pub struct ExtractionConfig<T> {
    pub max_peaks: usize,
    pub floor_fraction: T,
    pub refine: bool,
    /// Additional absolute magnitude floor relative to the scene peak,
    /// suppressing noise-only pixels.
    pub scene_floor_fraction: T,
    /// Export intensity in decibels instead of linear magnitude.
    pub intensity_db: bool,
}

impl<T: Real> Default for ExtractionConfig<T> {
    fn default() -> Self {
        ExtractionConfig {
            max_peaks: crate::simulate::DEFAULT_K_MAX,
            floor_fraction: T::of(0.3),
            refine: true,
            scene_floor_fraction: T::of(0.05),
            intensity_db: false,
        }
    }
}

/// Extract scatterers from every pixel of a cube into metric coordinates.
pub fn cube_to_points<T: Real>(
    cube: &ProfileCube<T>,
    geometry: &ImagingGeometry<T>,
    conv: &CoordConvention<T>,
    cfg: &ExtractionConfig<T>,
) -> Result<Vec<PointRecord>> {
    if cube.l != geometry.l() {
        return Err(TomoError::invalid("cube elevation axis does not match geometry"));
    }
    let scene_peak = cube.data.iter().map(|c| c.norm()).fold(T::zero(), T::max);
    let scene_floor = scene_peak * cfg.scene_floor_fraction;
    let mut points = Vec::new();
    for az in 0..cube.n_azimuth {
        for rg in 0..cube.n_range {
            let profile = cube.profile(az, rg);
            let peaks: Vec<Peak<T>> = extract_peaks(
                profile,
                geometry.elevation_grid_m(),
                cfg.max_peaks,
                cfg.floor_fraction,
                cfg.refine,
            )?;
            for p in peaks {
                if p.magnitude < scene_floor {
                    continue;
                }
                let (x, y, z) =
                    conv.to_ground(T::of(az as f64), T::of(rg as f64), p.elevation_m);
                let intensity = if cfg.intensity_db {
                    T::of(20.0) * p.magnitude.max(T::of(1e-12)).log10()
                } else {
                    p.magnitude
                };
                points.push(PointRecord {
                    x_m: x.to_f64_lossy() as f32,
                    y_m: y.to_f64_lossy() as f32,
                    z_m: z.to_f64_lossy() as f32,
                    intensity: intensity.to_f64_lossy() as f32,
                });
            }
        }
    }
    Ok(points)
}

/// How per-pixel threshold vectors reduce to one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaReduction {
    /// Threshold at the strongest reconstructed elevation cell.
    AtPeak,
    /// Minimum threshold over the elevation axis.
    MinOverElevation,
}

impl ThetaReduction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "at_peak" => Some(ThetaReduction::AtPeak),
            "min_over_elevation" => Some(ThetaReduction::MinOverElevation),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ThetaReduction::AtPeak => "at_peak",
            ThetaReduction::MinOverElevation => "min_over_elevation",
        }
    }
}

/// Per-pixel threshold summary split into three classes at the given
/// quantiles of the summary distribution (ties break to the lowest class).
#[derive(Debug, Clone)]
pub struct ThresholdMap<T> {
    pub n_azimuth: usize,
    pub n_range: usize,
    pub summary: Vec<T>,
    pub labels: Vec<u8>,
    pub boundaries: (T, T),
}

pub fn threshold_map<T: Real>(
    theta: &ThetaCube<T>,
    cube: &ProfileCube<T>,
    reduction: ThetaReduction,
    quantiles: (T, T),
) -> Result<ThresholdMap<T>> {
    if theta.n_azimuth != cube.n_azimuth || theta.n_range != cube.n_range || theta.l != cube.l {
        return Err(TomoError::invalid("theta cube and profile cube shapes differ"));
    }
    let n_pixels = theta.n_azimuth * theta.n_range;
    if n_pixels == 0 {
        return Err(TomoError::invalid("empty scene"));
    }
    let mut summary = Vec::with_capacity(n_pixels);
    for az in 0..theta.n_azimuth {
        for rg in 0..theta.n_range {
            let th = theta.theta(az, rg);
            let v = match reduction {
                ThetaReduction::MinOverElevation => {
                    th.iter().copied().fold(T::infinity(), T::min)
                }
                ThetaReduction::AtPeak => {
                    let profile = cube.profile(az, rg);
                    let mut best = 0usize;
                    let mut best_mag = T::neg_infinity();
                    for (i, c) in profile.iter().enumerate() {
                        let m = c.norm();
                        if m > best_mag {
                            best_mag = m;
                            best = i;
                        }
                    }
                    th[best]
                }
            };
            summary.push(v);
        }
    }
    let mut sorted = summary.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
    let pick = |q: T| -> T {
        let pos = (q * T::of((n_pixels - 1) as f64)).floor().to_f64_lossy() as usize;
        sorted[pos.min(n_pixels - 1)]
    };
    let b1 = pick(quantiles.0);
    let b2 = pick(quantiles.1);
    let labels = summary
        .iter()
        .map(|&v| {
            if v <= b1 {
                0u8
            } else if v <= b2 {
                1u8
            } else {
                2u8
            }
        })
        .collect();
    Ok(ThresholdMap {
        n_azimuth: theta.n_azimuth,
        n_range: theta.n_range,
        summary,
        labels,
        boundaries: (b1, b2),
    })
}

/// Bootstrap a training set from a baseline solver: run it on the masked
/// pixels and keep the (measurement, reconstruction) pairs whose energy
/// concentrates enough — peak cell energy over total energy at or above
/// `focus_threshold`.
pub fn labels_from_baseline<T: Real>(
    stack: &MeasurementStack<T>,
    steering: &SteeringMatrix<T>,
    baseline: &Solver<T>,
    mask: &[(usize, usize)],
    focus_threshold: T,
) -> Result<Vec<TrainingSample<T>>> {
    if mask.is_empty() {
        return Err(TomoError::invalid("mask selects no pixels"));
    }
    let solved: Vec<Result<(PixelMeasurement<T>, ReflectivityProfile<T>)>> = mask
        .par_iter()
        .map(|&(az, rg)| {
            if az >= stack.n_azimuth || rg >= stack.n_range {
                return Err(TomoError::invalid("mask pixel outside the raster"));
            }
            let y = PixelMeasurement {
                values: stack.pixel(az, rg).to_vec(),
                snr: SnrSpec::Noiseless,
            };
            let p = baseline.solve(&y, steering)?;
            Ok((y, p))
        })
        .collect();

    let mut out = Vec::new();
    let mut seen = 0usize;
    let mut best_focus = T::zero();
    for r in solved {
        let (y, p) = r?;
        seen += 1;
        let total: T = p.values.iter().map(|c| c.norm_sqr()).sum();
        if total.is_zero() {
            continue;
        }
        let peak = p.values.iter().map(|c| c.norm_sqr()).fold(T::zero(), T::max);
        let focus = peak / total;
        best_focus = best_focus.max(focus);
        if focus >= focus_threshold {
            out.push(TrainingSample { measurement: y, label: p });
        }
    }
    if out.is_empty() {
        return Err(TomoError::invalid(format!(
            "no pixel passed the focus filter: {} solved, best focus {:.3} < threshold {:.3}",
            seen,
            best_focus.to_f64_lossy(),
            focus_threshold.to_f64_lossy()
        )));
    }
    Ok(out)
}
