//! Echo simulation and dataset generators.
//!
//! Pixel echoes follow `y = A gamma + n` with circularly symmetric complex
//! Gaussian noise scaled to a requested per-pixel SNR. The training-set
//! generator mixes single- and double-scatterer profiles with Rayleigh
//! amplitudes and uniform phases; the building generator samples a
//! roof/wall/ground scatterer model for whole-scene experiments.

use crate::error::{Result, TomoError};
use crate::geometry::{ImagingGeometry, SteeringMatrix};
use crate::linalg::norm_sqr;
use crate::scalar::Real;
use num_complex::Complex;
use num_traits::Zero;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Complex reflectivity along the elevation grid of one range-azimuth pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivityProfile<T> {
    pub values: Vec<Complex<T>>,
    /// Hash of the geometry whose grid `values` is sampled on.
    pub geometry_hash: u64,
}

impl<T: Real> ReflectivityProfile<T> {
    pub fn zeros(l: usize, geometry_hash: u64) -> Self {
        Self { values: vec![Complex::zero(); l], geometry_hash }
    }

    pub fn l(&self) -> usize {
        self.values.len()
    }

    /// Number of nonzero entries.
    pub fn support_size(&self) -> usize {
        self.values.iter().filter(|v| !v.is_zero()).count()
    }
}

/// Requested noise level for a simulated measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrSpec<T> {
    Noiseless,
    Db(T),
}

impl<T: Real> SnrSpec<T> {
    pub fn linear(&self) -> Option<T> {
        match self {
            SnrSpec::Noiseless => None,
            SnrSpec::Db(db) => Some(T::of(10.0).powf(*db / T::of(10.0))),
        }
    }
}

/// One pixel's stack of N channel measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMeasurement<T> {
    pub values: Vec<Complex<T>>,
    pub snr: SnrSpec<T>,
}

impl<T: Real> PixelMeasurement<T> {
    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Splitmix64 step; used to derive independent per-item seeds.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal pair via Box-Muller. Randomness is drawn in f64 so that
/// generated datasets are identical whatever scalar type consumes them.
fn standard_normal_pair<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Rayleigh(sigma) sample truncated to [0, max] by rejection.
fn rayleigh_truncated<R: Rng>(rng: &mut R, sigma: f64, max: f64) -> f64 {
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let a = sigma * (-2.0 * u.ln()).sqrt();
        if a <= max {
            return a;
        }
    }
}

/// Simulate one pixel: `y = A gamma + n`, with the complex Gaussian noise
/// power set per channel so that `||A gamma||^2 / E||n||^2` matches the
/// requested SNR. Deterministic given the seed.
pub fn simulate_pixel<T: Real>(
    profile: &ReflectivityProfile<T>,
    steering: &SteeringMatrix<T>,
    snr: SnrSpec<T>,
    rng_seed: u64,
) -> Result<PixelMeasurement<T>> {
    if profile.l() != steering.l() {
        return Err(TomoError::invalid(format!(
            "profile length {} does not match steering columns {}",
            profile.l(),
            steering.l()
        )));
    }
    let mut y = steering.matrix().matvec(&profile.values);
    if let Some(snr_lin) = snr.linear() {
        let signal_power = norm_sqr(&y);
        if signal_power.is_zero() {
            return Err(TomoError::invalid(
                "finite SNR requested for a zero-signal profile: SNR undefined",
            ));
        }
        let sigma_sqr = signal_power / (T::of(steering.n() as f64) * snr_lin);
        add_noise(&mut y, sigma_sqr, rng_seed);
    }
    Ok(PixelMeasurement { values: y, snr })
}

/// Add circular complex Gaussian noise with per-channel variance `sigma_sqr`
/// (split evenly between real and imaginary parts).
pub(crate) fn add_noise<T: Real>(y: &mut [Complex<T>], sigma_sqr: T, rng_seed: u64) {
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let comp_std = (sigma_sqr / T::of(2.0)).sqrt();
    for v in y.iter_mut() {
        let (re, im) = standard_normal_pair(&mut rng);
        *v = *v + Complex::new(comp_std * T::of(re), comp_std * T::of(im));
    }
}

/// Amplitude law for generated scatterers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeLaw {
    pub sigma: f64,
    pub max: f64,
}

impl Default for AmplitudeLaw {
    /// Rayleigh scale 1.0 keeps the mass essentially inside [0, 4]
    /// (P(A > 4) ~ 3.4e-4) before the rejection cut.
    fn default() -> Self {
        AmplitudeLaw { sigma: 1.0, max: 4.0 }
    }
}

impl AmplitudeLaw {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        rayleigh_truncated(rng, self.sigma, self.max)
    }
}

/// One supervised sample: the noisy measurement and its on-grid label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample<T> {
    pub measurement: PixelMeasurement<T>,
    pub label: ReflectivityProfile<T>,
}

/// Training-set recipe. Spacings are in units of the Rayleigh resolution.
#[derive(Debug, Clone)]
pub struct TrainingSetSpec<T> {
    pub count: usize,
    pub single_fraction: f64,
    pub amplitude: AmplitudeLaw,
    pub snr_levels_db: Vec<T>,
    pub spacing_range_rho: (f64, f64),
}

impl<T: Real> TrainingSetSpec<T> {
    /// Eleven SNR levels spanning 0..=30 dB, half singles, spacings in
    /// 0.1..1.2 Rayleigh resolutions.
    pub fn standard(count: usize) -> Self {
        let snr_levels_db = (0..11).map(|i| T::of(3.0 * i as f64)).collect();
        TrainingSetSpec {
            count,
            single_fraction: 0.5,
            amplitude: AmplitudeLaw::default(),
            snr_levels_db,
            spacing_range_rho: (0.1, 1.2),
        }
    }
}

fn sample_scatterer<R: Rng, T: Real>(rng: &mut R, law: &AmplitudeLaw) -> Complex<T> {
    let amp = law.sample(rng);
    let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    Complex::from_polar(T::of(amp), T::of(phase))
}

/// Generate `spec.count` supervised samples. Labels are snapped to the
/// nearest grid node; measurements are simulated from the snapped profiles
/// at an SNR drawn uniformly from `spec.snr_levels_db`. Reproducible:
/// identical seeds give bitwise-identical outputs.
pub fn gen_training_set<T: Real>(
    geometry: &ImagingGeometry<T>,
    steering: &SteeringMatrix<T>,
    spec: &TrainingSetSpec<T>,
    rng_seed: u64,
) -> Result<Vec<TrainingSample<T>>> {
    if spec.count == 0 {
        return Err(TomoError::invalid("training-set count must be positive"));
    }
    if spec.snr_levels_db.is_empty() {
        return Err(TomoError::invalid("snr_levels must be nonempty"));
    }
    if !(0.0..=1.0).contains(&spec.single_fraction) {
        return Err(TomoError::invalid("single_fraction must lie in [0, 1]"));
    }
    let rho = geometry.rayleigh_resolution()?.to_f64_lossy();
    let (lo, hi) = spec.spacing_range_rho;
    if !(lo > 0.0) || hi < lo {
        return Err(TomoError::invalid("spacing range must satisfy 0 < lo <= hi"));
    }
    let extent = (geometry.grid_max() - geometry.grid_min()).to_f64_lossy();
    if hi * rho >= extent {
        return Err(TomoError::invalid(
            "double-scatterer spacing range exceeds the elevation grid extent",
        ));
    }
    let n_single = (spec.count as f64 * spec.single_fraction).round() as usize;

    // Deterministic shuffled order of sample kinds.
    let mut kinds: Vec<bool> = (0..spec.count).map(|i| i < n_single).collect();
    let mut order_rng = ChaCha12Rng::seed_from_u64(derive_seed(rng_seed, 0, 0));
    fisher_yates(&mut kinds, &mut order_rng);

    let grid_min = geometry.grid_min().to_f64_lossy();
    let grid_max = geometry.grid_max().to_f64_lossy();
    let hash = geometry.hash();
    let mut out = Vec::with_capacity(spec.count);
    for (i, &is_single) in kinds.iter().enumerate() {
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(rng_seed, 1, i as u64));
        let mut label = ReflectivityProfile::zeros(geometry.l(), hash);
        if is_single {
            let s = grid_min + rng.random::<f64>() * (grid_max - grid_min);
            let idx = geometry.snap_to_grid(T::of(s));
            label.values[idx] = sample_scatterer(&mut rng, &spec.amplitude);
        } else {
            let spacing = (lo + rng.random::<f64>() * (hi - lo)) * rho;
            // Keep both scatterers inside the grid, then snap; resample the
            // center until the snapped nodes are distinct.
            loop {
                let c_lo = grid_min + spacing / 2.0;
                let c_hi = grid_max - spacing / 2.0;
                let center = c_lo + rng.random::<f64>() * (c_hi - c_lo);
                let i1 = geometry.snap_to_grid(T::of(center - spacing / 2.0));
                let i2 = geometry.snap_to_grid(T::of(center + spacing / 2.0));
                if i1 != i2 {
                    label.values[i1] = sample_scatterer(&mut rng, &spec.amplitude);
                    label.values[i2] = sample_scatterer(&mut rng, &spec.amplitude);
                    break;
                }
            }
        }
        let snr_pick = rng.random_range(0..spec.snr_levels_db.len());
        let snr = SnrSpec::Db(spec.snr_levels_db[snr_pick]);
        let noise_seed = derive_seed(rng_seed, 2, i as u64);
        let measurement = simulate_pixel(&label, steering, snr, noise_seed)?;
        out.push(TrainingSample { measurement, label });
    }
    Ok(out)
}

pub(crate) fn fisher_yates<R: Rng, V>(items: &mut [V], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Surface a scene scatterer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceTag {
    Roof,
    Wall,
    Ground,
    Free,
}

impl SurfaceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SurfaceTag::Roof => "roof",
            SurfaceTag::Wall => "wall",
            SurfaceTag::Ground => "ground",
            SurfaceTag::Free => "free",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "roof" => Some(SurfaceTag::Roof),
            "wall" => Some(SurfaceTag::Wall),
            "ground" => Some(SurfaceTag::Ground),
            "free" => Some(SurfaceTag::Free),
            _ => None,
        }
    }
}

/// One point scatterer of a simulated scene, pinned to a range-azimuth cell
/// with a continuous (pre-snap) elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scatterer<T> {
    pub azimuth_idx: usize,
    pub range_idx: usize,
    pub elevation_m: T,
    pub reflectivity: Complex<T>,
    pub surface: SurfaceTag,
}

/// A set of scene scatterers with a per-cell sparsity cap.
#[derive(Debug, Clone, PartialEq)]
pub struct ScattererSet<T> {
    records: Vec<Scatterer<T>>,
    k_max: usize,
}

pub const DEFAULT_K_MAX: usize = 4;

impl<T: Real> ScattererSet<T> {
    /// Validate elevations against the grid extent and the per-cell cap.
    pub fn new(
        records: Vec<Scatterer<T>>,
        geometry: &ImagingGeometry<T>,
        k_max: usize,
    ) -> Result<Self> {
        let mut counts = std::collections::HashMap::new();
        for r in &records {
            if !geometry.contains_elevation(r.elevation_m) {
                return Err(TomoError::invalid(format!(
                    "scatterer elevation {} outside grid extent [{}, {}]",
                    r.elevation_m,
                    geometry.grid_min(),
                    geometry.grid_max()
                )));
            }
            let c = counts.entry((r.azimuth_idx, r.range_idx)).or_insert(0usize);
            *c += 1;
            if *c > k_max {
                return Err(TomoError::invalid(format!(
                    "cell ({}, {}) holds more than {} scatterers",
                    r.azimuth_idx, r.range_idx, k_max
                )));
            }
        }
        Ok(Self { records, k_max })
    }

    pub fn records(&self) -> &[Scatterer<T>] {
        &self.records
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Raster and box dimensions of the simulated building scene.
#[derive(Debug, Clone)]
pub struct BuildingSceneSpec<T> {
    pub n_azimuth: usize,
    pub n_range: usize,
    /// Azimuth pixel spacing in metres.
    pub azimuth_spacing_m: T,
    /// Slant-range bin spacing in metres.
    pub range_spacing_m: T,
    /// Building extents: (azimuth width, ground depth, height), metres.
    pub box_dims_m: (T, T, T),
    /// Mean-amplitude ratio (roof, wall, ground).
    pub rcs_ratio: (T, T, T),
    pub n_targets: usize,
    pub k_max: usize,
}

/// Sample a roof/wall/ground building scene.
///
/// Points are drawn uniformly on the three surfaces with surface selection
/// proportional to area; amplitudes are Rayleigh with the per-surface mean
/// proportional to the RCS ratio entry, phases uniform. Physical positions
/// are projected into (azimuth cell, slant-range cell, elevation) with the
/// flat-earth incident angle of the geometry: a point at height z maps to
/// elevation `z / sin(theta0)` and leans toward near range by `z cos(theta0)`.
pub fn gen_building_scene<T: Real>(
    geometry: &ImagingGeometry<T>,
    spec: &BuildingSceneSpec<T>,
    rng_seed: u64,
) -> Result<ScattererSet<T>> {
    if spec.n_targets == 0 {
        return Err(TomoError::invalid("n_targets must be positive"));
    }
    let (r_roof, r_wall, r_ground) = spec.rcs_ratio;
    if !(r_roof > T::zero() && r_wall > T::zero() && r_ground > T::zero()) {
        return Err(TomoError::invalid("rcs ratios must be positive"));
    }
    let theta = geometry.incident_angle_rad().to_f64_lossy();
    let sin_t = theta.sin();
    let cos_t = theta.cos();
    if sin_t <= 0.0 {
        return Err(TomoError::invalid("incident angle must lie in (0, pi)"));
    }
    let (box_w, box_d, box_h) = (
        spec.box_dims_m.0.to_f64_lossy(),
        spec.box_dims_m.1.to_f64_lossy(),
        spec.box_dims_m.2.to_f64_lossy(),
    );
    if box_w <= 0.0 || box_d <= 0.0 || box_h <= 0.0 {
        return Err(TomoError::invalid("box dimensions must be positive"));
    }
    let s_top = box_h / sin_t;
    if !geometry.contains_elevation(T::of(s_top)) || !geometry.contains_elevation(T::zero()) {
        return Err(TomoError::invalid(format!(
            "building does not fit the elevation grid: needs [0, {:.3}] inside [{}, {}]",
            s_top,
            geometry.grid_min(),
            geometry.grid_max()
        )));
    }

    let az_extent = spec.azimuth_spacing_m.to_f64_lossy() * spec.n_azimuth as f64;
    let dr_extent = spec.range_spacing_m.to_f64_lossy() * spec.n_range as f64;
    // Ground coordinates are parameterized by the slant-range offset they map
    // to, so the ground always fills the raster.
    let ground_extent_y = dr_extent / sin_t;
    if box_w > az_extent {
        return Err(TomoError::invalid("building wider than the azimuth extent"));
    }
    // Center the building footprint in ground range; the footprint must map
    // inside the raster together with its layover.
    let y_front = (ground_extent_y - box_d) / 2.0;
    if y_front < box_h * cos_t / sin_t {
        return Err(TomoError::invalid(
            "building layover extends beyond the near-range edge of the raster",
        ));
    }
    let x_left = (az_extent - box_w) / 2.0;

    let area_ground = az_extent * ground_extent_y;
    let area_wall = box_w * box_h;
    let area_roof = box_w * box_d;
    let total_area = area_ground + area_wall + area_roof;

    // Rayleigh mean is sigma * sqrt(pi/2); scaling sigma by the ratio entry
    // scales the mean by the same factor.
    let max_ratio = r_roof.max(r_wall).max(r_ground).to_f64_lossy();
    let sigma_for = |ratio: T| ratio.to_f64_lossy() / max_ratio;

    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    let mut counts: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    let mut records = Vec::with_capacity(spec.n_targets);
    let max_attempts = spec.n_targets.saturating_mul(200).max(10_000);
    let mut attempts = 0usize;
    while records.len() < spec.n_targets {
        attempts += 1;
        if attempts > max_attempts {
            return Err(TomoError::invalid(
                "scene too dense for the per-cell scatterer cap",
            ));
        }
        let pick = rng.random::<f64>() * total_area;
        let (surface, x, y, z) = if pick < area_ground {
            let x = rng.random::<f64>() * az_extent;
            let y = rng.random::<f64>() * ground_extent_y;
            (SurfaceTag::Ground, x, y, 0.0)
        } else if pick < area_ground + area_wall {
            let x = x_left + rng.random::<f64>() * box_w;
            let z = rng.random::<f64>() * box_h;
            (SurfaceTag::Wall, x, y_front, z)
        } else {
            let x = x_left + rng.random::<f64>() * box_w;
            let y = y_front + rng.random::<f64>() * box_d;
            (SurfaceTag::Roof, x, y, box_h)
        };
        let sigma = match surface {
            SurfaceTag::Roof => sigma_for(r_roof),
            SurfaceTag::Wall => sigma_for(r_wall),
            SurfaceTag::Ground | SurfaceTag::Free => sigma_for(r_ground),
        };
        let amp = rayleigh_truncated(&mut rng, sigma, 4.0 * sigma.max(1.0));
        let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;

        let delta_r = y * sin_t - z * cos_t;
        let s = z / sin_t;
        let az_idx = (x / spec.azimuth_spacing_m.to_f64_lossy()).floor() as isize;
        let rg_idx = (delta_r / spec.range_spacing_m.to_f64_lossy()).floor() as isize;
        if az_idx < 0
            || az_idx >= spec.n_azimuth as isize
            || rg_idx < 0
            || rg_idx >= spec.n_range as isize
        {
            continue;
        }
        let cell = (az_idx as usize, rg_idx as usize);
        let c = counts.entry(cell).or_insert(0);
        if *c >= spec.k_max {
            continue;
        }
        *c += 1;
        records.push(Scatterer {
            azimuth_idx: cell.0,
            range_idx: cell.1,
            elevation_m: T::of(s),
            reflectivity: Complex::from_polar(T::of(amp), T::of(phase)),
            surface,
        });
    }
    ScattererSet::new(records, geometry, spec.k_max)
}
