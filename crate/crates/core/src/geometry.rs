//! Imaging geometry and steering-matrix construction.
//!
//! An acquisition is described by the carrier wavelength, the reference slant
//! range, the cross-track baseline of every channel and the discretized
//! elevation grid. The steering matrix maps an elevation reflectivity profile
//! to the stack of channel measurements; its entries are the unit-modulus
//! sinusoids `exp(j 4 pi b_n s_l / (lambda r0))`.

use crate::error::{Result, TomoError};
use crate::linalg::CMat;
use crate::scalar::Real;
use num_complex::Complex;

/// Relative tolerance for detecting uniform spacing (grid and baselines).
const SPACING_REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ImagingGeometry<T> {
    wavelength_m: T,
    range_m: T,
    baselines_m: Vec<T>,
    elevation_grid_m: Vec<T>,
    incident_angle_rad: T,
}

impl<T: Real> ImagingGeometry<T> {
    /// Validate and build a geometry. The elevation grid must be strictly
    /// increasing and uniformly spaced; baselines must be pairwise distinct.
    pub fn new(
        wavelength_m: T,
        range_m: T,
        baselines_m: Vec<T>,
        elevation_grid_m: Vec<T>,
        incident_angle_rad: T,
    ) -> Result<Self> {
        if !(wavelength_m > T::zero()) || !wavelength_m.is_finite() {
            return Err(TomoError::invalid("wavelength must be positive"));
        }
        if !(range_m > T::zero()) || !range_m.is_finite() {
            return Err(TomoError::invalid("reference range must be positive"));
        }
        if baselines_m.len() < 2 {
            return Err(TomoError::invalid("at least 2 baselines required"));
        }
        if elevation_grid_m.len() < 2 {
            return Err(TomoError::invalid("at least 2 elevation grid nodes required"));
        }
        for (i, b) in baselines_m.iter().enumerate() {
            if !b.is_finite() {
                return Err(TomoError::invalid("baselines must be finite"));
            }
            for other in &baselines_m[i + 1..] {
                if b == other {
                    return Err(TomoError::invalid(format!(
                        "baselines must be pairwise distinct (duplicate {b})"
                    )));
                }
            }
        }
        let first = elevation_grid_m[1] - elevation_grid_m[0];
        if !(first > T::zero()) {
            return Err(TomoError::invalid("elevation grid must be strictly increasing"));
        }
        let tol = T::of(SPACING_REL_TOL) * first.abs();
        for w in elevation_grid_m.windows(2) {
            let d = w[1] - w[0];
            if !(d > T::zero()) {
                return Err(TomoError::invalid("elevation grid must be strictly increasing"));
            }
            if (d - first).abs() > tol {
                return Err(TomoError::invalid(
                    "elevation grid must be uniformly spaced",
                ));
            }
        }
        Ok(Self { wavelength_m, range_m, baselines_m, elevation_grid_m, incident_angle_rad })
    }

    /// Uniform linear array with `b_n = (n - 1) * spacing`, n = 1..=n_channels,
    /// and a uniform elevation grid of `l` nodes spanning `[grid_min, grid_max]`.
    pub fn uniform_array(
        wavelength_m: T,
        range_m: T,
        n_channels: usize,
        antenna_interval_m: T,
        l: usize,
        grid_min_m: T,
        grid_max_m: T,
        incident_angle_rad: T,
    ) -> Result<Self> {
        if l < 2 {
            return Err(TomoError::invalid("at least 2 elevation grid nodes required"));
        }
        let baselines = (0..n_channels)
            .map(|n| antenna_interval_m * T::of(n as f64))
            .collect();
        let step = (grid_max_m - grid_min_m) / T::of((l - 1) as f64);
        let grid = (0..l).map(|i| grid_min_m + step * T::of(i as f64)).collect();
        Self::new(wavelength_m, range_m, baselines, grid, incident_angle_rad)
    }

    /// Uniform array whose grid spans `+- 2 * rayleigh_resolution * span_scale`.
    pub fn uniform_array_default_grid(
        wavelength_m: T,
        range_m: T,
        n_channels: usize,
        antenna_interval_m: T,
        l: usize,
        span_scale: T,
        incident_angle_rad: T,
    ) -> Result<Self> {
        if n_channels < 2 {
            return Err(TomoError::invalid("at least 2 channels required"));
        }
        let rho = wavelength_m * range_m
            / (T::of(2.0) * T::of(n_channels as f64) * antenna_interval_m);
        let half = T::of(2.0) * rho * span_scale;
        Self::uniform_array(
            wavelength_m,
            range_m,
            n_channels,
            antenna_interval_m,
            l,
            -half,
            half,
            incident_angle_rad,
        )
    }

    pub fn wavelength_m(&self) -> T {
        self.wavelength_m
    }

    pub fn range_m(&self) -> T {
        self.range_m
    }

    pub fn baselines_m(&self) -> &[T] {
        &self.baselines_m
    }

    pub fn elevation_grid_m(&self) -> &[T] {
        &self.elevation_grid_m
    }

    pub fn incident_angle_rad(&self) -> T {
        self.incident_angle_rad
    }

    /// Number of channels N.
    pub fn n(&self) -> usize {
        self.baselines_m.len()
    }

    /// Number of elevation grid nodes L.
    pub fn l(&self) -> usize {
        self.elevation_grid_m.len()
    }

    pub fn grid_min(&self) -> T {
        self.elevation_grid_m[0]
    }

    pub fn grid_max(&self) -> T {
        *self.elevation_grid_m.last().expect("grid nonempty")
    }

    pub fn grid_spacing(&self) -> T {
        self.elevation_grid_m[1] - self.elevation_grid_m[0]
    }

    /// Constant baseline spacing if the array is uniform and starts anywhere.
    pub fn uniform_baseline_spacing(&self) -> Option<T> {
        let d = self.baselines_m[1] - self.baselines_m[0];
        if d <= T::zero() {
            return None;
        }
        let tol = T::of(SPACING_REL_TOL) * d.abs();
        for w in self.baselines_m.windows(2) {
            if ((w[1] - w[0]) - d).abs() > tol {
                return None;
            }
        }
        Some(d)
    }

    /// Classical elevation resolution `lambda * r0 / (2 N delta_d)` of a
    /// uniform linear array.
    pub fn rayleigh_resolution(&self) -> Result<T> {
        let spacing = self.uniform_baseline_spacing().ok_or_else(|| {
            TomoError::UnsupportedGeometry(
                "rayleigh resolution needs a uniform linear array; supply the resolution manually"
                    .into(),
            )
        })?;
        Ok(self.wavelength_m * self.range_m
            / (T::of(2.0) * T::of(self.n() as f64) * spacing))
    }

    /// Index of the grid node nearest to `s` (clamped to the grid).
    pub fn snap_to_grid(&self, s: T) -> usize {
        let idx = ((s - self.grid_min()) / self.grid_spacing()).round();
        let max = T::of((self.l() - 1) as f64);
        idx.max(T::zero()).min(max).to_usize().expect("grid index fits usize")
    }

    pub fn contains_elevation(&self, s: T) -> bool {
        s >= self.grid_min() && s <= self.grid_max()
    }

    /// Stable content hash tying derived artifacts to this geometry.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_f64(self.wavelength_m.to_f64_lossy());
        h.write_f64(self.range_m.to_f64_lossy());
        h.write_f64(self.incident_angle_rad.to_f64_lossy());
        h.write_u64(self.baselines_m.len() as u64);
        for b in &self.baselines_m {
            h.write_f64(b.to_f64_lossy());
        }
        h.write_u64(self.elevation_grid_m.len() as u64);
        for s in &self.elevation_grid_m {
            h.write_f64(s.to_f64_lossy());
        }
        h.finish()
    }

    /// Steering vector for an arbitrary (possibly off-grid) elevation.
    pub fn steering_vector_at(&self, s: T) -> Vec<Complex<T>> {
        let four_pi = T::of(4.0) * T::PI();
        let scale = four_pi / (self.wavelength_m * self.range_m);
        self.baselines_m
            .iter()
            .map(|&b| Complex::from_polar(T::one(), scale * b * s))
            .collect()
    }

    /// Build the N x L steering matrix for this geometry.
    pub fn build_steering(&self) -> SteeringMatrix<T> {
        let n = self.n();
        let l = self.l();
        let mut mat = CMat::zeros(n, l);
        let four_pi = T::of(4.0) * T::PI();
        let scale = four_pi / (self.wavelength_m * self.range_m);
        for (row, &b) in self.baselines_m.iter().enumerate() {
            for (col, &s) in self.elevation_grid_m.iter().enumerate() {
                *mat.at_mut(row, col) = Complex::from_polar(T::one(), scale * b * s);
            }
        }
        SteeringMatrix { mat, geometry_hash: self.hash() }
    }
}

/// The N x L complex mapping matrix relating an elevation profile to the
/// channel measurements. Every entry has unit modulus by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringMatrix<T> {
    mat: CMat<T>,
    geometry_hash: u64,
}

impl<T: Real> SteeringMatrix<T> {
    pub fn n(&self) -> usize {
        self.mat.rows()
    }

    pub fn l(&self) -> usize {
        self.mat.cols()
    }

    pub fn matrix(&self) -> &CMat<T> {
        &self.mat
    }

    pub fn geometry_hash(&self) -> u64 {
        self.geometry_hash
    }

    pub fn entry(&self, n: usize, l: usize) -> Complex<T> {
        self.mat.at(n, l)
    }

    pub fn column(&self, l: usize) -> Vec<Complex<T>> {
        self.mat.col(l)
    }

    /// Reassemble from raw parts (used by the binary readers).
    pub fn from_parts(mat: CMat<T>, geometry_hash: u64) -> Self {
        Self { mat, geometry_hash }
    }
}

/// FNV-1a, 64-bit. Stable across platforms, good enough for artifact keys.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    fn write_f64(&mut self, v: f64) {
        self.write_bytes(&v.to_bits().to_le_bytes());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
