//! On-disk formats.
//!
//! Binary containers carry a 5-byte magic, little-endian integer dims and
//! interleaved float64 (re, im) payloads:
//!
//! * `TOMO1` — supervised dataset: N, L, count, geometry hash, then per
//!   record the measurement followed by the label profile.
//! * `WMAT1` — precomputed weight cache keyed by geometry hash.
//! * `STAK1` — measurement stack (azimuth x range x channel).
//! * `CUBE1` — reconstructed profile cube (azimuth x range x elevation).
//! * `THTA1` — per-pixel final-layer thresholds (real values).
//!
//! Text formats: a key-value geometry config, a human-diffable network
//! parameter file, CSV logs, XYZ point lists, binary little-endian PLY and
//! PPM threshold maps. All writers go through a temp file plus rename.

use crate::error::{Result, TomoError};
use crate::geometry::{ImagingGeometry, SteeringMatrix};
use crate::linalg::CMat;
use crate::net::{EpsilonRule, NetworkParams, ThresholdMode};
use crate::pipeline::{MeasurementStack, PointRecord, ProfileCube, ThetaCube, ThresholdMap};
use crate::scalar::Real;
use crate::simulate::{PixelMeasurement, ReflectivityProfile, SnrSpec, TrainingSample};
use crate::train::{EpochStats, OptimizerKind, OptimizerState};
use crate::weights::AlistaWeights;
use num_complex::Complex;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Write through a sibling temp file and rename into place.
pub fn atomic_write<F>(path: &Path, write: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(File::create(&tmp)?);
    write(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_complex_slice<W: Write, T: Real>(w: &mut W, data: &[Complex<T>]) -> Result<()> {
    for c in data {
        write_f64(w, c.re.to_f64_lossy())?;
        write_f64(w, c.im.to_f64_lossy())?;
    }
    Ok(())
}

struct Bin<R: Read> {
    r: R,
}

impl<R: Read> Bin<R> {
    fn magic(&mut self, expect: &[u8; 5], what: &str) -> Result<()> {
        let mut m = [0u8; 5];
        self.r.read_exact(&mut m)?;
        if &m != expect {
            return Err(TomoError::Format(format!(
                "bad magic for {what}: expected {:?}",
                std::str::from_utf8(expect).unwrap_or("?")
            )));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.r.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.r.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn complex_vec(&mut self, n: usize) -> Result<Vec<Complex<f64>>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let re = self.f64()?;
            let im = self.f64()?;
            out.push(Complex::new(re, im));
        }
        Ok(out)
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

// ---------------------------------------------------------------------------
// Geometry config (key = value text)
// ---------------------------------------------------------------------------

pub fn write_geometry_config<T: Real>(path: &Path, g: &ImagingGeometry<T>) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "# imaging geometry")?;
        let lambda = g.wavelength_m().to_f64_lossy();
        writeln!(w, "carrier_frequency_hz = {}", SPEED_OF_LIGHT / lambda)?;
        writeln!(w, "wavelength_m = {lambda}")?;
        writeln!(w, "range_m = {}", g.range_m().to_f64_lossy())?;
        writeln!(
            w,
            "incident_angle_deg = {}",
            g.incident_angle_rad().to_f64_lossy().to_degrees()
        )?;
        writeln!(w, "array_number = {}", g.n())?;
        if let Some(d) = g.uniform_baseline_spacing() {
            writeln!(w, "antenna_interval_m = {}", d.to_f64_lossy())?;
        }
        let bl: Vec<String> =
            g.baselines_m().iter().map(|b| b.to_f64_lossy().to_string()).collect();
        writeln!(w, "baselines_m = {}", bl.join(", "))?;
        writeln!(w, "grid_points = {}", g.l())?;
        writeln!(w, "grid_min_m = {}", g.grid_min().to_f64_lossy())?;
        writeln!(w, "grid_max_m = {}", g.grid_max().to_f64_lossy())?;
        Ok(())
    })
}

/// Parse `key = value` lines; `#` starts a comment. Returns (key, value) pairs.
pub fn parse_kv_file(path: &Path) -> Result<Vec<(String, String)>> {
    let f = File::open(path)
        .map_err(|e| TomoError::Format(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() || line.starts_with('[') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(TomoError::Format(format!(
                "{}:{}: expected key = value",
                path.display(),
                lineno + 1
            )));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_f64_list(v: &str) -> Result<Vec<f64>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    inner
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| TomoError::Format(format!("bad number in list: {s}")))
        })
        .collect()
}

pub fn read_geometry_config(path: &Path) -> Result<ImagingGeometry<f64>> {
    let kv = parse_kv_file(path)?;
    let get = |key: &str| kv.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let num = |key: &str| -> Result<Option<f64>> {
        match get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .map(Some)
                .map_err(|_| TomoError::Format(format!("field {key}: bad number {v}"))),
        }
    };
    let wavelength = match num("wavelength_m")? {
        Some(l) => l,
        None => match num("carrier_frequency_hz")? {
            Some(f) if f > 0.0 => SPEED_OF_LIGHT / f,
            _ => {
                return Err(TomoError::Format(
                    "geometry needs wavelength_m or carrier_frequency_hz".into(),
                ))
            }
        },
    };
    let range = num("range_m")?
        .ok_or_else(|| TomoError::Format("geometry needs range_m".into()))?;
    let incident = num("incident_angle_deg")?.unwrap_or(45.0).to_radians();
    let baselines: Vec<f64> = if let Some(list) = get("baselines_m") {
        parse_f64_list(list)?
    } else {
        let n = num("array_number")?
            .ok_or_else(|| TomoError::Format("geometry needs array_number or baselines_m".into()))?
            as usize;
        let dd = num("antenna_interval_m")?.ok_or_else(|| {
            TomoError::Format("geometry needs antenna_interval_m with array_number".into())
        })?;
        (0..n).map(|i| i as f64 * dd).collect()
    };
    let l = num("grid_points")?.unwrap_or(128.0) as usize;
    let (gmin, gmax) = match (num("grid_min_m")?, num("grid_max_m")?) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            // Default span: +-2 Rayleigh resolutions (times optional scale).
            let scale = num("grid_span_scale")?.unwrap_or(1.0);
            let d = baselines
                .windows(2)
                .map(|w| w[1] - w[0])
                .next()
                .ok_or_else(|| TomoError::Format("need at least 2 baselines".into()))?;
            let rho = wavelength * range / (2.0 * baselines.len() as f64 * d);
            (-2.0 * rho * scale, 2.0 * rho * scale)
        }
    };
    let step = (gmax - gmin) / (l - 1).max(1) as f64;
    let grid: Vec<f64> = (0..l).map(|i| gmin + step * i as f64).collect();
    ImagingGeometry::new(wavelength, range, baselines, grid, incident)
}

// ---------------------------------------------------------------------------
// Dataset (TOMO1)
// ---------------------------------------------------------------------------

pub fn write_dataset<T: Real>(
    path: &Path,
    samples: &[TrainingSample<T>],
    geometry_hash: u64,
) -> Result<()> {
    if samples.is_empty() {
        return Err(TomoError::invalid("refusing to write an empty dataset"));
    }
    let n = samples[0].measurement.n();
    let l = samples[0].label.l();
    atomic_write(path, |w| {
        w.write_all(b"TOMO1")?;
        write_u32(w, n as u32)?;
        write_u32(w, l as u32)?;
        write_u64(w, samples.len() as u64)?;
        write_u64(w, geometry_hash)?;
        for s in samples {
            if s.measurement.n() != n || s.label.l() != l {
                return Err(TomoError::invalid("inconsistent sample shapes"));
            }
            write_complex_slice(w, &s.measurement.values)?;
            write_complex_slice(w, &s.label.values)?;
        }
        Ok(())
    })
}

pub fn read_dataset(path: &Path) -> Result<(Vec<TrainingSample<f64>>, u64)> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"TOMO1", "dataset")?;
    let n = b.u32()? as usize;
    let l = b.u32()? as usize;
    let count = b.u64()? as usize;
    let hash = b.u64()?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let y = b.complex_vec(n)?;
        let label = b.complex_vec(l)?;
        samples.push(TrainingSample {
            measurement: PixelMeasurement { values: y, snr: SnrSpec::Noiseless },
            label: ReflectivityProfile { values: label, geometry_hash: hash },
        });
    }
    Ok((samples, hash))
}

/// Human-readable dump of a dataset: one row per complex value.
pub fn write_dataset_csv<T: Real>(path: &Path, samples: &[TrainingSample<T>]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "sample,kind,index,re,im")?;
        for (i, s) in samples.iter().enumerate() {
            for (j, v) in s.measurement.values.iter().enumerate() {
                writeln!(w, "{i},y,{j},{},{}", v.re.to_f64_lossy(), v.im.to_f64_lossy())?;
            }
            for (j, v) in s.label.values.iter().enumerate() {
                writeln!(w, "{i},gamma,{j},{},{}", v.re.to_f64_lossy(), v.im.to_f64_lossy())?;
            }
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Weight cache (WMAT1)
// ---------------------------------------------------------------------------

pub fn write_weights<T: Real>(path: &Path, w: &AlistaWeights<T>) -> Result<()> {
    atomic_write(path, |out| {
        out.write_all(b"WMAT1")?;
        write_u32(out, w.n() as u32)?;
        write_u32(out, w.l() as u32)?;
        write_u64(out, w.geometry_hash())?;
        write_f64(out, w.tikhonov_delta().to_f64_lossy())?;
        write_f64(out, w.constraint_residual().to_f64_lossy())?;
        write_f64(out, w.objective_value().to_f64_lossy())?;
        write_complex_slice(out, w.matrix().data())?;
        Ok(())
    })
}

pub fn read_weights(path: &Path) -> Result<AlistaWeights<f64>> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"WMAT1", "weight cache")?;
    let n = b.u32()? as usize;
    let l = b.u32()? as usize;
    let hash = b.u64()?;
    let delta = b.f64()?;
    let residual = b.f64()?;
    let objective = b.f64()?;
    let data = b.complex_vec(n * l)?;
    let mat = CMat::from_vec(n, l, data)?;
    Ok(AlistaWeights::from_parts(mat, delta, residual, objective, hash))
}

// ---------------------------------------------------------------------------
// Network parameter file (text) and optimizer state blob
// ---------------------------------------------------------------------------

pub fn write_params<T: Real>(path: &Path, p: &NetworkParams<T>) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "layers = {}", p.layers())?;
        writeln!(w, "threshold_mode = {}", p.mode.as_str())?;
        match p.epsilon_rule {
            EpsilonRule::Fixed(v) => writeln!(w, "epsilon_rule = fixed {}", v.to_f64_lossy())?,
            EpsilonRule::RelativeToPeak(v) => {
                writeln!(w, "epsilon_rule = relative_to_peak {}", v.to_f64_lossy())?
            }
        }
        writeln!(w, "geometry_hash = {:016x}", p.geometry_hash)?;
        let mu: Vec<String> = p.mu.iter().map(|v| v.to_f64_lossy().to_string()).collect();
        let beta: Vec<String> = p.beta.iter().map(|v| v.to_f64_lossy().to_string()).collect();
        writeln!(w, "mu = {}", mu.join(", "))?;
        writeln!(w, "beta = {}", beta.join(", "))?;
        Ok(())
    })
}

pub fn read_params(path: &Path) -> Result<NetworkParams<f64>> {
    let kv = parse_kv_file(path)?;
    let get = |key: &str| -> Result<&str> {
        kv.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| TomoError::Format(format!("params file missing {key}")))
    };
    let mode = ThresholdMode::parse(get("threshold_mode")?)
        .ok_or_else(|| TomoError::Format("bad threshold_mode".into()))?;
    let eps_raw = get("epsilon_rule")?;
    let mut parts = eps_raw.split_whitespace();
    let eps_kind = parts.next().unwrap_or("");
    let eps_val: f64 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TomoError::Format("epsilon_rule needs a value".into()))?;
    let epsilon_rule = match eps_kind {
        "fixed" => EpsilonRule::Fixed(eps_val),
        "relative_to_peak" => EpsilonRule::RelativeToPeak(eps_val),
        other => return Err(TomoError::Format(format!("unknown epsilon_rule {other}"))),
    };
    let geometry_hash = u64::from_str_radix(get("geometry_hash")?, 16)
        .map_err(|_| TomoError::Format("bad geometry_hash".into()))?;
    let mu = parse_f64_list(get("mu")?)?;
    let beta = parse_f64_list(get("beta")?)?;
    let layers: usize = get("layers")?
        .parse()
        .map_err(|_| TomoError::Format("bad layers".into()))?;
    if mu.len() != layers || beta.len() != layers {
        return Err(TomoError::Format("mu/beta length does not match layers".into()));
    }
    let p = NetworkParams { mu, beta, epsilon_rule, mode, geometry_hash };
    p.validate()?;
    Ok(p)
}

pub fn write_optimizer_state<T: Real>(path: &Path, s: &OptimizerState<T>) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(b"OPTS1")?;
        match s.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                w.write_all(&[0u8])?;
                write_f64(w, beta1.to_f64_lossy())?;
                write_f64(w, beta2.to_f64_lossy())?;
                write_f64(w, eps.to_f64_lossy())?;
            }
            OptimizerKind::Sgd { momentum } => {
                w.write_all(&[1u8])?;
                write_f64(w, momentum.to_f64_lossy())?;
                write_f64(w, 0.0)?;
                write_f64(w, 0.0)?;
            }
        }
        write_u64(w, s.step)?;
        write_u32(w, s.first.len() as u32)?;
        for v in &s.first {
            write_f64(w, v.to_f64_lossy())?;
        }
        for v in &s.second {
            write_f64(w, v.to_f64_lossy())?;
        }
        Ok(())
    })
}

pub fn read_optimizer_state(path: &Path) -> Result<OptimizerState<f64>> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"OPTS1", "optimizer state")?;
    let mut kind_byte = [0u8; 1];
    b.r.read_exact(&mut kind_byte)?;
    let p1 = b.f64()?;
    let p2 = b.f64()?;
    let p3 = b.f64()?;
    let kind = match kind_byte[0] {
        0 => OptimizerKind::Adam { beta1: p1, beta2: p2, eps: p3 },
        1 => OptimizerKind::Sgd { momentum: p1 },
        other => return Err(TomoError::Format(format!("unknown optimizer kind {other}"))),
    };
    let step = b.u64()?;
    let dim = b.u32()? as usize;
    let first = b.f64_vec(dim)?;
    let second = b.f64_vec(dim)?;
    Ok(OptimizerState { kind, first, second, step })
}

// ---------------------------------------------------------------------------
// Stack (STAK1), profile cube (CUBE1), theta cube (THTA1)
// ---------------------------------------------------------------------------

pub fn write_stack<T: Real>(path: &Path, s: &MeasurementStack<T>) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(b"STAK1")?;
        write_u32(w, s.n_azimuth as u32)?;
        write_u32(w, s.n_range as u32)?;
        write_u32(w, s.n_channels as u32)?;
        write_u64(w, s.geometry_hash)?;
        write_complex_slice(w, &s.data)?;
        Ok(())
    })
}

pub fn read_stack(path: &Path) -> Result<MeasurementStack<f64>> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"STAK1", "measurement stack")?;
    let n_azimuth = b.u32()? as usize;
    let n_range = b.u32()? as usize;
    let n_channels = b.u32()? as usize;
    let geometry_hash = b.u64()?;
    let data = b.complex_vec(n_azimuth * n_range * n_channels)?;
    Ok(MeasurementStack { n_azimuth, n_range, n_channels, data, geometry_hash })
}

pub fn write_cube<T: Real>(path: &Path, c: &ProfileCube<T>) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(b"CUBE1")?;
        write_u32(w, c.n_azimuth as u32)?;
        write_u32(w, c.n_range as u32)?;
        write_u32(w, c.l as u32)?;
        write_u64(w, c.geometry_hash)?;
        write_complex_slice(w, &c.data)?;
        Ok(())
    })
}

pub fn read_cube(path: &Path) -> Result<ProfileCube<f64>> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"CUBE1", "profile cube")?;
    let n_azimuth = b.u32()? as usize;
    let n_range = b.u32()? as usize;
    let l = b.u32()? as usize;
    let geometry_hash = b.u64()?;
    let data = b.complex_vec(n_azimuth * n_range * l)?;
    Ok(ProfileCube { n_azimuth, n_range, l, data, geometry_hash })
}

pub fn write_theta_cube<T: Real>(path: &Path, c: &ThetaCube<T>) -> Result<()> {
    atomic_write(path, |w| {
        w.write_all(b"THTA1")?;
        write_u32(w, c.n_azimuth as u32)?;
        write_u32(w, c.n_range as u32)?;
        write_u32(w, c.l as u32)?;
        for v in &c.data {
            write_f64(w, v.to_f64_lossy())?;
        }
        Ok(())
    })
}

pub fn read_theta_cube(path: &Path) -> Result<ThetaCube<f64>> {
    let mut b = Bin { r: BufReader::new(File::open(path)?) };
    b.magic(b"THTA1", "theta cube")?;
    let n_azimuth = b.u32()? as usize;
    let n_range = b.u32()? as usize;
    let l = b.u32()? as usize;
    let data = b.f64_vec(n_azimuth * n_range * l)?;
    Ok(ThetaCube { n_azimuth, n_range, l, data })
}

// ---------------------------------------------------------------------------
// Point clouds: binary PLY and XYZ CSV
// ---------------------------------------------------------------------------

pub fn write_ply(path: &Path, points: &[PointRecord]) -> Result<()> {
    atomic_write(path, |w| {
        write!(
            w,
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property float intensity\nend_header\n",
            points.len()
        )?;
        for p in points {
            w.write_all(&p.x_m.to_le_bytes())?;
            w.write_all(&p.y_m.to_le_bytes())?;
            w.write_all(&p.z_m.to_le_bytes())?;
            w.write_all(&p.intensity.to_le_bytes())?;
        }
        Ok(())
    })
}

/// Read a PLY produced by [`write_ply`] (exact property layout required).
pub fn read_ply(path: &Path) -> Result<Vec<PointRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(TomoError::Format("ply header truncated".into()));
        }
        header.push_str(&line);
        if line.trim_end() == "end_header" {
            break;
        }
    }
    if !header.starts_with("ply") || !header.contains("binary_little_endian") {
        return Err(TomoError::Format("not a binary little-endian ply".into()));
    }
    let count: usize = header
        .lines()
        .find_map(|l| l.trim().strip_prefix("element vertex "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| TomoError::Format("ply missing vertex element".into()))?;
    for prop in ["property float x", "property float y", "property float z", "property float intensity"]
    {
        if !header.contains(prop) {
            return Err(TomoError::Format(format!("ply missing '{prop}'")));
        }
    }
    let mut points = Vec::with_capacity(count);
    let mut buf = [0u8; 16];
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        points.push(PointRecord {
            x_m: f32::from_le_bytes(buf[0..4].try_into().unwrap()),
            y_m: f32::from_le_bytes(buf[4..8].try_into().unwrap()),
            z_m: f32::from_le_bytes(buf[8..12].try_into().unwrap()),
            intensity: f32::from_le_bytes(buf[12..16].try_into().unwrap()),
        });
    }
    Ok(points)
}

pub fn write_xyz_csv(path: &Path, points: &[PointRecord]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "x_m,y_m,z_m,intensity")?;
        for p in points {
            writeln!(w, "{},{},{},{}", p.x_m, p.y_m, p.z_m, p.intensity)?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Threshold map (PPM + boundaries CSV)
// ---------------------------------------------------------------------------

/// Low thresholds render blue (strong scatterers), the middle class white and
/// the highest class pink (weak/background).
const CLASS_COLORS: [[u8; 3]; 3] = [[40, 90, 235], [255, 255, 255], [255, 105, 180]];

pub fn write_threshold_map_ppm<T: Real>(path: &Path, m: &ThresholdMap<T>) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "P6\n{} {}\n255", m.n_range, m.n_azimuth)?;
        for az in 0..m.n_azimuth {
            for rg in 0..m.n_range {
                let class = m.labels[az * m.n_range + rg] as usize;
                w.write_all(&CLASS_COLORS[class])?;
            }
        }
        Ok(())
    })
}

pub fn write_threshold_map_csv<T: Real>(path: &Path, m: &ThresholdMap<T>) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "boundary_low,{}", m.boundaries.0.to_f64_lossy())?;
        writeln!(w, "boundary_high,{}", m.boundaries.1.to_f64_lossy())?;
        for class in 0..3 {
            let count = m.labels.iter().filter(|&&c| c as usize == class).count();
            writeln!(w, "class{class}_pixels,{count}")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// CSV logs
// ---------------------------------------------------------------------------

pub fn write_training_log<T: Real>(path: &Path, curve: &[EpochStats<T>]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "epoch,train_loss,val_nmse,lr")?;
        for e in curve {
            let val = e
                .val_nmse
                .map(|v| v.to_f64_lossy().to_string())
                .unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{}",
                e.epoch,
                e.train_loss.to_f64_lossy(),
                val,
                e.learning_rate.to_f64_lossy()
            )?;
        }
        Ok(())
    })
}

/// Generic CSV writer: a header plus stringified rows.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> Result<()> {
    atomic_write(path, |w| {
        writeln!(w, "{header}")?;
        for row in rows {
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })
}

/// Convenience: steering matrix for a geometry read from disk.
pub fn steering_from_config(path: &Path) -> Result<(ImagingGeometry<f64>, SteeringMatrix<f64>)> {
    let g = read_geometry_config(path)?;
    let a = g.build_steering();
    Ok((g, a))
}
