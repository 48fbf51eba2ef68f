// Temporary calibration probe; removed before release.
use num_complex::Complex;
use tomosar_core::geometry::ImagingGeometry;
use tomosar_core::net::{forward, EpsilonRule, NetworkParams, ThresholdMode};
use tomosar_core::simulate::{simulate_pixel, ReflectivityProfile, SnrSpec};
use tomosar_core::weights::precompute_w;

#[test]
#[ignore]
fn probe_peak_scaled_thresholds() {
    let g =
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let w = precompute_w(&a, 1e-3 * 128.0).unwrap();

    // normalized single on-grid scatterer at 30 dB
    let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
    label.values[47] = Complex::from_polar(1.0, 0.7);
    let y_raw = simulate_pixel(&label, &a, SnrSpec::Db(30.0), 5).unwrap();
    let peak = y_raw.values.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    let y = tomosar_core::simulate::PixelMeasurement {
        values: y_raw.values.iter().map(|v| v / peak).collect(),
        snr: y_raw.snr,
    };
    let label_n: Vec<Complex<f64>> = label.values.iter().map(|v| v / peak).collect();
    let label_energy: f64 = label_n.iter().map(|c| c.norm_sqr()).sum();

    let corr = w.matrix().adjoint_matvec(&y.values);
    let zpeak1 = corr.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    println!("|W^H y| peak {zpeak1:.4}, label energy {label_energy:.4}");
    let eps = 0.005;
    for beta in [0.1, 0.2, 0.35, 0.5, 0.8] {
        for q in [0.3, 0.5, 0.8, 1.0] {
            for r in [0.3f64, 0.5, 0.7] {
                let zp = beta * zpeak1;
                let mu0 = q * zp * (zp + eps);
                let mu: Vec<f64> =
                    (0..10).map(|k| (mu0 * r.powi(k as i32)).max(1e-9)).collect();
                let p = NetworkParams {
                    mu,
                    beta: vec![beta; 10],
                    epsilon_rule: EpsilonRule::RelativeToPeak(0.005),
                    mode: ThresholdMode::Adaptive,
                    geometry_hash: a.geometry_hash(),
                };
                let (out, _) = forward(&y, &a, &w, &p, false).unwrap();
                let err: f64 = out
                    .values
                    .iter()
                    .zip(label_n.iter())
                    .map(|(gv, l)| (gv - l).norm_sqr())
                    .sum();
                println!(
                    "beta {beta:4.2} q {q:4.2} r {r:3.1} -> nmse {:10.5}",
                    err / label_energy
                );
            }
        }
    }
}
