// Temporary calibration probe; removed before release.
use num_complex::Complex;
use tomosar_core::geometry::ImagingGeometry;
use tomosar_core::linalg::CMat;
use tomosar_core::net::{forward, EpsilonRule, NetworkParams, ThresholdMode};
use tomosar_core::simulate::{gen_training_set, TrainingSetSpec};
use tomosar_core::train::normalize_sample;
use tomosar_core::weights::{precompute_w, AlistaWeights};

fn matched_weights(a: &tomosar_core::geometry::SteeringMatrix<f64>) -> AlistaWeights<f64> {
    let n = a.n();
    let mut m = CMat::zeros(n, a.l());
    for r in 0..n {
        for c in 0..a.l() {
            *m.at_mut(r, c) = a.entry(r, c) / n as f64;
        }
    }
    AlistaWeights::from_parts(m, f64::INFINITY, 0.0, 0.0, a.geometry_hash())
}

#[test]
#[ignore]
fn probe_schedule_search() {
    let g =
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let mut spec = TrainingSetSpec::standard(32);
    spec.snr_levels_db = vec![30.0];
    let batch: Vec<_> = gen_training_set(&g, &a, &spec, 17)
        .unwrap()
        .iter()
        .map(normalize_sample)
        .collect();
    let mean_label_energy: f64 = batch
        .iter()
        .map(|s| s.label.values.iter().map(|c| c.norm_sqr()).sum::<f64>())
        .sum::<f64>()
        / batch.len() as f64;
    println!("mean normalized label energy {mean_label_energy:.4}");

    let k = 10usize;
    for (wname, w) in [
        ("delta 1e-3 L", precompute_w(&a, 1e-3 * 128.0).unwrap()),
        ("delta 1e-2 L", precompute_w(&a, 1e-2 * 128.0).unwrap()),
        ("delta 0.1 L", precompute_w(&a, 0.1 * 128.0).unwrap()),
        ("matched A/N", matched_weights(&a)),
    ] {
        // typical peak of |W^H y| over the batch
        let zpeak: f64 = batch
            .iter()
            .map(|s| {
                w.matrix()
                    .adjoint_matvec(&s.measurement.values)
                    .iter()
                    .map(|c| c.norm())
                    .fold(0.0f64, f64::max)
            })
            .sum::<f64>()
            / batch.len() as f64;
        let eps = 0.005;
        let mut results: Vec<(f64, String)> = Vec::new();
        for beta in [0.1, 0.2, 0.35, 0.5, 0.8, 1.2] {
            for q in [0.3, 0.6, 0.9] {
                for r in [0.4f64, 0.6, 0.8] {
                    for floor_frac in [1e-3, 1e-2, 0.05] {
                        let zp = beta * zpeak;
                        let mu0 = q * zp * (zp + eps);
                        let mu_min = floor_frac * zp * (zp + eps);
                        let mu: Vec<f64> =
                            (0..k).map(|i| (mu0 * r.powi(i as i32)).max(mu_min)).collect();
                        let p = NetworkParams {
                            mu,
                            beta: vec![beta; k],
                            epsilon_rule: EpsilonRule::RelativeToPeak(0.005),
                            mode: ThresholdMode::Adaptive,
                            geometry_hash: a.geometry_hash(),
                        };
                        let mut acc = 0.0;
                        let mut ok = true;
                        for s in &batch {
                            let Ok((out, _)) = forward(&s.measurement, &a, &w, &p, false) else {
                                ok = false;
                                break;
                            };
                            let e: f64 = out
                                .values
                                .iter()
                                .zip(s.label.values.iter())
                                .map(|(gv, l)| (gv - l).norm_sqr())
                                .sum();
                            if !e.is_finite() {
                                ok = false;
                                break;
                            }
                            acc += e;
                        }
                        if ok {
                            let nmse = acc / batch.len() as f64 / mean_label_energy;
                            results.push((
                                nmse,
                                format!("beta {beta} q {q} r {r} floor {floor_frac}"),
                            ));
                        }
                    }
                }
            }
        }
        results.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        println!("== {wname}:");
        for (v, desc) in results.iter().take(5) {
            println!("   nmse {v:8.4}  {desc}");
        }
    }
}
