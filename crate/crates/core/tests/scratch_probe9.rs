// Temporary calibration probe; removed before release.
use num_complex::Complex;
use tomosar_core::geometry::ImagingGeometry;
use tomosar_core::linalg::CMat;
use tomosar_core::net::{forward, EpsilonRule, NetworkParams, ThresholdMode};
use tomosar_core::simulate::{simulate_pixel, ReflectivityProfile, SnrSpec};
use tomosar_core::weights::AlistaWeights;

#[test]
#[ignore]
fn probe_trace() {
    let g =
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let n = a.n();
    let mut m = CMat::zeros(n, a.l());
    for r in 0..n {
        for c in 0..a.l() {
            *m.at_mut(r, c) = a.entry(r, c) / n as f64;
        }
    }
    let w = AlistaWeights::from_parts(m, 0.0, 0.0, 0.0, a.geometry_hash());

    let true_cell = 47usize;
    let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
    label.values[true_cell] = Complex::from_polar(1.0, 0.7);
    let y = simulate_pixel(&label, &a, SnrSpec::Noiseless, 5).unwrap();

    let k = 10usize;
    let beta = 1.0;
    let zp = beta * 1.0;
    let q = 0.9;
    let r = 0.6f64;
    let eps = 0.005;
    let mu0 = q * zp * (zp + eps);
    let mu: Vec<f64> = (0..k).map(|i| (mu0 * r.powi(i as i32)).max(0.01 * zp)).collect();
    let p = NetworkParams {
        mu,
        beta: vec![beta; k],
        epsilon_rule: EpsilonRule::RelativeToPeak(0.005),
        mode: ThresholdMode::Adaptive,
        geometry_hash: a.geometry_hash(),
    };
    let (out, trace) = forward(&y, &a, &w, &p, true).unwrap();
    let trace = trace.unwrap();
    for layer in 0..k {
        let zt = trace.z[layer][true_cell].norm();
        let tt = trace.theta[layer][true_cell];
        let gt = trace.gamma[layer][true_cell].norm();
        let (off_max_i, off_max) = trace.gamma[layer]
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != true_cell)
            .map(|(i, c)| (i, c.norm()))
            .fold((0, 0.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let support = trace.gamma[layer].iter().filter(|c| c.norm() > 0.0).count();
        let dres = trace.residual[layer].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        println!(
            "layer {layer}: mu {:.3e} | z@true {zt:.4} th@true {tt:.4} g@true {gt:.4} | offmax {off_max:.4}@{off_max_i} supp {support} |D| {dres:.4}",
            p.mu[layer]
        );
    }
    let err: f64 = out
        .values
        .iter()
        .zip(label.values.iter())
        .map(|(gv, l)| (gv - l).norm_sqr())
        .sum();
    println!("final nmse {err:.6}");
}
