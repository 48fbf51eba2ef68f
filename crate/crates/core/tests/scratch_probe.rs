// Temporary calibration probe; removed before release.
use num_complex::Complex;
use tomosar_core::geometry::ImagingGeometry;
use tomosar_core::metrics::{dsr_monte_carlo, DsrConfig};
use tomosar_core::net::{EpsilonRule, ThresholdMode};
use tomosar_core::simulate::{simulate_pixel, ReflectivityProfile, SnrSpec, TrainingSample};
use tomosar_core::solvers::{OmpConfig, Solver};
use tomosar_core::train::{init_params, train, TrainConfig};
use tomosar_core::weights::precompute_w;

#[test]
#[ignore]
fn probe_beta_landscape() {
    use tomosar_core::net::{forward, NetworkParams};
    let g = ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 32, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let w = precompute_w(&a, 0.0).unwrap();
    let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
    label.values[g.l() / 3] = Complex::new(1.0, 0.4);
    label.values[2 * g.l() / 3] = Complex::new(-0.5, 0.9);
    let y = simulate_pixel(&label, &a, SnrSpec::Db(20.0), 2).unwrap();
    for k in [6usize, 10] {
        for beta in [0.001, 0.003, 0.01, 0.03, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0, 1.5, 2.0] {
            let p = NetworkParams::constant_init(
                k,
                1e-9,
                beta,
                EpsilonRule::RelativeToPeak(0.005),
                ThresholdMode::Adaptive,
                a.geometry_hash(),
            )
            .unwrap();
            let (out, _) = forward(&y, &a, &w, &p, false).unwrap();
            let loss: f64 = out
                .values
                .iter()
                .zip(label.values.iter())
                .map(|(g, l)| (g - l).norm_sqr())
                .sum();
            println!("K {k} beta {beta:7.3} -> loss {loss:.6}");
        }
    }
}

#[test]
#[ignore]
fn probe_beta_mu_grid() {
    use tomosar_core::net::{forward, NetworkParams};
    let g = ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 32, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let w = precompute_w(&a, 0.0).unwrap();
    let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
    label.values[g.l() / 3] = Complex::new(1.0, 0.4);
    label.values[2 * g.l() / 3] = Complex::new(-0.5, 0.9);
    let y = simulate_pixel(&label, &a, SnrSpec::Noiseless, 2).unwrap();
    {
        let mut cfg = tomosar_core::solvers::IstaConfig::new(0.05);
        cfg.max_iters = 500;
        cfg.tol = 0.0;
        let sol = tomosar_core::solvers::ista(&y, &a, &cfg).unwrap();
        let loss: f64 = sol
            .profile
            .values
            .iter()
            .zip(label.values.iter())
            .map(|(gv, l)| (gv - l).norm_sqr())
            .sum();
        println!("ISTA(500, lambda 0.05) reference loss {loss:.6}");
    }
    let corr = w.matrix().adjoint_matvec(&y.values);
    let mut mags: Vec<f64> = corr.iter().map(|c| c.norm()).collect();
    mags.sort_by(|x, z| x.partial_cmp(z).unwrap());
    let med_corr = mags[mags.len() / 2];
    let eps = 0.005 * y.values.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for k in [6usize, 10] {
    for snr in [SnrSpec::Noiseless, SnrSpec::Db(20.0)] {
    let y = simulate_pixel(&label, &a, snr, 2).unwrap();
    for beta in [0.05, 0.1, 0.2, 0.35, 0.5, 0.8] {
        for f in [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 6.0] {
            let medz = beta * med_corr;
            let mu = f * medz * (medz + eps);
            let p = NetworkParams::constant_init(
                k,
                mu,
                beta,
                EpsilonRule::RelativeToPeak(0.005),
                ThresholdMode::Adaptive,
                a.geometry_hash(),
            )
            .unwrap();
            let (out, _) = forward(&y, &a, &w, &p, false).unwrap();
            let loss: f64 = out
                .values
                .iter()
                .zip(label.values.iter())
                .map(|(gv, l)| (gv - l).norm_sqr())
                .sum();
            println!("K {k} snr {snr:?} beta {beta:5.2} f {f:5.1} mu {mu:9.2e} -> loss {loss:12.6}");
        }
    }
    }
    }
}

#[test]
#[ignore]
fn probe_overfit() {
    let g = ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 32, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let w = precompute_w(&a, 0.0).unwrap();
    let mut label = ReflectivityProfile::zeros(g.l(), g.hash());
    label.values[g.l() / 3] = Complex::new(1.0, 0.4);
    label.values[2 * g.l() / 3] = Complex::new(-0.5, 0.9);
    let measurement = simulate_pixel(&label, &a, SnrSpec::Db(20.0), 2).unwrap();
    let data = vec![TrainingSample { measurement, label }];
    let init = init_params(
        &data,
        &a,
        &w,
        6,
        ThresholdMode::Adaptive,
        EpsilonRule::RelativeToPeak(0.005),
    )
    .unwrap();
    println!("init mu {:?} beta {:?}", init.mu, init.beta);
    let mut cfg = TrainConfig::new(500, 3);
    cfg.batch_size = 1;
    cfg.learning_rate = 0.01;
    cfg.lr_patience = 10_000;
    let out = train(&data, &a, &w, &init, &cfg, None).unwrap();
    for e in out.curve.iter().step_by(50) {
        println!("epoch {} loss {:.6e} lr {}", e.epoch, e.train_loss, e.learning_rate);
    }
    println!("final loss {:.6e}", out.curve.last().unwrap().train_loss);
    println!("final mu {:?}", out.params.mu);
    println!("final beta {:?}", out.params.beta);
}

#[test]
#[ignore]
fn probe_dsr_regimes() {
    let g =
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0).unwrap();
    let solver = Solver::Omp(OmpConfig { max_sparsity: 2, residual_tol: 1e-12 });
    for fixed_phase in [true, false] {
        for snr in [0.0, 5.0, 10.0, 15.0, 20.0] {
            let mut cfg = DsrConfig::new(snr, 1.2);
            cfg.trials = 300;
            cfg.phase_diff_rad = if fixed_phase { Some(0.0) } else { None };
            let r = dsr_monte_carlo(&cfg, &g, &solver, 7).unwrap();
            println!(
                "omp k2 snr {snr:5.1} alpha 1.2 fixed_phase {fixed_phase} -> rate {:.3}",
                r.rate
            );
        }
    }
}
