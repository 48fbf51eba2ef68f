// Temporary calibration probe; removed before release.
use tomosar_core::geometry::ImagingGeometry;
use tomosar_core::metrics::{dsr_monte_carlo, DsrConfig};
use tomosar_core::net::{EpsilonRule, ThresholdMode};
use tomosar_core::simulate::{gen_training_set, TrainingSetSpec};
use tomosar_core::solvers::{OmpConfig, Solver, SvdTruncation};
use tomosar_core::train::{init_params, train, validation_nmse, TrainConfig};
use tomosar_core::weights::precompute_w;

#[test]
#[ignore]
fn probe_acceptance_shape() {
    let g =
        ImagingGeometry::uniform_array(0.021, 400.0, 8, 0.084, 128, -12.5, 12.5, 0.0).unwrap();
    let a = g.build_steering();
    let w = precompute_w(&a, 1e-3 * 128.0).unwrap();
    let train_set = gen_training_set(&g, &a, &TrainingSetSpec::standard(3000), 11).unwrap();
    let mut val_spec = TrainingSetSpec::standard(500);
    val_spec.snr_levels_db = vec![30.0];
    let val_set = gen_training_set(&g, &a, &val_spec, 99).unwrap();

    let mut nets = Vec::new();
    for mode in [ThresholdMode::Adaptive, ThresholdMode::Constant] {
        for k in [2usize, 6, 10] {
            let t0 = std::time::Instant::now();
            let init = init_params(&train_set, &a, &w, k, mode, EpsilonRule::RelativeToPeak(0.005))
                .unwrap();
            let mut cfg = TrainConfig::new(110, 5);
            cfg.learning_rate = 0.01;
            let out = train(&train_set, &a, &w, &init, &cfg, None).unwrap();
            let v = validation_nmse(&val_set, &a, &w, &out.params).unwrap();
            println!(
                "{:?} K {k}: val NMSE {v:.4} ({:.0?})",
                mode,
                t0.elapsed()
            );
            if k == 10 {
                nets.push((mode, out.params));
            }
        }
    }
    let mut solvers: Vec<(String, Solver<f64>)> = nets
        .into_iter()
        .map(|(mode, p)| {
            (format!("{mode:?}"), Solver::Network { weights: w.clone(), params: p })
        })
        .collect();
    solvers.push(("omp2".into(), Solver::Omp(OmpConfig { max_sparsity: 2, residual_tol: 1e-9 })));
    solvers.push(("svd".into(), Solver::Svd(SvdTruncation::Rank(8))));

    for (name, solver) in &solvers {
        let mut line = format!("{name:9}");
        // acceptance 5 point
        let mut c = DsrConfig::new(20.0, 0.3);
        c.trials = 200;
        line += &format!(" | a5(20dB,a.3) {:.3}", dsr_monte_carlo(&c, &g, solver, 7).unwrap().rate);
        // SNR sweep at alpha 0.6
        let mut sweep = String::new();
        for snr in [0.0, 4.0, 8.0, 12.0, 16.0, 20.0] {
            let mut c = DsrConfig::new(snr, 0.6);
            c.trials = 200;
            sweep += &format!(" {:.2}", dsr_monte_carlo(&c, &g, solver, 7).unwrap().rate);
        }
        line += &format!(" | snr sweep{sweep}");
        // alpha sweep at 10 dB
        let mut sweep = String::new();
        for alpha in [0.2, 0.4, 0.6, 0.8, 1.0, 1.2] {
            let mut c = DsrConfig::new(10.0, alpha);
            c.trials = 200;
            sweep += &format!(" {:.2}", dsr_monte_carlo(&c, &g, solver, 7).unwrap().rate);
        }
        line += &format!(" | alpha sweep{sweep}");
        println!("{line}");
    }

    // Localization error structure of the adaptive net at alpha 0.6.
    use num_complex::Complex;
    use rand::{RngExt, SeedableRng};
    use tomosar_core::metrics::{crlb_sigma, extract_peaks};
    use tomosar_core::simulate::{derive_seed, PixelMeasurement, SnrSpec};
    let (_, net) = (&solvers[0].0, &solvers[0].1);
    let rho = g.rayleigh_resolution().unwrap();
    for snr_db in [12.0f64, 20.0] {
        let snr_lin = 10f64.powf(snr_db / 10.0);
        let spacing = 0.6 * rho;
        let mut errs: Vec<f64> = Vec::new();
        let mut gates: Vec<f64> = Vec::new();
        let mut npk = [0usize; 3];
        for trial in 0..200u64 {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(91, 20, trial));
            let lo = g.grid_min() + spacing / 2.0 + g.grid_spacing();
            let hi = g.grid_max() - spacing / 2.0 - g.grid_spacing();
            let center = lo + rng.random::<f64>() * (hi - lo);
            let s1 = center - spacing / 2.0;
            let s2 = center + spacing / 2.0;
            let p1 = rng.random::<f64>() * std::f64::consts::TAU;
            let dphi = rng.random::<f64>() * std::f64::consts::TAU;
            gates.push(3.0 * crlb_sigma(&g, snr_lin, 0.6, dphi).unwrap().sigma_d);
            let v1 = g.steering_vector_at(s1);
            let v2 = g.steering_vector_at(s2);
            let a1 = Complex::from_polar(1.0, p1);
            let a2 = Complex::from_polar(1.0, p1 + dphi);
            let mut y: Vec<Complex<f64>> =
                v1.iter().zip(v2.iter()).map(|(u, v)| u * a1 + v * a2).collect();
            let sp: f64 = y.iter().map(|c| c.norm_sqr()).sum();
            let mut nrng = rand_chacha::ChaCha12Rng::seed_from_u64(derive_seed(91, 21, trial));
            let cstd = (sp / (8.0 * snr_lin) / 2.0).sqrt();
            for v in y.iter_mut() {
                let u1: f64 = 1.0 - nrng.random::<f64>();
                let u2: f64 = nrng.random::<f64>();
                let r = (-2.0 * u1.ln()).sqrt();
                *v += Complex::new(
                    cstd * r * (std::f64::consts::TAU * u2).cos(),
                    cstd * r * (std::f64::consts::TAU * u2).sin(),
                );
            }
            let meas = PixelMeasurement { values: y, snr: SnrSpec::Db(snr_db) };
            let prof = net.solve(&meas, &a).unwrap();
            let peaks =
                extract_peaks(&prof.values, g.elevation_grid_m(), 2, 0.05, true).unwrap();
            npk[peaks.len().min(2)] += 1;
            if peaks.len() == 2 {
                let (e1, e2) = (peaks[0].elevation_m, peaks[1].elevation_m);
                let direct = (e1 - s1).abs().max((e2 - s2).abs());
                let swapped = (e1 - s2).abs().max((e2 - s1).abs());
                errs.push(direct.min(swapped));
            }
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        gates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |v: &Vec<f64>, p: f64| v[(p * (v.len() - 1) as f64) as usize];
        println!(
            "net@{snr_db}dB a.6: peaks(0/1/2)={npk:?} err q25/50/75 = {:.2}/{:.2}/{:.2} gate q25/50/75 = {:.2}/{:.2}/{:.2}",
            q(&errs, 0.25), q(&errs, 0.5), q(&errs, 0.75),
            q(&gates, 0.25), q(&gates, 0.5), q(&gates, 0.75)
        );
    }
}
