use edrisk_core::scenario::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

fn fitted(t: usize) -> ProfileModel {
    fit_profile(&synthetic_history(365, t, 42), 300.0, vec![0.2, 0.3, 0.5]).unwrap().model
}

#[test]
fn lognormal_noise_has_unit_mean_and_five_percent_std() {
    let d = unit_mean_lognormal(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((0.999..=1.001).contains(&mean), "mean {mean}");
    assert!((0.048..=0.052).contains(&std), "std {std}");
}

#[test]
fn profile_means_match_fitted_marginals() {
    let model = fitted(36);
    let sampler = Sampler::new(&model).unwrap();
    let n = 10_000;
    let mut sums = vec![0.0; 36];
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        rng.set_stream(i);
        for (s, g) in sums.iter_mut().zip(sampler.profile(&mut rng)) {
            *s += g;
        }
    }
    for (t, m) in model.marginals.iter().enumerate() {
        let se = (m.variance() / n as f64).sqrt();
        let mean = sums[t] / n as f64;
        assert!((mean - m.mean()).abs() <= 3.0 * se, "t={t}: {mean} vs {} (se {se})", m.mean());
    }
}

#[test]
fn independent_history_gives_near_identity_copula() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let hist: Vec<Vec<f64>> = (0..10_000).map(|_| (0..6).map(|_| rng.random_range(0.01..=1.0)).collect()).collect();
    let fit = fit_profile(&hist, 1.0, vec![1.0]).unwrap();
    for i in 0..6 {
        for j in 0..6 {
            if i != j {
                assert!(fit.model.correlation[(i, j)].abs() < 0.05);
            }
        }
    }
}

#[test]
fn expected_total_load_follows_profile_mean() {
    let model = fitted(12);
    let scen = sample_scenarios(&model, 10_000, 8).unwrap();
    for t in 0..12 {
        let avg = scen.iter().map(|s| s.load(t).iter().sum::<f64>()).sum::<f64>() / scen.len() as f64;
        let expected = model.marginals[t].mean() * model.peak_load;
        assert!((avg - expected).abs() <= 0.01 * expected, "t={t}: {avg} vs {expected}");
    }
}

#[test]
fn sampling_ignores_thread_count() {
    let model = fitted(36);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_scenarios(&model, 64, 7).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a, b);
    assert!(a.iter().all(|s| s.loads.as_slice().iter().all(|&v| v >= 0.0)));
}

#[test]
fn noise_free_point_mass_reproduces_shares() {
    let mut model = fit_profile(&vec![vec![0.8; 3]; 30], 250.0, vec![0.1, 0.9]).unwrap().model;
    model.noise_std = 0.0;
    let s = &sample_scenarios(&model, 1, 0).unwrap()[0];
    assert_eq!(s.load(1), &[0.1 * (0.8 * 250.0), 0.9 * (0.8 * 250.0)]);
}
