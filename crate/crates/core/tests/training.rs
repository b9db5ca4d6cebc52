use edrisk_core::ed::tighten_bounds;
use edrisk_core::fixtures::{random_system, toy6};
use edrisk_core::grid::GridSpec;
use edrisk_core::linalg::Matrix;
use edrisk_core::lp::SolverOptions;
use edrisk_core::proxies::{Architecture, ProxyInput, ProxyModel, ProxyOptions};
use edrisk_core::scenario::{fit_profile, sample_scenarios, synthetic_history, Scenario};
use edrisk_core::sim::{run_batch, Backend, RolloutConfig};
use edrisk_core::training::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input(spec: &GridSpec, rng: &mut ChaCha8Rng) -> ProxyInput {
    loop {
        let scale = rng.random_range(0.4..1.0) * spec.peak_load();
        let d: Vec<f64> = spec.load_shares().iter().map(|s| s * scale * rng.random_range(0.8..1.2)).collect();
        let prev: Vec<f64> = spec.generators.iter().map(|g| rng.random_range(g.p_min..=g.p_max)).collect();
        let (p_lo, p_hi) = tighten_bounds(spec, &prev);
        let total: f64 = d.iter().sum();
        if p_lo.iter().sum::<f64>() < total && total < p_hi.iter().sum::<f64>() {
            return ProxyInput { d, p_lo, p_hi };
        }
    }
}

fn loss_at(model: &ProxyModel, spec: &GridSpec, recs: &[Record], lambda: f64) -> f64 {
    let idx: Vec<usize> = (0..recs.len()).collect();
    batch_loss_grad(model, spec, recs, &idx, lambda, true).unwrap().0 / recs.len() as f64
}

#[test]
fn loss_gradient_matches_finite_differences_for_every_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for arch in Architecture::ALL {
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        while checked < 50 {
            let n = rng.random_range(2..=5);
            let spec = if checked % 5 == 0 { toy6() } else { random_system(n, &mut rng) };
            let opts = ProxyOptions {
                encoder_width: 6,
                hidden_width: 10,
                dc3_steps: 5,
                ..ProxyOptions::default()
            };
            let mut model = ProxyModel::new(&spec, arch, &opts, &mut rng).unwrap();
            // Zero initial biases put dead units exactly on the ReLU kink;
            // check at a jittered parameter point instead.
            let jittered: Vec<f64> = model.params().iter().map(|v| v + rng.random_range(-0.05..0.05)).collect();
            model.set_params(&jittered).unwrap();
            let recs: Vec<Record> = (0..3).map(|_| Record::new(&spec, random_input(&spec, &mut rng), 0.0)).collect();
            let inputs: Vec<ProxyInput> = recs.iter().map(|r| r.input.clone()).collect();
            let pass = model.forward(&inputs, true).unwrap();
            let near_switch = pass.rows.iter().zip(&recs).any(|(row, r)| {
                let s: f64 = row.as_ref().unwrap().p_hat.iter().sum();
                (s - r.demand).abs() <= 1e-3 * r.demand
            });
            if near_switch {
                continue;
            }
            let lambda = 0.5;
            let idx = [0, 1, 2];
            let (_, grad) = batch_loss_grad(&model, &spec, &recs, &idx, lambda, true).unwrap();
            let theta = model.params();
            let dir: Vec<f64> = (0..theta.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let analytic: f64 = grad.iter().zip(&dir).map(|(g, v)| g * v).sum();
            let h = 1e-6;
            let shifted = |sign: f64, m: &mut ProxyModel| {
                let p: Vec<f64> = theta.iter().zip(&dir).map(|(t, v)| t + sign * h * v).collect();
                m.set_params(&p).unwrap();
                loss_at(m, &spec, &recs, lambda)
            };
            let fd = (shifted(1.0, &mut model) - shifted(-1.0, &mut model)) / (2.0 * h);
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
            assert!(rel <= 1e-4, "{arch}: analytic {analytic} vs fd {fd} (rel {rel:e})");
            checked += 1;
        }
        eprintln!("{arch}: worst relative error {worst:e}");
    }
}

#[test]
fn e2elr_loss_never_evaluates_a_balance_penalty() {
    let spec = toy6();
    let d = vec![10.0; 6];
    let flow = spec.ptdf().mul_vec(&d);
    let lo = spec.p_min();
    let hi = spec.p_max();
    // Far out of balance and out of bounds: only energy and thermal terms count.
    let p = vec![500.0, -40.0, 0.0, 0.0];
    let (parts, _) = sample_loss(Architecture::E2elr, &spec, 60.0, &flow, &lo, &hi, &p, 1.0);
    assert_eq!(parts.balance_penalty, 0.0);
    assert_eq!(parts.bound_penalty, 0.0);
    let (dnn, _) = sample_loss(Architecture::Dnn, &spec, 60.0, &flow, &lo, &hi, &p, 1.0);
    assert_eq!(dnn.balance_penalty, 5000.0 * 400.0);
}

fn dataset(spec: &GridSpec, scenarios: usize, horizon: usize, seed: u64) -> (Vec<Scenario>, TrainSet) {
    let fit = fit_profile(&synthetic_history(90, horizon, seed), spec.peak_load(), spec.load_shares()).unwrap();
    let sc = sample_scenarios(&fit.model, scenarios, seed).unwrap();
    let oracle = run_batch(&sc, spec, Backend::Oracle(SolverOptions::default()), &RolloutConfig::full(horizon), 1).unwrap();
    let set = build_dataset(&sc, spec, &oracle.trajectories);
    (sc, set)
}

fn quick_config(seed: u64) -> TrainConfig {
    TrainConfig {
        lr_grid: vec![1e-2],
        hidden_grid: vec![32],
        lambda_grid: vec![1.0],
        encoder_width: 16,
        batch_size: 32,
        max_epochs: 60,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn dataset_has_one_record_per_feasible_step_split_by_scenario() {
    let spec = toy6();
    let (sc, set) = dataset(&spec, 20, 6, 3);
    assert_eq!(set.len() + set.excluded, sc.len() * 6);
    for split in [Split::Train, Split::Val, Split::Test] {
        let ids: std::collections::BTreeSet<usize> = set.indices(split).iter().map(|&i| set.records[i].scenario).collect();
        for other in [Split::Train, Split::Val, Split::Test].into_iter().filter(|&s| s != split) {
            assert!(set.indices(other).iter().all(|&i| !ids.contains(&set.records[i].scenario)));
        }
    }
    let scenarios_in = |split| {
        let ids: std::collections::BTreeSet<usize> = set.indices(split).iter().map(|&i| set.records[i].scenario).collect();
        ids.len()
    };
    assert_eq!((scenarios_in(Split::Train), scenarios_in(Split::Val), scenarios_in(Split::Test)), (16, 2, 2));
}

#[test]
fn single_generator_e2elr_reproduces_the_oracle() {
    let spec = random_system(1, &mut ChaCha8Rng::seed_from_u64(2));
    let g = &spec.generators[0];
    let load = 0.5 * (g.p_min + g.p_max);
    let sc: Vec<Scenario> = (0..10)
        .map(|id| Scenario {
            id,
            seed: 0,
            loads: Matrix::from_vec(4, 1, vec![load; 4]),
        })
        .collect();
    let oracle = run_batch(&sc, &spec, Backend::Oracle(SolverOptions::default()), &RolloutConfig::full(4), 1).unwrap();
    let set = build_dataset(&sc, &spec, &oracle.trajectories);
    let mut cfg = quick_config(1);
    cfg.max_epochs = 3;
    let out = train(&spec, &set, Architecture::E2elr, &cfg).unwrap();
    for r in &set.records {
        let p = out.model.predict_one(&r.input).unwrap();
        assert!((p[0] - load).abs() <= 1e-9 * load, "{} vs {load}", p[0]);
    }
    assert!(evaluate_gap(&out.model, &spec, &set, Split::Test).unwrap().abs() < 1e-9);
}


fn two_gen_toy() -> GridSpec {
    GridSpec::from_json_str(
        r#"{
        "n_buses": 2, "slack_bus": 0,
        "generators": [
            {"bus": 0, "cost": 10.0, "p_min": 0.0, "p_max": 80.0, "ramp_up": 40.0, "ramp_down": 40.0},
            {"bus": 1, "cost": 30.0, "p_min": 0.0, "p_max": 80.0, "ramp_up": 40.0, "ramp_down": 40.0}
        ],
        "branches": [{"from": 0, "to": 1, "susceptance": 5.0, "f_min": -60.0, "f_max": 60.0}],
        "load_profile": {"peak_load": 100.0, "shares": [0.3, 0.7]}
    }"#,
    )
    .unwrap()
}

#[test]
fn training_loss_trends_down_on_two_generators() {
    let spec = two_gen_toy();
    let (_, set) = dataset(&spec, 30, 8, 4);
    for arch in [Architecture::E2elr, Architecture::Dnn] {
        let cfg = TrainConfig {
            lr_grid: vec![1e-3],
            ..quick_config(3)
        };
        let out = train(&spec, &set, arch, &cfg).unwrap();
        let log = &out.best_run().log;
        let loss: Vec<f64> = log.iter().map(|e| e.train_loss).collect();
        let smooth: Vec<f64> = loss.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0] * 1.05, "{arch}: smoothed loss rose {} -> {}", w[0], w[1]);
        }
        assert!(smooth.last().unwrap() < &smooth[0], "{arch}: no progress");
    }
}

#[test]
fn seeded_training_is_reproducible() {
    let spec = two_gen_toy();
    let (_, set) = dataset(&spec, 20, 6, 5);
    let mut cfg = quick_config(11);
    cfg.max_epochs = 15;
    cfg.hidden_grid = vec![16, 24];
    let a = train(&spec, &set, Architecture::Dc3, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| train(&spec, &set, Architecture::Dc3, &cfg).unwrap());
    assert_eq!(a.best, b.best);
    assert_eq!(a.model.params(), b.model.params());
    for (ra, rb) in a.runs.iter().zip(&b.runs) {
        let (ra, rb) = (ra.as_ref().unwrap(), rb.as_ref().unwrap());
        let strip = |l: &[EpochLog]| l.iter().map(|e| (e.epoch, e.lr, e.train_loss, e.val_loss)).collect::<Vec<_>>();
        assert_eq!(strip(&ra.log), strip(&rb.log));
    }
}

#[test]
fn learning_rate_drops_tenfold_once_per_plateau() {
    let spec = two_gen_toy();
    let (_, set) = dataset(&spec, 20, 6, 6);
    let cfg = TrainConfig {
        max_epochs: 80,
        plateau_patience: 3,
        early_stop_patience: 1000,
        ..quick_config(2)
    };
    let run = train_run(&spec, &set, Architecture::Dnn, &cfg, cfg.runs(Architecture::Dnn)[0]).unwrap();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut lr = 1e-2;
    let mut drops = 0;
    for e in &run.log {
        assert_eq!(e.lr, lr, "epoch {}", e.epoch);
        if e.val_loss < best - 1e-6 * best.abs() || !best.is_finite() {
            best = e.val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale == cfg.plateau_patience {
                lr /= 10.0;
                drops += 1;
                stale = 0;
            }
        }
    }
    assert!(drops >= 1, "schedule never triggered");
}

#[test]
fn early_stopping_ends_a_flat_run() {
    let spec = two_gen_toy();
    let (_, set) = dataset(&spec, 20, 6, 6);
    let cfg = TrainConfig {
        lr_grid: vec![1e-9],
        max_epochs: 200,
        plateau_patience: 2,
        early_stop_patience: 4,
        ..quick_config(2)
    };
    let run = train_run(&spec, &set, Architecture::E2elr, &cfg, cfg.runs(Architecture::E2elr)[0]).unwrap();
    assert!(run.log.len() < 200);
    assert_eq!(run.log.len() - run.best_epoch, 4);
}

#[test]
fn e2elr_lambda_axis_collapses() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.runs(Architecture::E2elr).len(), 4);
    assert_eq!(cfg.runs(Architecture::Dc3).len(), 8);
    assert!(TrainConfig { plateau_patience: 0, ..cfg.clone() }.validate().is_err());
    assert!(TrainConfig { hidden_grid: vec![], ..cfg }.validate().is_err());
}

#[test]
fn selected_model_test_loss_is_near_the_oracle_objective() {
    for n in 2..=5 {
        let spec = random_system(n, &mut ChaCha8Rng::seed_from_u64(100 + n as u64));
        let (_, set) = dataset(&spec, 40, 8, n as u64);
        let test = set.indices(Split::Test);
        let oracle: f64 = test.iter().map(|&i| set.records[i].oracle_cost).sum::<f64>() / test.len() as f64;
        let mut best = f64::INFINITY;
        for seed in 0..3 {
            let cfg = TrainConfig {
                max_epochs: 150,
                ..quick_config(seed)
            };
            let out = train(&spec, &set, Architecture::E2elr, &cfg).unwrap();
            let loss = mean_loss(&out.model, &spec, &set, &test, 1.0).unwrap();
            best = best.min(loss / oracle);
            if best <= 1.1 {
                break;
            }
        }
        eprintln!("{n} generators: test loss / oracle = {best:.4}");
        assert!(best <= 1.1, "{n} generators: ratio {best}");
    }
}
