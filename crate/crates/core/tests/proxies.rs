use edrisk_core::fixtures::toy6;
use edrisk_core::grid::GridSpec;
use edrisk_core::proxies::mechanisms::bound_violation_energy;
use edrisk_core::proxies::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn boxes(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|g| {
        (
            prop::collection::vec((0.0..100.0f64, 0.0..80.0f64), g),
            prop::collection::vec(0.0..=1.0f64, g),
        )
    })
    .prop_map(|(b, z)| {
        let lo: Vec<f64> = b.iter().map(|x| x.0).collect();
        let hi: Vec<f64> = b.iter().map(|x| x.0 + x.1).collect();
        let p = decode_bounded(&z, &lo, &hi);
        (lo, hi, p)
    })
}

proptest! {
    #[test]
    fn repair_succeeds_iff_demand_inside_box((lo, hi, p) in boxes(1..8), t in -0.3..1.3f64) {
        let l: f64 = lo.iter().sum();
        let u: f64 = hi.iter().sum();
        let d = l + t * (u - l);
        match e2elr_repair(&p, &lo, &hi, d) {
            Ok((out, _)) => {
                prop_assert!(l <= d && d <= u);
                let s: f64 = out.iter().sum();
                prop_assert!((s - d).abs() <= 1e-9 * (1.0 + d));
                for i in 0..out.len() {
                    prop_assert!(lo[i] <= out[i] && out[i] <= hi[i]);
                }
            }
            Err(_) => prop_assert!(!(l <= d && d <= u)),
        }
    }

    #[test]
    fn repair_is_idempotent_and_monotone((lo, hi, p) in boxes(1..8), t in 0.0..=1.0f64) {
        let l: f64 = lo.iter().sum();
        let u: f64 = hi.iter().sum();
        let d = l + t * (u - l);
        let (once, _) = e2elr_repair(&p, &lo, &hi, d).unwrap();
        let (twice, _) = e2elr_repair(&once, &lo, &hi, d).unwrap();
        for i in 0..p.len() {
            prop_assert!((once[i] - twice[i]).abs() <= 1e-12 * (1.0 + once[i].abs()));
        }
        let s: f64 = p.iter().sum();
        for i in 0..p.len() {
            if s < d {
                prop_assert!(once[i] >= p[i] && once[i] <= hi[i]);
            } else {
                prop_assert!(once[i] <= p[i] && once[i] >= lo[i]);
            }
        }
    }

    #[test]
    fn completion_balances_exactly(p in prop::collection::vec(-50.0..150.0f64, 2..8), d in 0.0..500.0f64, k in 0usize..8) {
        let slack = k % p.len();
        let out = deepopf_complete(&p, d, slack);
        let s: f64 = out.iter().sum();
        prop_assert!((s - d).abs() <= 1e-12 * (1.0 + d));
        for i in 0..p.len() {
            if i != slack {
                prop_assert_eq!(out[i], p[i]);
            }
        }
    }

    #[test]
    fn correction_keeps_balance_and_reduces_violation(
        (lo, hi, p) in boxes(2..7),
        shift in prop::collection::vec(-40.0..40.0f64, 7),
        t in 0.0..=1.0f64,
        steps in 1usize..20,
    ) {
        let g = p.len();
        let l: f64 = lo.iter().sum();
        let u: f64 = hi.iter().sum();
        let d = l + t * (u - l);
        let raw: Vec<f64> = p.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let mut cur = deepopf_complete(&raw, d, 0);
        let gamma = 1.0 / g as f64;
        let mut prev = bound_violation_energy(&cur, &lo, &hi);
        for _ in 0..steps {
            let (next, _) = dc3_correct(&cur, &lo, &hi, d, 0, 1, gamma);
            let s: f64 = next.iter().sum();
            prop_assert!((s - d).abs() <= 1e-9 * (1.0 + d));
            let e = bound_violation_energy(&next, &lo, &hi);
            prop_assert!(e <= prev * (1.0 + 1e-12) + 1e-18);
            prev = e;
            cur = next;
        }
    }
}

fn two_gen() -> GridSpec {
    GridSpec::from_json_str(
        r#"{
        "n_buses": 2, "slack_bus": 0,
        "generators": [
            {"bus": 0, "cost": 10.0, "p_min": 0.0, "p_max": 10.0, "ramp_up": 10.0, "ramp_down": 10.0},
            {"bus": 1, "cost": 20.0, "p_min": 0.0, "p_max": 10.0, "ramp_up": 10.0, "ramp_down": 10.0}
        ],
        "branches": [{"from": 0, "to": 1, "susceptance": 1.0, "f_min": -100.0, "f_max": 100.0}]
    }"#,
    )
    .unwrap()
}

fn small_opts() -> ProxyOptions {
    ProxyOptions {
        encoder_width: 8,
        hidden_width: 8,
        dc3_steps: 5,
        ..ProxyOptions::default()
    }
}

#[test]
fn random_e2elr_gives_balanced_in_bounds_dispatch() {
    let spec = two_gen();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = ProxyModel::new(&spec, Architecture::E2elr, &small_opts(), &mut rng).unwrap();
        let x = ProxyInput {
            d: vec![3.0, 5.0],
            p_lo: vec![0.0, 0.0],
            p_hi: vec![10.0, 10.0],
        };
        let p = model.predict_one(&x).unwrap();
        assert!((p.iter().sum::<f64>() - 8.0).abs() <= 1e-9 * 9.0);
        assert!(p.iter().all(|&v| (0.0..=10.0).contains(&v)));
    }
}

#[test]
fn every_architecture_respects_its_mechanism() {
    let spec = toy6();
    let x = ProxyInput {
        d: spec.load_shares().iter().map(|s| s * 200.0).collect(),
        p_lo: vec![30.0, 20.0, 10.0, 0.0],
        p_hi: vec![110.0, 80.0, 60.0, 40.0],
    };
    for arch in Architecture::ALL {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ProxyModel::new(&spec, arch, &small_opts(), &mut rng).unwrap();
        let p = model.predict_one(&x).unwrap();
        let s: f64 = p.iter().sum();
        match arch {
            Architecture::Dnn => {
                for i in 0..4 {
                    assert!(x.p_lo[i] <= p[i] && p[i] <= x.p_hi[i]);
                }
            }
            Architecture::E2elr => {
                assert!((s - 200.0).abs() <= 1e-9 * 201.0);
                for i in 0..4 {
                    assert!(x.p_lo[i] <= p[i] && p[i] <= x.p_hi[i]);
                }
            }
            Architecture::DeepOpf | Architecture::Dc3 => assert!((s - 200.0).abs() <= 1e-9 * 201.0),
        }
    }
}

#[test]
fn infeasible_demand_surfaces_from_e2elr() {
    let spec = two_gen();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = ProxyModel::new(&spec, Architecture::E2elr, &small_opts(), &mut rng).unwrap();
    let x = ProxyInput {
        d: vec![15.0, 10.0],
        p_lo: vec![0.0, 0.0],
        p_hi: vec![10.0, 10.0],
    };
    assert!(matches!(model.predict_one(&x), Err(ProxyError::RepairInfeasible { .. })));
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let spec = toy6();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = ProxyModel::new(&spec, Architecture::Dc3, &small_opts(), &mut rng).unwrap();
    model.save(dir.path(), serde_json::json!({"lr": 0.01})).unwrap();
    let (back, manifest) = ProxyModel::load(dir.path()).unwrap();
    assert_eq!(back, model);
    assert_eq!(manifest.architecture["dc3"]["steps"], 5);
    let bytes = std::fs::read(dir.path().join("model.bin")).unwrap();
    assert_eq!(bytes.len(), 8 * model.n_params());
}

#[test]
fn batched_prediction_matches_single_rows() {
    let spec = toy6();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = ProxyModel::new(&spec, Architecture::E2elr, &small_opts(), &mut rng).unwrap();
    let inputs: Vec<ProxyInput> = (0..5)
        .map(|k| ProxyInput {
            d: spec.load_shares().iter().map(|s| s * (150.0 + 20.0 * k as f64)).collect(),
            p_lo: vec![20.0, 20.0, 10.0, 0.0],
            p_hi: vec![130.0, 90.0, 70.0, 50.0],
        })
        .collect();
    let batch = model.predict(&inputs).unwrap();
    let pass = model.forward(&inputs, false).unwrap();
    for ((x, b), full) in inputs.iter().zip(batch).zip(&pass.rows) {
        let b = b.unwrap();
        assert_eq!(model.predict_one(x).unwrap(), b);
        assert_eq!(full.as_ref().unwrap().output, b);
    }
}
