use edrisk_core::grid::Penalties;
use edrisk_core::risk::*;
use edrisk_core::sim::{Step, Trajectory};
use proptest::prelude::*;

fn insertion_sorted(v: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for &x in v {
        let pos = out.iter().position(|&y| y > x).unwrap_or(out.len());
        out.insert(pos, x);
    }
    out
}

fn brute_cvar(v: &[f64], alpha: f64) -> f64 {
    let s = insertion_sorted(v);
    let n = s.len();
    let k = (1..=n).find(|&k| k as f64 >= alpha * n as f64 - 1e-9).unwrap_or(n);
    let thr = s[k - 1];
    let mut sum = 0.0;
    let mut cnt = 0usize;
    for &x in &s {
        if x >= thr {
            sum += x;
            cnt += 1;
        }
    }
    sum / cnt as f64
}

fn brute_prob(v: &[f64], thr: f64) -> f64 {
    let mut c = 0;
    for &x in v {
        if x >= thr {
            c += 1;
        }
    }
    c as f64 / v.len() as f64
}

fn brute_risk(v: &[f64], price: f64) -> f64 {
    let mut s = 0.0;
    for &x in v {
        s += price * x;
    }
    s / v.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn metrics_equal_brute_force(
        v in prop::collection::vec(prop_oneof![-1e3..1e3f64, Just(0.0), Just(2.5)], 1..1000),
        alpha in prop_oneof![0.0..1.0f64, Just(0.9), Just(0.95), Just(0.0)],
        thr in -1e3..1e3f64,
    ) {
        prop_assert_eq!(cvar(&v, alpha), brute_cvar(&v, alpha));
        prop_assert_eq!(prob_failure(&v, thr), brute_prob(&v, thr));
        prop_assert_eq!(risk(&v, CostFn::Linear { price: 5000.0 }), brute_risk(&v, 5000.0));
    }
}

proptest! {
    #[test]
    fn metrics_are_monotone(v in prop::collection::vec(-50.0..50.0f64, 1..200), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cvar(&v, lo) <= cvar(&v, hi) + 1e-9);
        prop_assert!(quantile(&v, hi) <= cvar(&v, hi) + 1e-9);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!(cvar(&v, lo) >= mean - 1e-9);
        prop_assert!(prob_failure(&v, lo * 100.0 - 50.0) >= prob_failure(&v, hi * 100.0 - 50.0));
    }
}

fn step(imbalance: f64, xi: [f64; 2], cost: f64) -> Step {
    Step {
        p: vec![0.0],
        p_lo: vec![0.0],
        p_hi: vec![0.0],
        flows: vec![0.0, 0.0],
        xi_th: xi.to_vec(),
        imbalance,
        cost_energy: cost,
        cost_thermal: 0.0,
        cost_pb: 0.0,
        infeasible: None,
    }
}

fn traj(id: usize, steps: Vec<Step>) -> Trajectory {
    Trajectory {
        scenario: id,
        backend: "test".into(),
        p0: vec![0.0],
        p0_fallback: false,
        steps,
    }
}

fn hand_built() -> Vec<Trajectory> {
    vec![
        traj(0, vec![step(0.0, [0.0, 0.0], 100.0), step(-2.0, [1.0, 0.0], 120.0)]),
        traj(1, vec![step(0.5, [0.0, 3.0], 90.0), step(0.0, [0.0, 0.0], 130.0)]),
        traj(2, vec![step(0.0, [2.0, 0.0], 110.0), step(1.0, [0.0, 0.5], 125.0)]),
    ]
}

#[test]
fn report_matches_flat_loops() {
    let trs = hand_built();
    let st = RiskSettings::new(0.5, 0, 2, Penalties::default());
    let rep = build_report(&trs, &QoiKind::SYSTEM, &st, "test").unwrap();
    for series in &rep.system {
        for (i, &t) in series.t.iter().enumerate() {
            let mut col = Vec::new();
            for tr in &trs {
                let s = &tr.steps[t];
                col.push(match series.kind {
                    QoiKind::ImbalanceAbs => s.imbalance.abs(),
                    QoiKind::ImbalanceSigned => s.imbalance,
                    QoiKind::ThermalTotal => s.xi_th[0] + s.xi_th[1],
                    QoiKind::TotalCost => s.cost_energy,
                    QoiKind::ThermalBranch(_) => unreachable!(),
                });
            }
            assert_eq!(series.cvar[i], brute_cvar(&col, 0.5), "{} t={t}", series.kind);
            let price = match series.kind {
                QoiKind::ImbalanceAbs | QoiKind::ImbalanceSigned => 5000.0,
                QoiKind::ThermalTotal => 1500.0,
                _ => 1.0,
            };
            assert_eq!(series.risk[i], brute_risk(&col, price));
            match &series.prob_failure {
                Some(p) => assert_eq!(p[i], brute_prob(&col, 1e-6)),
                None => assert_eq!(series.kind, QoiKind::TotalCost),
            }
        }
    }
    // Hand values: |imbalance| at t=1 is (2, 0, 1).
    let abs = &rep.system[0];
    assert_eq!(abs.prob_failure.as_ref().unwrap()[1], 2.0 / 3.0);
    assert_eq!(abs.risk[1], 5000.0);
    assert_eq!(abs.cvar[1], 1.5);
    assert_eq!(rep.branches.len(), 2);
    assert_eq!(rep.branches[1].prob_failure.as_ref().unwrap(), &vec![1.0 / 3.0, 1.0 / 3.0]);
}

#[test]
fn identical_inputs_give_identical_reports() {
    let st = RiskSettings::new(0.9, 0, 2, Penalties::default());
    let a = build_report(&hand_built(), &QoiKind::SYSTEM, &st, "x").unwrap();
    let b = build_report(&hand_built(), &QoiKind::SYSTEM, &st, "x").unwrap();
    assert_eq!(a, b);
}

#[test]
fn single_scenario_cvar_is_the_value() {
    let trs = vec![traj(0, vec![step(3.0, [0.0, 0.0], 7.0)])];
    for alpha in [0.0, 0.5, 0.99] {
        let st = RiskSettings::new(alpha, 0, 1, Penalties::default());
        let rep = build_report(&trs, &[QoiKind::TotalCost], &st, "x").unwrap();
        assert_eq!(rep.system[0].cvar, vec![7.0]);
    }
}

#[test]
fn mismatched_horizons_are_rejected() {
    let mut trs = hand_built();
    trs[1].steps.pop();
    let st = RiskSettings::new(0.9, 0, 1, Penalties::default());
    assert!(matches!(build_report(&trs, &QoiKind::SYSTEM, &st, "x"), Err(RiskError::MismatchedHorizons(_))));
    assert!(check_aligned(&hand_built(), &trs).is_err());
    assert!(check_aligned(&hand_built(), &hand_built()).is_ok());
}

#[test]
fn qq_pairs_sort_both_sides() {
    let pairs = qq_pairs(&[3.0, 1.0, 2.0], &[10.0, 30.0, 20.0]);
    assert_eq!(pairs, vec![(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]);
    let bands = cost_bands(&hand_built(), 0, 2);
    assert_eq!(bands[0].lower, 90.0);
    assert_eq!(bands[0].upper, 110.0);
    assert_eq!(bands[0].mean, 100.0);
}
