//! Bundled test systems.

use rand::Rng;

use crate::grid::{Branch, Generator, GridFile, GridSpec, LoadProfile, Penalties};

/// JSON source of the 6-bus, 4-generator system with one congestible line
/// (branch 0, bus 0 to bus 1).
pub const TOY6_JSON: &str = include_str!("../fixtures/toy6.json");

pub fn toy6() -> GridSpec {
    GridSpec::from_json_str(TOY6_JSON).expect("bundled toy6 grid is valid")
}

/// Random connected system with one generator per bus: a ring (a single
/// line for two buses) plus an optional chord. Branch limits are drawn so
/// that some instances congest. Peak load sits at 60% of capacity.
pub fn random_system<R: Rng + ?Sized>(n_gens: usize, rng: &mut R) -> GridSpec {
    assert!(n_gens >= 1, "need at least one generator");
    let n = n_gens;
    let generators: Vec<Generator> = (0..n)
        .map(|bus| {
            let p_min = rng.random_range(0.0..20.0);
            let p_max = p_min + rng.random_range(30.0..120.0);
            let ramp = rng.random_range(0.3..1.0) * p_max;
            Generator {
                bus,
                cost: rng.random_range(5.0..80.0),
                p_min,
                p_max,
                ramp_up: ramp,
                ramp_down: ramp,
            }
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = match n {
        1 => vec![],
        2 => vec![(0, 1)],
        _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    };
    if n >= 4 && rng.random_bool(0.5) {
        edges.push((0, n / 2));
    }
    let capacity: f64 = generators.iter().map(|g| g.p_max).sum();
    let branches = edges
        .into_iter()
        .map(|(from, to)| {
            let limit = rng.random_range(0.15..0.6) * capacity;
            Branch {
                from,
                to,
                susceptance: rng.random_range(2.0..20.0),
                f_min: -limit,
                f_max: limit,
            }
        })
        .collect();
    let mut shares: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
    let sum: f64 = shares.iter().sum();
    shares.iter_mut().for_each(|s| *s /= sum);
    GridSpec::from_file(GridFile {
        name: Some(format!("random{n}")),
        n_buses: n,
        slack_bus: 0,
        generators,
        branches,
        penalties: Penalties::default(),
        ptdf: None,
        load_profile: Some(LoadProfile {
            peak_load: 0.6 * capacity,
            shares,
        }),
    })
    .expect("random system is well formed")
}
