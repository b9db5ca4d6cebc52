use serde::{Deserialize, Serialize};

use crate::ed::tighten_bounds;
use crate::grid::GridSpec;
use crate::proxies::ProxyInput;
use crate::scenario::Scenario;
use crate::sim::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug)]
pub struct Record {
    pub input: ProxyInput,
    pub scenario: usize,
    pub t: usize,
    pub split: Split,
    pub demand: f64,
    /// `Φ·d`, cached for the thermal loss.
    pub base_flow: Vec<f64>,
    /// Oracle ED objective at this input (energy + thermal), $.
    pub oracle_cost: f64,
}

impl Record {
    /// Standalone training-split record with the cached demand and flows.
    pub fn new(spec: &GridSpec, input: ProxyInput, oracle_cost: f64) -> Self {
        Self {
            demand: input.d.iter().sum(),
            base_flow: spec.ptdf().mul_vec(&input.d),
            input,
            scenario: 0,
            t: 0,
            split: Split::Train,
            oracle_cost,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainSet {
    pub records: Vec<Record>,
    /// Steps dropped because the oracle ED was infeasible there.
    pub excluded: usize,
}

impl TrainSet {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Scenario-level 80/10/10 split by position.
fn split_of(pos: usize, n: usize) -> Split {
    let n_train = (0.8 * n as f64).round() as usize;
    let n_val = ((0.1 * n as f64).round() as usize).max(usize::from(n >= 3));
    if pos < n_train.min(n.saturating_sub(n_val)) {
        Split::Train
    } else if pos < n_train + n_val {
        Split::Val
    } else {
        Split::Test
    }
}

/// One record per (scenario, t), with bounds chained from the oracle
/// trajectory of the same scenario.
pub fn build_dataset(scenarios: &[Scenario], spec: &GridSpec, oracle: &[Trajectory]) -> TrainSet {
    assert_eq!(scenarios.len(), oracle.len(), "one oracle trajectory per scenario");
    let mut set = TrainSet::default();
    let n = scenarios.len();
    for (pos, (sc, tr)) in scenarios.iter().zip(oracle).enumerate() {
        assert_eq!(sc.id, tr.scenario, "scenario order must match trajectories");
        let split = split_of(pos, n);
        let mut prev = &tr.p0;
        for (t, step) in tr.steps.iter().enumerate() {
            if step.infeasible.is_some() {
                set.excluded += 1;
            } else {
                let d = sc.load(t).to_vec();
                let (p_lo, p_hi) = tighten_bounds(spec, prev);
                let mut r = Record::new(spec, ProxyInput { d, p_lo, p_hi }, step.cost_energy + step.cost_thermal);
                r.scenario = sc.id;
                r.t = t;
                r.split = split;
                set.records.push(r);
            }
            prev = &step.p;
        }
    }
    set
}
