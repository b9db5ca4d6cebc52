//! Sequential Monte-Carlo rollouts with an exact or a proxy dispatch backend.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ed::{evaluate, solve_ed_with, tighten_bounds, EdInstance};
use crate::grid::GridSpec;
use crate::lp::{Basis, SolverOptions};
use crate::proxies::{ProxyInput, ProxyModel};
use crate::scenario::Scenario;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("scenario {id} has shape {found:?}, expected {expected:?}")]
    Shape {
        id: usize,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("reporting window [{start}, {end}) does not fit horizon {horizon}")]
    Window { start: usize, end: usize, horizon: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Clip every backend output to the step's tightened bounds.
    pub clip: bool,
    pub window_start: usize,
    pub window_end: usize,
}

impl RolloutConfig {
    /// Whole-horizon window with clipping on.
    pub fn full(horizon: usize) -> Self {
        Self {
            clip: true,
            window_start: 0,
            window_end: horizon,
        }
    }

    pub fn check(&self, horizon: usize) -> Result<(), SimError> {
        if self.window_start >= self.window_end || self.window_end > horizon {
            return Err(SimError::Window {
                start: self.window_start,
                end: self.window_end,
                horizon,
            });
        }
        Ok(())
    }
}

impl Default for RolloutConfig {
    /// 36-step day reported over steps 4..28.
    fn default() -> Self {
        Self {
            clip: true,
            window_start: 4,
            window_end: 28,
        }
    }
}

#[derive(Clone, Copy)]
pub enum Backend<'a> {
    Oracle(SolverOptions),
    Proxy(&'a ProxyModel),
}

impl Backend<'_> {
    pub fn tag(&self) -> String {
        match self {
            Backend::Oracle(_) => "oracle".into(),
            Backend::Proxy(m) => m.architecture().to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub p: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
    pub flows: Vec<f64>,
    pub xi_th: Vec<f64>,
    /// `eᵀp − eᵀd`, MW.
    pub imbalance: f64,
    pub cost_energy: f64,
    pub cost_thermal: f64,
    pub cost_pb: f64,
    /// Backend failure on this step; the dispatch was held.
    pub infeasible: Option<String>,
}

impl Step {
    pub fn total_cost(&self) -> f64 {
        self.cost_energy + self.cost_thermal + self.cost_pb
    }

    pub fn thermal_total(&self) -> f64 {
        self.xi_th.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub scenario: usize,
    pub backend: String,
    pub p0: Vec<f64>,
    /// The initial static ED itself failed and a bound was used instead.
    pub p0_fallback: bool,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn infeasible_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.infeasible.is_some()).count()
    }
}

/// Dispatch-only wall time, ns.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub per_scenario_ns: Vec<u64>,
    pub per_batch_ns: Vec<u64>,
}

impl Timing {
    pub fn total_ns(&self) -> u64 {
        self.per_scenario_ns.iter().sum::<u64>() + self.per_batch_ns.iter().sum::<u64>()
    }
}

pub struct BatchResult {
    pub trajectories: Vec<Trajectory>,
    pub timing: Timing,
}

fn oracle_step(
    spec: &GridSpec,
    d: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &SolverOptions,
    warm: Option<&Basis>,
) -> Result<(Vec<f64>, Option<Basis>), String> {
    let inst = EdInstance::new(spec, d, lo, hi).map_err(|e| e.to_string())?;
    let sol = solve_ed_with(&inst, opts, warm).map_err(|e| e.to_string())?;
    Ok((sol.dispatch.p, sol.basis))
}

/// Static-bound ED on the first step's loads. Backend-independent.
pub fn initial_dispatch(spec: &GridSpec, d0: &[f64]) -> (Vec<f64>, bool) {
    let lo = spec.p_min();
    let hi = spec.p_max();
    match oracle_step(spec, d0, &lo, &hi, &SolverOptions::default(), None) {
        Ok((p, _)) => (p, false),
        Err(e) => {
            log::warn!("initial dispatch infeasible ({e}); starting from a bound");
            let demand: f64 = d0.iter().sum();
            (if demand > hi.iter().sum::<f64>() { hi } else { lo }, true)
        }
    }
}

fn finish_step(spec: &GridSpec, d: &[f64], raw: Result<Vec<f64>, String>, prev: &[f64], lo: Vec<f64>, hi: Vec<f64>, clip: bool) -> Step {
    let (mut p, infeasible) = match raw {
        Ok(p) => (p, None),
        Err(e) => (prev.to_vec(), Some(e)),
    };
    if clip || infeasible.is_some() {
        for ((v, &l), &h) in p.iter_mut().zip(&lo).zip(&hi) {
            *v = v.clamp(l, h);
        }
    }
    let ev = evaluate(spec, d, &p);
    Step {
        p,
        p_lo: lo,
        p_hi: hi,
        flows: ev.flows,
        xi_th: ev.xi_th,
        imbalance: ev.imbalance,
        cost_energy: ev.cost_energy,
        cost_thermal: ev.cost_thermal,
        cost_pb: ev.cost_pb,
        infeasible,
    }
}

fn check_scenarios(spec: &GridSpec, scenarios: &[Scenario]) -> Result<usize, SimError> {
    let Some(first) = scenarios.first() else { return Ok(0) };
    let expected = (first.horizon(), spec.n_buses);
    for s in scenarios {
        if s.loads.shape() != expected {
            return Err(SimError::Shape {
                id: s.id,
                expected,
                found: s.loads.shape(),
            });
        }
    }
    Ok(expected.0)
}

/// One oracle rollout, warm-starting each LP from the previous step's basis.
pub fn rollout_oracle(spec: &GridSpec, scenario: &Scenario, opts: &SolverOptions, cfg: &RolloutConfig) -> (Trajectory, u64) {
    let (p0, p0_fallback) = initial_dispatch(spec, scenario.load(0));
    let mut prev = p0.clone();
    let mut basis: Option<Basis> = None;
    let mut steps = Vec::with_capacity(scenario.horizon());
    let mut ns = 0u64;
    for t in 0..scenario.horizon() {
        let d = scenario.load(t);
        let (lo, hi) = tighten_bounds(spec, &prev);
        let clock = Instant::now();
        let raw = oracle_step(spec, d, &lo, &hi, opts, basis.as_ref());
        ns += clock.elapsed().as_nanos() as u64;
        let raw = raw.map(|(p, b)| {
            basis = b;
            p
        });
        let step = finish_step(spec, d, raw, &prev, lo, hi, cfg.clip);
        prev.clone_from(&step.p);
        steps.push(step);
    }
    let traj = Trajectory {
        scenario: scenario.id,
        backend: "oracle".into(),
        p0,
        p0_fallback,
        steps,
    };
    (traj, ns)
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
}

/// Rolls out every scenario. Results do not depend on `workers`.
pub fn run_batch(
    scenarios: &[Scenario],
    spec: &GridSpec,
    backend: Backend<'_>,
    cfg: &RolloutConfig,
    workers: usize,
) -> Result<BatchResult, SimError> {
    let horizon = check_scenarios(spec, scenarios)?;
    if scenarios.is_empty() {
        return Ok(BatchResult {
            trajectories: Vec::new(),
            timing: Timing::default(),
        });
    }
    cfg.check(horizon)?;
    let pool = pool(workers);
    match backend {
        Backend::Oracle(opts) => {
            let out: Vec<(Trajectory, u64)> =
                pool.install(|| scenarios.par_iter().map(|s| rollout_oracle(spec, s, &opts, cfg)).collect());
            let (trajectories, per_scenario_ns) = out.into_iter().unzip();
            Ok(BatchResult {
                trajectories,
                timing: Timing {
                    per_scenario_ns,
                    per_batch_ns: Vec::new(),
                },
            })
        }
        Backend::Proxy(model) => Ok(pool.install(|| rollout_proxy_batch(scenarios, spec, model, cfg, workers))),
    }
}

/// Lockstep proxy rollouts: one batched forward pass per timestep across all
/// scenarios, split into `workers` contiguous row chunks.
fn rollout_proxy_batch(
    scenarios: &[Scenario],
    spec: &GridSpec,
    model: &ProxyModel,
    cfg: &RolloutConfig,
    workers: usize,
) -> BatchResult {
    let starts: Vec<(Vec<f64>, bool)> = scenarios.par_iter().map(|s| initial_dispatch(spec, s.load(0))).collect();
    let mut prev: Vec<Vec<f64>> = starts.iter().map(|s| s.0.clone()).collect();
    let mut steps: Vec<Vec<Step>> = vec![Vec::with_capacity(scenarios[0].horizon()); scenarios.len()];
    let mut per_batch_ns = Vec::with_capacity(scenarios[0].horizon());
    let chunk = scenarios.len().div_ceil(workers.max(1));
    for t in 0..scenarios[0].horizon() {
        let inputs: Vec<ProxyInput> = scenarios
            .iter()
            .zip(&prev)
            .map(|(s, p)| {
                let (p_lo, p_hi) = tighten_bounds(spec, p);
                ProxyInput {
                    d: s.load(t).to_vec(),
                    p_lo,
                    p_hi,
                }
            })
            .collect();
        let clock = Instant::now();
        let outputs: Vec<Result<Vec<f64>, String>> = inputs
            .par_chunks(chunk)
            .flat_map_iter(|rows| match model.predict(rows) {
                Ok(r) => r.into_iter().map(|x| x.map_err(|e| e.to_string())).collect::<Vec<_>>(),
                Err(e) => vec![Err(e.to_string()); rows.len()],
            })
            .collect();
        per_batch_ns.push(clock.elapsed().as_nanos() as u64);
        let new_steps: Vec<Step> = inputs
            .into_par_iter()
            .zip(outputs)
            .zip(&prev)
            .map(|((x, raw), p)| finish_step(spec, &x.d, raw, p, x.p_lo, x.p_hi, cfg.clip))
            .collect();
        for ((acc, step), p) in steps.iter_mut().zip(new_steps).zip(prev.iter_mut()) {
            p.clone_from(&step.p);
            acc.push(step);
        }
    }
    let tag = model.architecture().to_string();
    let trajectories = scenarios
        .iter()
        .zip(starts)
        .zip(steps)
        .map(|((s, (p0, p0_fallback)), steps)| Trajectory {
            scenario: s.id,
            backend: tag.clone(),
            p0,
            p0_fallback,
            steps,
        })
        .collect();
    BatchResult {
        trajectories,
        timing: Timing {
            per_scenario_ns: Vec::new(),
            per_batch_ns,
        },
    }
}

/// Tidy CSV: `scenario,t,element,quantity,value`. Floats use the shortest
/// representation that round-trips.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "scenario,t,element,quantity,value")?;
    let mut line = String::new();
    for tr in trajectories {
        for (t, s) in tr.steps.iter().enumerate() {
            let mut emit = |element: &str, quantity: &str, value: f64| {
                line.clear();
                let _ = writeln!(line, "{},{t},{element},{quantity},{value:?}", tr.scenario);
                w.write_all(line.as_bytes())
            };
            for (g, ((&p, &lo), &hi)) in s.p.iter().zip(&s.p_lo).zip(&s.p_hi).enumerate() {
                let id = format!("gen{g}");
                emit(&id, "p", p)?;
                emit(&id, "p_lo", lo)?;
                emit(&id, "p_hi", hi)?;
            }
            for (e, (&f, &xi)) in s.flows.iter().zip(&s.xi_th).enumerate() {
                let id = format!("branch{e}");
                emit(&id, "flow", f)?;
                emit(&id, "xi_th", xi)?;
            }
            emit("system", "imbalance", s.imbalance)?;
            emit("system", "cost_energy", s.cost_energy)?;
            emit("system", "cost_thermal", s.cost_thermal)?;
            emit("system", "cost_pb", s.cost_pb)?;
            emit("system", "infeasible", if s.infeasible.is_some() { 1.0 } else { 0.0 })?;
        }
    }
    w.flush()
}

/// Reads [`write_trajectories_csv`] output back. Bounds and mechanism
/// messages are not needed downstream and `p0` is not stored.
pub fn read_trajectories_csv(path: &std::path::Path, backend: &str) -> Result<Vec<Trajectory>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let mut out: Vec<Trajectory> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let bad = || format!("{}: malformed line {}", path.display(), line + 2);
        if rec.len() != 5 {
            return Err(bad());
        }
        let id: usize = rec[0].parse().map_err(|_| bad())?;
        let t: usize = rec[1].parse().map_err(|_| bad())?;
        let v: f64 = rec[4].parse().map_err(|_| bad())?;
        if out.last().is_none_or(|tr| tr.scenario != id) {
            out.push(Trajectory {
                scenario: id,
                backend: backend.to_string(),
                p0: Vec::new(),
                p0_fallback: false,
                steps: Vec::new(),
            });
        }
        let tr = out.last_mut().unwrap();
        if t == tr.steps.len() {
            tr.steps.push(Step {
                p: Vec::new(),
                p_lo: Vec::new(),
                p_hi: Vec::new(),
                flows: Vec::new(),
                xi_th: Vec::new(),
                imbalance: 0.0,
                cost_energy: 0.0,
                cost_thermal: 0.0,
                cost_pb: 0.0,
                infeasible: None,
            });
        } else if t + 1 != tr.steps.len() {
            return Err(bad());
        }
        let s = tr.steps.last_mut().unwrap();
        match (&rec[2], &rec[3]) {
            (_, "p") => s.p.push(v),
            (_, "p_lo") => s.p_lo.push(v),
            (_, "p_hi") => s.p_hi.push(v),
            (_, "flow") => s.flows.push(v),
            (_, "xi_th") => s.xi_th.push(v),
            ("system", "imbalance") => s.imbalance = v,
            ("system", "cost_energy") => s.cost_energy = v,
            ("system", "cost_thermal") => s.cost_thermal = v,
            ("system", "cost_pb") => s.cost_pb = v,
            ("system", "infeasible") => s.infeasible = (v != 0.0).then(|| "recorded infeasible".to_string()),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: usize,
    pub backend: String,
    pub steps: usize,
    pub infeasible_steps: usize,
    pub p0_fallback: bool,
    pub window_total_cost: f64,
    pub window_thermal_total: f64,
    pub window_max_abs_imbalance: f64,
}

pub fn summarize(tr: &Trajectory, cfg: &RolloutConfig) -> ScenarioSummary {
    let window = &tr.steps[cfg.window_start.min(tr.steps.len())..cfg.window_end.min(tr.steps.len())];
    ScenarioSummary {
        scenario: tr.scenario,
        backend: tr.backend.clone(),
        steps: tr.steps.len(),
        infeasible_steps: tr.infeasible_steps(),
        p0_fallback: tr.p0_fallback,
        window_total_cost: window.iter().map(Step::total_cost).sum(),
        window_thermal_total: window.iter().map(Step::thermal_total).sum(),
        window_max_abs_imbalance: window.iter().fold(0.0, |m, s| m.max(s.imbalance.abs())),
    }
}
