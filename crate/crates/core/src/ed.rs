//! Economic dispatch: ramp-tightened bounds, the exact LP solve with soft
//! thermal limits, and evaluation of arbitrary dispatches.

use serde::{Deserialize, Serialize};

use crate::grid::GridSpec;
use crate::linalg::Matrix;
use crate::lp::{self, Basis, LpError, LpStatus, RowSense, SolverOptions, StandardLp};

#[derive(Debug, Clone, thiserror::Error)]
pub enum EdError {
    #[error("economic dispatch infeasible: total load {demand} MW outside [{lo}, {hi}] MW")]
    InfeasibleEd { demand: f64, lo: f64, hi: f64 },
    #[error("tightened bounds cross at generator {gen}: {lo} > {hi}")]
    CrossedBounds { gen: usize, lo: f64, hi: f64 },
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// Nodal loads in MW, one entry per bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadVector(pub Vec<f64>);

impl LoadVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EdError> {
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EdError::Shape(format!("load at bus {i} is {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `(max(p_min, p_prev − R↓), min(p_max, p_prev + R↑))` per generator.
pub fn tighten_bounds(spec: &GridSpec, p_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(p_prev.len(), spec.n_gens(), "previous dispatch length");
    spec.generators
        .iter()
        .zip(p_prev)
        .map(|(g, &p)| (g.p_min.max(p - g.ramp_down), g.p_max.min(p + g.ramp_up)))
        .unzip()
}

/// One ED solve: loads plus the tightened generator bounds at this step.
#[derive(Clone, Debug)]
pub struct EdInstance<'a> {
    pub spec: &'a GridSpec,
    pub d: &'a [f64],
    pub p_lo: &'a [f64],
    pub p_hi: &'a [f64],
}

impl<'a> EdInstance<'a> {
    pub fn new(spec: &'a GridSpec, d: &'a [f64], p_lo: &'a [f64], p_hi: &'a [f64]) -> Result<Self, EdError> {
        if d.len() != spec.n_buses {
            return Err(EdError::Shape(format!("{} loads for {} buses", d.len(), spec.n_buses)));
        }
        if p_lo.len() != spec.n_gens() || p_hi.len() != spec.n_gens() {
            return Err(EdError::Shape(format!("bounds length differs from {} generators", spec.n_gens())));
        }
        Ok(Self { spec, d, p_lo, p_hi })
    }

    /// Checks the bound and power-balance preconditions without solving.
    pub fn check_feasible(&self) -> Result<(), EdError> {
        for (gen, (&lo, &hi)) in self.p_lo.iter().zip(self.p_hi).enumerate() {
            if lo > hi {
                return Err(EdError::CrossedBounds { gen, lo, hi });
            }
        }
        let demand: f64 = self.d.iter().sum();
        let lo: f64 = self.p_lo.iter().sum();
        let hi: f64 = self.p_hi.iter().sum();
        if demand < lo || demand > hi {
            return Err(EdError::InfeasibleEd { demand, lo, hi });
        }
        Ok(())
    }

    /// LP over `(p, ξ)`: balance row, then one `≤` and one `≥` thermal row per
    /// branch sharing the branch's slack.
    pub fn to_lp(&self) -> StandardLp {
        let spec = self.spec;
        let (g, e) = (spec.n_gens(), spec.n_branches());
        let n = g + e;
        let m = 1 + 2 * e;
        let mut a = Matrix::zeros(m, n);
        let mut b = vec![0.0; m];
        let mut senses = Vec::with_capacity(m);

        for j in 0..g {
            a[(0, j)] = 1.0;
        }
        b[0] = self.d.iter().sum();
        senses.push(RowSense::Eq);

        let load_flow = spec.ptdf().mul_vec(self.d);
        let gen_ptdf = spec.gen_ptdf();
        for (k, br) in spec.branches.iter().enumerate() {
            let (upper, lower) = (1 + 2 * k, 2 + 2 * k);
            for j in 0..g {
                a[(upper, j)] = gen_ptdf[(k, j)];
                a[(lower, j)] = gen_ptdf[(k, j)];
            }
            a[(upper, g + k)] = -1.0;
            a[(lower, g + k)] = 1.0;
            b[upper] = br.f_max + load_flow[k];
            b[lower] = br.f_min + load_flow[k];
            senses.push(RowSense::Le);
            senses.push(RowSense::Ge);
        }

        let mut c = spec.costs();
        c.resize(n, spec.penalties.thermal);
        let mut lower = self.p_lo.to_vec();
        lower.resize(n, 0.0);
        let mut upper = self.p_hi.to_vec();
        upper.resize(n, f64::INFINITY);
        StandardLp::new(a, b, c, lower, upper, senses).expect("ED LP is well formed")
    }
}

/// A dispatch together with everything needed to judge it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub p: Vec<f64>,
    pub flows: Vec<f64>,
    /// Per-branch thermal violation, MW.
    pub xi_th: Vec<f64>,
    /// `eᵀp − eᵀd`, MW.
    pub imbalance: f64,
    pub cost_energy: f64,
    pub cost_thermal: f64,
    pub cost_pb: f64,
}

impl Dispatch {
    /// Energy plus thermal and power-balance penalties.
    pub fn total_cost(&self) -> f64 {
        self.cost_energy + self.cost_thermal + self.cost_pb
    }

    /// The ED objective (energy plus thermal penalty).
    pub fn objective(&self) -> f64 {
        self.cost_energy + self.cost_thermal
    }

    pub fn thermal_total(&self) -> f64 {
        self.xi_th.iter().sum()
    }
}

/// Scores an arbitrary dispatch `p` against loads `d`.
pub fn evaluate(spec: &GridSpec, d: &[f64], p: &[f64]) -> Dispatch {
    let flows = spec.flows(p, d);
    let xi_th: Vec<f64> = flows
        .iter()
        .zip(&spec.branches)
        .map(|(&f, br)| (f - br.f_max).max(0.0) + (br.f_min - f).max(0.0))
        .collect();
    let cost_energy = spec.generators.iter().zip(p).map(|(g, &pg)| g.cost * pg).sum();
    let cost_thermal = spec.penalties.thermal * xi_th.iter().sum::<f64>();
    let imbalance = p.iter().sum::<f64>() - d.iter().sum::<f64>();
    Dispatch {
        p: p.to_vec(),
        flows,
        xi_th,
        imbalance,
        cost_energy,
        cost_thermal,
        cost_pb: spec.penalties.power_balance * imbalance.abs(),
    }
}

#[derive(Clone, Debug)]
pub struct EdSolution {
    pub dispatch: Dispatch,
    pub lp_objective: f64,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

pub fn solve_ed(inst: &EdInstance<'_>) -> Result<Dispatch, EdError> {
    solve_ed_with(inst, &SolverOptions::default(), None).map(|s| s.dispatch)
}

/// Solves the ED LP, optionally warm-started from a previous step's basis.
pub fn solve_ed_with(
    inst: &EdInstance<'_>,
    opts: &SolverOptions,
    warm: Option<&Basis>,
) -> Result<EdSolution, EdError> {
    inst.check_feasible()?;
    let lp = inst.to_lp();
    let sol = lp::solve_with(&lp, opts, warm)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible | LpStatus::Unbounded => {
            return Err(EdError::InfeasibleEd {
                demand: inst.d.iter().sum(),
                lo: inst.p_lo.iter().sum(),
                hi: inst.p_hi.iter().sum(),
            })
        }
    }
    let g = inst.spec.n_gens();
    let p: Vec<f64> = sol.x[..g]
        .iter()
        .zip(inst.p_lo.iter().zip(inst.p_hi))
        .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
        .collect();
    Ok(EdSolution {
        dispatch: evaluate(inst.spec, inst.d, &p),
        lp_objective: sol.objective,
        iterations: sol.iterations,
        basis: sol.basis,
    })
}
