//! Power-system data model, PTDF construction, and validation.
//!
//! A [`GridSpec`] is built once from a JSON document and is read-only
//! afterwards, so it can be shared freely across simulation workers.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::linalg::{LuFactors, Matrix, Singular};

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("failed to read grid file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed grid JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{what} {index} references bus {bus}, but the grid has {n_buses} buses")]
    BusOutOfRange {
        what: &'static str,
        index: usize,
        bus: usize,
        n_buses: usize,
    },
    #[error("supplied PTDF has {got} entries, expected {expected} ({rows}x{cols})")]
    PtdfShape {
        got: usize,
        expected: usize,
        rows: usize,
        cols: usize,
    },
    #[error("branch {branch} has non-positive susceptance {susceptance}")]
    NonPositiveSusceptance { branch: usize, susceptance: f64 },
    #[error("bus graph is disconnected ({components} components)")]
    DisconnectedNetwork { components: usize },
    #[error("reduced susceptance matrix is singular: {0}")]
    SingularReduction(#[from] Singular),
    #[error("grid has no buses")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    /// $/MWh
    pub cost: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// MW per time step.
    pub ramp_up: f64,
    pub ramp_down: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    /// Per-unit susceptance.
    pub susceptance: f64,
    pub f_min: f64,
    pub f_max: f64,
}

/// Penalty prices in $/MWh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    #[serde(default = "Penalties::default_thermal")]
    pub thermal: f64,
    #[serde(default = "Penalties::default_power_balance")]
    pub power_balance: f64,
    #[serde(default = "Penalties::default_voll")]
    pub voll: f64,
}

impl Penalties {
    fn default_thermal() -> f64 {
        1500.0
    }
    fn default_power_balance() -> f64 {
        5000.0
    }
    fn default_voll() -> f64 {
        5000.0
    }
}

impl Default for Penalties {
    fn default() -> Self {
        Self {
            thermal: Self::default_thermal(),
            power_balance: Self::default_power_balance(),
            voll: Self::default_voll(),
        }
    }
}

/// Reference system load used by scenario generation: the peak total load
/// and the fixed share of that load at each bus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub peak_load: f64,
    pub shares: Vec<f64>,
}

/// On-disk grid document.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_buses: usize,
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    #[serde(default)]
    pub penalties: Penalties,
    /// Row-major E×N matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptdf: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_profile: Option<LoadProfile>,
}

/// Immutable system description.
#[derive(Clone, Debug)]
pub struct GridSpec {
    pub name: String,
    pub n_buses: usize,
    pub slack_bus: usize,
    pub generators: Vec<Generator>,
    pub branches: Vec<Branch>,
    pub penalties: Penalties,
    pub load_profile: Option<LoadProfile>,
    ptdf: Matrix,
    gen_ptdf: Matrix,
    ptdf_supplied: bool,
}

impl GridSpec {
    pub fn from_file(file: GridFile) -> Result<Self, GridError> {
        let GridFile {
            name,
            n_buses,
            slack_bus,
            generators,
            branches,
            penalties,
            ptdf,
            load_profile,
        } = file;
        if n_buses == 0 {
            return Err(GridError::Empty);
        }
        if slack_bus >= n_buses {
            return Err(GridError::BusOutOfRange {
                what: "slack",
                index: 0,
                bus: slack_bus,
                n_buses,
            });
        }
        for (i, g) in generators.iter().enumerate() {
            if g.bus >= n_buses {
                return Err(GridError::BusOutOfRange {
                    what: "generator",
                    index: i,
                    bus: g.bus,
                    n_buses,
                });
            }
        }
        for (e, br) in branches.iter().enumerate() {
            for bus in [br.from, br.to] {
                if bus >= n_buses {
                    return Err(GridError::BusOutOfRange {
                        what: "branch",
                        index: e,
                        bus,
                        n_buses,
                    });
                }
            }
        }

        let n_branches = branches.len();
        let (ptdf, ptdf_supplied) = match ptdf {
            Some(values) => {
                let expected = n_branches * n_buses;
                if values.len() != expected {
                    return Err(GridError::PtdfShape {
                        got: values.len(),
                        expected,
                        rows: n_branches,
                        cols: n_buses,
                    });
                }
                let supplied = Matrix::from_vec(n_branches, n_buses, values);
                match compute_ptdf(n_buses, &branches, slack_bus) {
                    Ok(computed) => {
                        let dev = computed.max_abs_diff(&supplied);
                        if dev > 1e-8 {
                            log::warn!(
                                "supplied PTDF deviates from topology-derived PTDF by up to {dev:e}; using supplied matrix"
                            );
                        }
                    }
                    Err(err) => log::debug!("PTDF consistency check skipped: {err}"),
                }
                (supplied, true)
            }
            None => (compute_ptdf(n_buses, &branches, slack_bus)?, false),
        };

        let mut gen_ptdf = Matrix::zeros(n_branches, generators.len());
        for e in 0..n_branches {
            for (g, gen) in generators.iter().enumerate() {
                gen_ptdf[(e, g)] = ptdf[(e, gen.bus)];
            }
        }

        Ok(Self {
            name: name.unwrap_or_else(|| "grid".to_string()),
            n_buses,
            slack_bus,
            generators,
            branches,
            penalties,
            load_profile,
            ptdf,
            gen_ptdf,
            ptdf_supplied,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Self, GridError> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> GridFile {
        GridFile {
            name: Some(self.name.clone()),
            n_buses: self.n_buses,
            slack_bus: self.slack_bus,
            generators: self.generators.clone(),
            branches: self.branches.clone(),
            penalties: self.penalties,
            ptdf: self.ptdf_supplied.then(|| self.ptdf.as_slice().to_vec()),
            load_profile: self.load_profile.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("grid serializes")
    }

    #[inline]
    pub fn n_gens(&self) -> usize {
        self.generators.len()
    }

    #[inline]
    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    /// E×N bus PTDF.
    pub fn ptdf(&self) -> &Matrix {
        &self.ptdf
    }

    /// E×G matrix whose column `g` is the PTDF column of generator `g`'s bus.
    pub fn gen_ptdf(&self) -> &Matrix {
        &self.gen_ptdf
    }

    pub fn costs(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.cost).collect()
    }

    pub fn p_min(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.p_min).collect()
    }

    pub fn p_max(&self) -> Vec<f64> {
        self.generators.iter().map(|g| g.p_max).collect()
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }

    /// Branch flows `Φ (inj(p) − d)` in MW.
    pub fn flows(&self, p: &[f64], d: &[f64]) -> Vec<f64> {
        let mut flows = self.gen_ptdf.mul_vec(p);
        let load_flows = self.ptdf.mul_vec(d);
        for (f, l) in flows.iter_mut().zip(load_flows) {
            *f -= l;
        }
        flows
    }

    /// Bus load shares, defaulting to a uniform split.
    pub fn load_shares(&self) -> Vec<f64> {
        match &self.load_profile {
            Some(lp) => lp.shares.clone(),
            None => vec![1.0 / self.n_buses as f64; self.n_buses],
        }
    }

    /// Peak total load in MW, defaulting to 70% of installed capacity.
    pub fn peak_load(&self) -> f64 {
        match &self.load_profile {
            Some(lp) => lp.peak_load,
            None => 0.7 * self.total_capacity(),
        }
    }

    /// Generator index chosen as slack by completion layers: largest `p_max`,
    /// lowest index on ties.
    pub fn default_slack_generator(&self) -> usize {
        let mut best = 0;
        for (i, g) in self.generators.iter().enumerate() {
            if g.p_max > self.generators[best].p_max {
                best = i;
            }
        }
        best
    }
}

/// Builds the E×N PTDF for the given topology with the slack column zeroed.
pub fn compute_ptdf(n_buses: usize, branches: &[Branch], slack: usize) -> Result<Matrix, GridError> {
    if n_buses == 0 {
        return Err(GridError::Empty);
    }
    for (e, br) in branches.iter().enumerate() {
        if !(br.susceptance > 0.0) {
            return Err(GridError::NonPositiveSusceptance {
                branch: e,
                susceptance: br.susceptance,
            });
        }
    }
    let components = count_components(n_buses, branches);
    if components > 1 {
        return Err(GridError::DisconnectedNetwork { components });
    }

    // Reduced index of each non-slack bus.
    let reduced: Vec<Option<usize>> = {
        let mut next = 0;
        (0..n_buses)
            .map(|b| {
                (b != slack).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    };
    let n_red = n_buses - 1;
    let mut b_red = Matrix::zeros(n_red, n_red);
    for br in branches {
        let (f, t, b) = (reduced[br.from], reduced[br.to], br.susceptance);
        if let Some(i) = f {
            b_red[(i, i)] += b;
        }
        if let Some(j) = t {
            b_red[(j, j)] += b;
        }
        if let (Some(i), Some(j)) = (f, t) {
            b_red[(i, j)] -= b;
            b_red[(j, i)] -= b;
        }
    }

    let mut ptdf = Matrix::zeros(branches.len(), n_buses);
    if n_red == 0 {
        return Ok(ptdf);
    }
    let lu = LuFactors::factor(&b_red)?;
    let mut rhs = vec![0.0; n_red];
    for bus in 0..n_buses {
        let Some(k) = reduced[bus] else { continue };
        rhs.iter_mut().for_each(|v| *v = 0.0);
        rhs[k] = 1.0;
        let theta_red = lu.solve(&rhs);
        let theta = |b: usize| reduced[b].map_or(0.0, |i| theta_red[i]);
        for (e, br) in branches.iter().enumerate() {
            ptdf[(e, bus)] = br.susceptance * (theta(br.from) - theta(br.to));
        }
    }
    Ok(ptdf)
}

fn count_components(n_buses: usize, branches: &[Branch]) -> usize {
    let mut adj = vec![Vec::new(); n_buses];
    for br in branches {
        adj[br.from].push(br.to);
        adj[br.to].push(br.from);
    }
    let mut seen = vec![false; n_buses];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n_buses {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    components
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonFinite,
    PMinAbovePMax,
    NegativeRamp,
    ThermalLimitSign,
    NonzeroSlackColumn,
    MultipleGeneratorsAtBus,
    NonPositiveSusceptance,
    NegativePenalty,
    BadLoadShares,
}

/// One broken invariant, with the offending index and how far off it is.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub index: usize,
    pub magnitude: f64,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (magnitude {})", self.message, self.magnitude)
    }
}

/// Returns every violated invariant. An empty list means the grid is valid.
pub fn validate(spec: &GridSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, index, magnitude: f64, message: String| {
        out.push(Violation {
            kind,
            index,
            magnitude,
            message,
        })
    };

    for (i, g) in spec.generators.iter().enumerate() {
        let values = [g.cost, g.p_min, g.p_max, g.ramp_up, g.ramp_down];
        if values.iter().any(|v| !v.is_finite()) {
            push(
                ViolationKind::NonFinite,
                i,
                f64::NAN,
                format!("non-finite parameter at gen {i}"),
            );
            continue;
        }
        if g.p_min > g.p_max {
            push(
                ViolationKind::PMinAbovePMax,
                i,
                g.p_min - g.p_max,
                format!("p_min > p_max at gen {i}"),
            );
        }
        if g.ramp_up < 0.0 || g.ramp_down < 0.0 {
            push(
                ViolationKind::NegativeRamp,
                i,
                -g.ramp_up.min(g.ramp_down),
                format!("negative ramp rate at gen {i}"),
            );
        }
    }

    let mut gens_at_bus = vec![0usize; spec.n_buses];
    for g in &spec.generators {
        gens_at_bus[g.bus] += 1;
    }
    for (b, &count) in gens_at_bus.iter().enumerate() {
        if count > 1 {
            push(
                ViolationKind::MultipleGeneratorsAtBus,
                b,
                count as f64,
                format!("{count} generators at bus {b}"),
            );
        }
    }

    for (e, br) in spec.branches.iter().enumerate() {
        if !(br.susceptance.is_finite() && br.f_min.is_finite() && br.f_max.is_finite()) {
            push(
                ViolationKind::NonFinite,
                e,
                f64::NAN,
                format!("non-finite parameter at branch {e}"),
            );
            continue;
        }
        if br.susceptance <= 0.0 {
            push(
                ViolationKind::NonPositiveSusceptance,
                e,
                br.susceptance,
                format!("non-positive susceptance at branch {e}"),
            );
        }
        if br.f_min > 0.0 || br.f_max < 0.0 {
            push(
                ViolationKind::ThermalLimitSign,
                e,
                br.f_min.max(-br.f_max),
                format!("thermal limits must satisfy f_min <= 0 <= f_max at branch {e}"),
            );
        }
    }

    if !spec.ptdf.is_finite() {
        push(
            ViolationKind::NonFinite,
            0,
            f64::NAN,
            "non-finite PTDF entry".to_string(),
        );
    }
    let slack_dev = spec.ptdf.column(spec.slack_bus).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if slack_dev > 0.0 {
        push(
            ViolationKind::NonzeroSlackColumn,
            spec.slack_bus,
            slack_dev,
            "nonzero slack column".to_string(),
        );
    }

    let p = spec.penalties;
    for (i, v) in [p.thermal, p.power_balance, p.voll].into_iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            push(
                ViolationKind::NegativePenalty,
                i,
                v,
                format!("penalty {i} must be finite and non-negative"),
            );
        }
    }

    if let Some(lp) = &spec.load_profile {
        let sum: f64 = lp.shares.iter().sum();
        if lp.shares.len() != spec.n_buses
            || lp.shares.iter().any(|s| !(*s >= 0.0))
            || (sum - 1.0).abs() > 1e-9
            || !(lp.peak_load >= 0.0 && lp.peak_load.is_finite())
        {
            push(
                ViolationKind::BadLoadShares,
                0,
                (sum - 1.0).abs(),
                "load shares must be non-negative, one per bus, and sum to 1".to_string(),
            );
        }
    }

    out
}
