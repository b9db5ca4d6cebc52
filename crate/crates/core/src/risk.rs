//! Empirical risk metrics over Monte-Carlo trajectories: CVaR, probability of
//! failure and monetized risk, system-wide and per branch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::grid::Penalties;
use crate::linalg::Matrix;
use crate::sim::Trajectory;

/// Failure threshold for imbalance and thermal quantities, MW.
pub const DEFAULT_FAILURE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum RiskError {
    #[error("trajectory sets do not share a horizon: {0}")]
    MismatchedHorizons(String),
    #[error("invalid risk settings: {0}")]
    Settings(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QoiKind {
    ImbalanceAbs,
    ImbalanceSigned,
    ThermalTotal,
    ThermalBranch(usize),
    TotalCost,
}

impl QoiKind {
    pub const SYSTEM: [QoiKind; 4] = [Self::ImbalanceAbs, Self::ImbalanceSigned, Self::ThermalTotal, Self::TotalCost];

    pub fn of(self, step: &crate::sim::Step) -> f64 {
        match self {
            Self::ImbalanceAbs => step.imbalance.abs(),
            Self::ImbalanceSigned => step.imbalance,
            Self::ThermalTotal => step.thermal_total(),
            Self::ThermalBranch(e) => step.xi_th[e],
            Self::TotalCost => step.total_cost(),
        }
    }

    pub fn default_threshold(self) -> Option<f64> {
        match self {
            Self::TotalCost => None,
            _ => Some(DEFAULT_FAILURE_THRESHOLD),
        }
    }

    pub fn default_cost(self, pen: &Penalties) -> CostFn {
        match self {
            Self::ImbalanceAbs | Self::ImbalanceSigned => CostFn::Linear { price: pen.voll },
            Self::ThermalTotal | Self::ThermalBranch(_) => CostFn::Linear { price: pen.thermal },
            Self::TotalCost => CostFn::Identity,
        }
    }
}

impl fmt::Display for QoiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ImbalanceAbs => f.write_str("imbalance_abs"),
            Self::ImbalanceSigned => f.write_str("imbalance_signed"),
            Self::ThermalTotal => f.write_str("thermal_total"),
            Self::ThermalBranch(e) => write!(f, "thermal_branch({e})"),
            Self::TotalCost => f.write_str("total_cost"),
        }
    }
}

impl FromStr for QoiKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "imbalance_abs" => Ok(Self::ImbalanceAbs),
            "imbalance_signed" => Ok(Self::ImbalanceSigned),
            "thermal_total" => Ok(Self::ThermalTotal),
            "total_cost" => Ok(Self::TotalCost),
            _ => s
                .strip_prefix("thermal_branch(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .map(Self::ThermalBranch)
                .ok_or_else(|| format!("unknown quantity of interest {s:?}")),
        }
    }
}

impl Serialize for QoiKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QoiKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostFn {
    Linear { price: f64 },
    Identity,
}

impl CostFn {
    #[inline]
    pub fn apply(self, q: f64) -> f64 {
        match self {
            CostFn::Linear { price } => price * q,
            CostFn::Identity => q,
        }
    }
}

/// Position (1-based) of the α-quantile order statistic: ⌈αS⌉, at least 1.
/// The small guard keeps products such as 0.7·10 from rounding up a rank.
pub fn quantile_rank(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// ⌈αS⌉-th order statistic.
pub fn quantile(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    sorted(values)[quantile_rank(alpha, values.len()) - 1]
}

/// Right-tail CVaR: mean of every value at or above the α-quantile, summed in
/// ascending order.
pub fn cvar(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "cvar of an empty sample");
    let s = sorted(values);
    let threshold = s[quantile_rank(alpha, s.len()) - 1];
    let first = s.partition_point(|&v| v < threshold);
    let tail = &s[first..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Left-tail CVaR by negation.
pub fn cvar_left(values: &[f64], alpha: f64) -> f64 {
    let neg: Vec<f64> = values.iter().map(|v| -v).collect();
    -cvar(&neg, alpha)
}

pub fn prob_failure(values: &[f64], threshold: f64) -> f64 {
    assert!(!values.is_empty(), "probability over an empty sample");
    values.iter().filter(|&&v| v >= threshold).count() as f64 / values.len() as f64
}

pub fn risk(values: &[f64], cost: CostFn) -> f64 {
    assert!(!values.is_empty(), "risk over an empty sample");
    values.iter().map(|&v| cost.apply(v)).sum::<f64>() / values.len() as f64
}

/// `Q^s_t` as an S×T matrix.
pub fn qoi_matrix(trajectories: &[Trajectory], kind: QoiKind) -> Matrix {
    let t = trajectories.first().map_or(0, |tr| tr.steps.len());
    let mut m = Matrix::zeros(trajectories.len(), t);
    for (s, tr) in trajectories.iter().enumerate() {
        for (k, step) in tr.steps.iter().enumerate() {
            m[(s, k)] = kind.of(step);
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSettings {
    pub alpha: f64,
    pub left_tail: bool,
    pub window_start: usize,
    pub window_end: usize,
    /// Per-kind overrides of the failure threshold.
    #[serde(default)]
    pub thresholds: Vec<(QoiKind, f64)>,
    pub penalties: Penalties,
}

impl RiskSettings {
    pub fn new(alpha: f64, window_start: usize, window_end: usize, penalties: Penalties) -> Self {
        Self {
            alpha,
            left_tail: false,
            window_start,
            window_end,
            thresholds: Vec::new(),
            penalties,
        }
    }

    fn threshold(&self, kind: QoiKind) -> Option<f64> {
        self.thresholds
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|&(_, v)| v)
            .or_else(|| match kind {
                QoiKind::ThermalBranch(_) => self
                    .thresholds
                    .iter()
                    .find(|(k, _)| *k == QoiKind::ThermalTotal)
                    .map(|&(_, v)| v)
                    .or(kind.default_threshold()),
                _ => kind.default_threshold(),
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub kind: QoiKind,
    pub threshold: Option<f64>,
    pub cost: CostFn,
    pub t: Vec<usize>,
    pub cvar: Vec<f64>,
    pub prob_failure: Option<Vec<f64>>,
    pub risk: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub backend: String,
    pub scenarios: usize,
    pub alpha: f64,
    pub left_tail: bool,
    pub window_start: usize,
    pub window_end: usize,
    pub system: Vec<MetricSeries>,
    pub branches: Vec<MetricSeries>,
}

fn horizon_of(trajectories: &[Trajectory]) -> Result<usize, RiskError> {
    let t = trajectories.first().map_or(0, |tr| tr.steps.len());
    if let Some(tr) = trajectories.iter().find(|tr| tr.steps.len() != t) {
        return Err(RiskError::MismatchedHorizons(format!(
            "scenario {} has {} steps, expected {t}",
            tr.scenario,
            tr.steps.len()
        )));
    }
    Ok(t)
}

fn series(trajectories: &[Trajectory], kind: QoiKind, st: &RiskSettings) -> MetricSeries {
    let q = qoi_matrix(trajectories, kind);
    let threshold = st.threshold(kind);
    let cost = kind.default_cost(&st.penalties);
    let ts: Vec<usize> = (st.window_start..st.window_end).collect();
    let per_t: Vec<(f64, Option<f64>, f64)> = ts
        .par_iter()
        .map(|&t| {
            let col = q.column(t);
            let c = if st.left_tail { cvar_left(&col, st.alpha) } else { cvar(&col, st.alpha) };
            (c, threshold.map(|th| prob_failure(&col, th)), risk(&col, cost))
        })
        .collect();
    MetricSeries {
        kind,
        threshold,
        cost,
        t: ts,
        cvar: per_t.iter().map(|x| x.0).collect(),
        prob_failure: threshold.map(|_| per_t.iter().map(|x| x.1.unwrap()).collect()),
        risk: per_t.iter().map(|x| x.2).collect(),
    }
}

/// All metrics for every requested system quantity, plus per-branch thermal
/// metrics, over the reporting window.
pub fn build_report(
    trajectories: &[Trajectory],
    kinds: &[QoiKind],
    settings: &RiskSettings,
    backend: &str,
) -> Result<RiskReport, RiskError> {
    if trajectories.is_empty() {
        return Err(RiskError::Settings("no trajectories".into()));
    }
    if !(0.0..1.0).contains(&settings.alpha) {
        return Err(RiskError::Settings(format!("alpha {} outside [0, 1)", settings.alpha)));
    }
    let t = horizon_of(trajectories)?;
    if settings.window_start >= settings.window_end || settings.window_end > t {
        return Err(RiskError::MismatchedHorizons(format!(
            "window [{}, {}) does not fit horizon {t}",
            settings.window_start, settings.window_end
        )));
    }
    let n_branches = trajectories[0].steps[0].xi_th.len();
    Ok(RiskReport {
        backend: backend.to_string(),
        scenarios: trajectories.len(),
        alpha: settings.alpha,
        left_tail: settings.left_tail,
        window_start: settings.window_start,
        window_end: settings.window_end,
        system: kinds.iter().map(|&k| series(trajectories, k, settings)).collect(),
        branches: (0..n_branches)
            .map(|e| series(trajectories, QoiKind::ThermalBranch(e), settings))
            .collect(),
    })
}

/// Checks two trajectory sets cover the same scenarios and steps.
pub fn check_aligned(a: &[Trajectory], b: &[Trajectory]) -> Result<(), RiskError> {
    let (ta, tb) = (horizon_of(a)?, horizon_of(b)?);
    if a.len() != b.len() || ta != tb {
        return Err(RiskError::MismatchedHorizons(format!(
            "{} scenarios × {ta} steps vs {} scenarios × {tb} steps",
            a.len(),
            b.len()
        )));
    }
    if let Some((x, y)) = a.iter().zip(b).find(|(x, y)| x.scenario != y.scenario) {
        return Err(RiskError::MismatchedHorizons(format!(
            "scenario ids differ: {} vs {}",
            x.scenario, y.scenario
        )));
    }
    Ok(())
}

/// Per-scenario total cost over the window.
pub fn window_costs(trajectories: &[Trajectory], start: usize, end: usize) -> Vec<f64> {
    trajectories
        .iter()
        .map(|tr| tr.steps[start..end].iter().map(|s| s.total_cost()).sum())
        .collect()
}

/// Sorted oracle costs paired with sorted proxy costs.
pub fn qq_pairs(oracle: &[f64], proxy: &[f64]) -> Vec<(f64, f64)> {
    sorted(oracle).into_iter().zip(sorted(proxy)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub t: usize,
    pub lower: f64,
    pub mean: f64,
    pub upper: f64,
}

/// Hourly total-cost 2.5 %, mean and 97.5 % curves.
pub fn cost_bands(trajectories: &[Trajectory], start: usize, end: usize) -> Vec<Band> {
    let q = qoi_matrix(trajectories, QoiKind::TotalCost);
    (start..end)
        .map(|t| {
            let col = q.column(t);
            Band {
                t,
                lower: quantile(&col, 0.025),
                mean: col.iter().sum::<f64>() / col.len() as f64,
                upper: quantile(&col, 0.975),
            }
        })
        .collect()
}

/// Tidy `t,metric,kind,value` rows for system and branch metrics.
pub fn write_report_csv<W: Write>(mut w: W, report: &RiskReport) -> std::io::Result<()> {
    writeln!(w, "t,metric,kind,value")?;
    for s in report.system.iter().chain(&report.branches) {
        for (i, &t) in s.t.iter().enumerate() {
            writeln!(w, "{t},cvar,{},{:?}", s.kind, s.cvar[i])?;
            if let Some(p) = &s.prob_failure {
                writeln!(w, "{t},prob_failure,{},{:?}", s.kind, p[i])?;
            }
            writeln!(w, "{t},risk,{},{:?}", s.kind, s.risk[i])?;
        }
    }
    Ok(())
}

/// One failure probability per `(branch, t)`.
pub fn write_branch_csv<W: Write>(mut w: W, report: &RiskReport) -> std::io::Result<()> {
    writeln!(w, "branch,t,prob_failure")?;
    for (e, s) in report.branches.iter().enumerate() {
        if let Some(p) = &s.prob_failure {
            for (i, &t) in s.t.iter().enumerate() {
                writeln!(w, "{e},{t},{:?}", p[i])?;
            }
        }
    }
    Ok(())
}

pub fn write_qq_csv<W: Write>(mut w: W, pairs: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "oracle_cost,proxy_cost")?;
    for (a, b) in pairs {
        writeln!(w, "{a:?},{b:?}")?;
    }
    Ok(())
}

pub fn write_bands_csv<W: Write>(mut w: W, bands: &[(String, Vec<Band>)]) -> std::io::Result<()> {
    writeln!(w, "backend,t,q2.5,mean,q97.5")?;
    for (tag, rows) in bands {
        for b in rows {
            writeln!(w, "{tag},{},{:?},{:?},{:?}", b.t, b.lower, b.mean, b.upper)?;
        }
    }
    Ok(())
}
