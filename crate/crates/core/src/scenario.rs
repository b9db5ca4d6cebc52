//! Load scenarios: a Gaussian copula over per-step Beta marginals for the
//! system profile, fixed nodal shares, and multiplicative lognormal noise.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{checked_beta_reg, ln_beta};
use statrs::function::erf::erfc;

use crate::linalg::Matrix;

pub const MIN_HISTORY_DAYS: usize = 30;
pub const DEFAULT_NOISE_STD: f64 = 0.05;
const EIGEN_FLOOR: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("history has {days} days, need at least {MIN_HISTORY_DAYS}")]
    TooFewDays { days: usize },
    #[error("history day {day} has {found} steps, expected {expected}")]
    Ragged { day: usize, expected: usize, found: usize },
    #[error("history value {value} at day {day}, step {step} is outside (0, 1]")]
    RatioOutOfRange { day: usize, step: usize, value: f64 },
    #[error("invalid profile model: {0}")]
    InvalidModel(String),
    #[error("malformed scenario data: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Beta { alpha: f64, beta: f64 },
    /// Zero-variance step: the ratio is always `value`.
    Point { value: f64 },
}

impl Marginal {
    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Beta { alpha, beta } => alpha / (alpha + beta),
            Marginal::Point { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Marginal::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            Marginal::Point { .. } => 0.0,
        }
    }

    /// Inverse CDF at `u ∈ [0, 1]`.
    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Beta { alpha, beta } => beta_quantile(alpha, beta, u),
            Marginal::Point { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileModel {
    pub marginals: Vec<Marginal>,
    /// T×T copula correlation.
    pub correlation: Matrix,
    pub peak_load: f64,
    pub shares: Vec<f64>,
    pub noise_std: f64,
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub model: ProfileModel,
    /// Steps whose history had zero variance and became point masses.
    pub degenerate_steps: Vec<usize>,
    /// Whether the rank-correlation estimate needed PSD repair.
    pub repaired: bool,
}

impl ProfileModel {
    pub fn horizon(&self) -> usize {
        self.marginals.len()
    }

    pub fn n_buses(&self) -> usize {
        self.shares.len()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let t = self.horizon();
        let bad = |m: String| Err(ScenarioError::InvalidModel(m));
        if t == 0 {
            return bad("empty horizon".into());
        }
        if self.correlation.shape() != (t, t) {
            return bad(format!("correlation is {:?}, horizon {t}", self.correlation.shape()));
        }
        for m in &self.marginals {
            if let Marginal::Beta { alpha, beta } = *m {
                if !(alpha > 0.0 && beta > 0.0) {
                    return bad(format!("beta parameters ({alpha}, {beta}) must be positive"));
                }
            }
        }
        let total: f64 = self.shares.iter().sum();
        if self.shares.iter().any(|&s| !(s >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad("nodal shares must be non-negative and sum to 1".into());
        }
        if !(self.peak_load >= 0.0) || !(self.noise_std >= 0.0) {
            return bad("peak load and noise level must be non-negative".into());
        }
        Ok(())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes") + "\n"
    }

    pub fn from_json_str(s: &str) -> Result<Self, ScenarioError> {
        let m: Self = serde_json::from_str(s).map_err(|e| ScenarioError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// Inverse regularized incomplete beta by Newton steps kept inside a
/// shrinking bisection bracket.
fn beta_quantile(a: f64, b: f64, u: f64) -> f64 {
    if !(u > 0.0) {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    let ln_norm = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x = a / (a + b);
    for _ in 0..200 {
        let f = checked_beta_reg(a, b, x).unwrap_or(if x <= 0.0 { 0.0 } else { 1.0 }) - u;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let log_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_norm;
        let newton = x - f / log_pdf.exp();
        let next = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 1e-15 * x.max(1e-300) || hi - lo <= f64::EPSILON * hi {
            return next;
        }
        x = next;
    }
    x
}

fn mean_var(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Average ranks, 1-based, ties sharing the mean rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a.iter().copied());
    let (mb, vb) = mean_var(b.iter().copied());
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    (cov / (va * vb).sqrt()).clamp(-1.0, 1.0)
}

/// Nearest-PSD repair by eigenvalue clipping, then unit-diagonal rescaling.
/// Returns the matrix and whether anything was clipped.
pub fn repair_correlation(c: &Matrix) -> (Matrix, bool) {
    let n = c.rows();
    let m = DMatrix::from_row_slice(n, n, c.as_slice());
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().all(|&l| l >= EIGEN_FLOOR) {
        return (c.clone(), false);
    }
    let lam = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR));
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&lam) * v.transpose();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = r[(i, j)] / (r[(i, i)] * r[(j, j)]).sqrt();
        }
    }
    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let s = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = s;
            out[(j, i)] = s;
        }
    }
    (out, true)
}

/// Method-of-moments Beta marginals and a Spearman-derived copula.
pub fn fit_profile(history: &[Vec<f64>], peak_load: f64, shares: Vec<f64>) -> Result<FitReport, ScenarioError> {
    let days = history.len();
    if days < MIN_HISTORY_DAYS {
        return Err(ScenarioError::TooFewDays { days });
    }
    let t = history[0].len();
    for (day, row) in history.iter().enumerate() {
        if row.len() != t {
            return Err(ScenarioError::Ragged { day, expected: t, found: row.len() });
        }
        for (step, &value) in row.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ScenarioError::RatioOutOfRange { day, step, value });
            }
        }
    }
    let columns: Vec<Vec<f64>> = (0..t).map(|s| history.iter().map(|r| r[s]).collect()).collect();
    let mut marginals = Vec::with_capacity(t);
    let mut degenerate_steps = Vec::new();
    for (s, col) in columns.iter().enumerate() {
        let (m, v) = mean_var(col.iter().copied());
        let spread = m * (1.0 - m);
        if v <= 1e-12 * spread || spread <= 0.0 {
            degenerate_steps.push(s);
            let value = if col.iter().all(|&x| x == col[0]) { col[0] } else { m };
            marginals.push(Marginal::Point { value });
            continue;
        }
        // Keep the variance strictly admissible for a Beta law.
        let v = v.min(0.999 * spread);
        let k = spread / v - 1.0;
        marginals.push(Marginal::Beta {
            alpha: m * k,
            beta: (1.0 - m) * k,
        });
    }
    for &s in &degenerate_steps {
        log::warn!("history step {s} has zero variance; using a point-mass marginal");
    }
    let r: Vec<Vec<f64>> = columns.iter().map(|c| ranks(c)).collect();
    let mut corr = Matrix::identity(t);
    for i in 0..t {
        for j in 0..i {
            let rho_s = pearson(&r[i], &r[j]);
            let rho = 2.0 * (std::f64::consts::PI * rho_s / 6.0).sin();
            corr[(i, j)] = rho;
            corr[(j, i)] = rho;
        }
    }
    let (correlation, repaired) = repair_correlation(&corr);
    let model = ProfileModel {
        marginals,
        correlation,
        peak_load,
        shares,
        noise_std: DEFAULT_NOISE_STD,
    };
    model.validate()?;
    Ok(FitReport {
        model,
        degenerate_steps,
        repaired,
    })
}

/// Loads for one scenario, `T × N` MW.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: usize,
    pub seed: u64,
    pub loads: Matrix,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.loads.rows()
    }

    pub fn load(&self, t: usize) -> &[f64] {
        self.loads.row(t)
    }
}

/// Lognormal with mean 1 and standard deviation `std`.
pub fn unit_mean_lognormal(std: f64) -> LogNormal<f64> {
    let s2 = (1.0 + std * std).ln();
    LogNormal::new(-0.5 * s2, s2.sqrt()).expect("valid lognormal parameters")
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Precomputed sampling state for a profile model.
pub struct Sampler<'a> {
    model: &'a ProfileModel,
    factor: Matrix,
    noise: Option<LogNormal<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a ProfileModel) -> Result<Self, ScenarioError> {
        model.validate()?;
        let t = model.horizon();
        // Symmetric square root via the eigen-decomposition: robust to the
        // near-singular matrices that clipping can leave behind.
        let m = DMatrix::from_row_slice(t, t, model.correlation.as_slice());
        let eig = SymmetricEigen::new(m);
        let mut factor = Matrix::zeros(t, t);
        for i in 0..t {
            for k in 0..t {
                factor[(i, k)] = eig.eigenvectors[(i, k)] * eig.eigenvalues[k].max(0.0).sqrt();
            }
        }
        let noise = (model.noise_std > 0.0).then(|| unit_mean_lognormal(model.noise_std));
        Ok(Self { model, factor, noise })
    }

    /// System profile γ for one scenario stream.
    pub fn profile<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let t = self.model.horizon();
        let n: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let z = self.factor.mul_vec(&n);
        z.iter()
            .zip(&self.model.marginals)
            .map(|(&zi, m)| m.quantile(std_normal_cdf(zi)))
            .collect()
    }

    pub fn scenario(&self, seed: u64, id: usize) -> Scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(id as u64);
        let gamma = self.profile(&mut rng);
        let nb = self.model.n_buses();
        let mut loads = Matrix::zeros(gamma.len(), nb);
        for (t, &g) in gamma.iter().enumerate() {
            let total = g * self.model.peak_load;
            for (i, &share) in self.model.shares.iter().enumerate() {
                let eta = match &self.noise {
                    Some(d) => d.sample(&mut rng),
                    None => 1.0,
                };
                loads[(t, i)] = share * eta * total;
            }
        }
        Scenario { id, seed, loads }
    }
}

/// Scenarios `0..count`, each from its own `(seed, index)` stream. The result
/// does not depend on how many threads the ambient rayon pool has.
pub fn sample_scenarios(model: &ProfileModel, count: usize, seed: u64) -> Result<Vec<Scenario>, ScenarioError> {
    let sampler = Sampler::new(model)?;
    Ok((0..count).into_par_iter().map(|i| sampler.scenario(seed, i)).collect())
}

/// Synthetic daily ratio curves with a morning and an evening peak, used when
/// no recorded history is available. Step `t` is hour `t mod 24`.
pub fn synthetic_history(days: usize, horizon: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..days)
        .map(|_| {
            let level: f64 = rng.random_range(0.88..1.0);
            let morning: f64 = rng.random_range(0.10..0.20);
            let evening: f64 = rng.random_range(0.22..0.32);
            let shift: f64 = rng.random_range(-1.0..1.0);
            let mut ar = 0.0;
            (0..horizon)
                .map(|t| {
                    let h = (t % 24) as f64;
                    let bump = |c: f64, w: f64| {
                        let d = (h - c - shift).abs().min(24.0 - (h - c - shift).abs());
                        (-(d / w).powi(2)).exp()
                    };
                    let e: f64 = rng.sample(StandardNormal);
                    ar = 0.7 * ar + 0.015 * e;
                    let v = level * (0.58 + morning * bump(9.0, 2.5) + evening * bump(19.0, 3.0)) + ar;
                    v.clamp(0.05, 1.0)
                })
                .collect()
        })
        .collect()
}

pub fn read_history_csv(path: &Path) -> Result<Vec<Vec<f64>>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => out.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(ScenarioError::Malformed(format!("history row {}: {e}", i + 1))),
        }
    }
    Ok(out)
}

pub fn write_history_csv(path: &Path, history: &[Vec<f64>]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path)?;
    if let Some(first) = history.first() {
        w.write_record((0..first.len()).map(|t| format!("t{t}")))?;
    }
    for row in history {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scenarios_csv(path: &Path, scenarios: &[Scenario]) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario_id", "t", "bus", "load_mw"])?;
    for s in scenarios {
        for t in 0..s.horizon() {
            for (bus, v) in s.load(t).iter().enumerate() {
                w.write_record([s.id.to_string(), t.to_string(), bus.to_string(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the tidy scenario CSV back. Every scenario must cover the same
/// `(t, bus)` grid with each cell given exactly once.
pub fn read_scenarios_csv(path: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["scenario_id", "t", "bus", "load_mw"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(ScenarioError::Malformed(format!("expected header {expected:?}, got {headers:?}")));
    }
    let mut rows: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| ScenarioError::Malformed(format!("line {}: bad {what}", line + 2));
        let id = rec[0].parse().map_err(|_| bad("scenario_id"))?;
        let t = rec[1].parse().map_err(|_| bad("t"))?;
        let bus = rec[2].parse().map_err(|_| bad("bus"))?;
        let v: f64 = rec[3].parse().map_err(|_| bad("load_mw"))?;
        if !v.is_finite() || v < 0.0 {
            return Err(bad("load_mw (must be finite and non-negative)"));
        }
        rows.push((id, t, bus, v));
    }
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let horizon = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let n_bus = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let mut ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut out: Vec<Scenario> = ids
        .iter()
        .map(|&id| Scenario {
            id,
            seed: 0,
            loads: Matrix::from_vec(horizon, n_bus, vec![f64::NAN; horizon * n_bus]),
        })
        .collect();
    for (id, t, bus, v) in rows {
        let k = ids.binary_search(&id).unwrap();
        let cell = &mut out[k].loads[(t, bus)];
        if !cell.is_nan() {
            return Err(ScenarioError::Malformed(format!("duplicate entry for scenario {id}, t {t}, bus {bus}")));
        }
        *cell = v;
    }
    for s in &out {
        if !s.loads.is_finite() {
            return Err(ScenarioError::Malformed(format!("scenario {} is missing entries", s.id)));
        }
    }
    Ok(out)
}
