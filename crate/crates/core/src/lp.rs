//! Dense bounded-variable revised simplex.
//!
//! Every row `aᵢ x (≤|=|≥) bᵢ` gets a logical (slack) column so that the
//! working system is `A x + s = b` with sign-restricted slacks. Phase 1
//! drives artificial columns out of the starting basis; phase 2 optimizes the
//! real objective. Pricing is Dantzig's rule with a switch to Bland's rule
//! after a long run of degenerate pivots.

use crate::linalg::{dot, norm_inf, LuFactors, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum LpError {
    #[error("malformed LP: {0}")]
    Malformed(String),
    #[error("simplex stalled after {iterations} iterations; recent pivots: {}", trace.join("; "))]
    NumericalBreakdown {
        iterations: usize,
        trace: Vec<String>,
    },
}

/// `min cᵀx  s.t.  A x (senses) b,  lower ≤ x ≤ upper`.
#[derive(Clone, Debug)]
pub struct StandardLp {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub senses: Vec<RowSense>,
}

impl StandardLp {
    pub fn new(
        a: Matrix,
        b: Vec<f64>,
        c: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        senses: Vec<RowSense>,
    ) -> Result<Self, LpError> {
        let lp = Self {
            a,
            b,
            c,
            lower,
            upper,
            senses,
        };
        lp.check()?;
        Ok(lp)
    }

    pub fn n_rows(&self) -> usize {
        self.a.rows()
    }

    pub fn n_vars(&self) -> usize {
        self.a.cols()
    }

    fn check(&self) -> Result<(), LpError> {
        let (m, n) = self.a.shape();
        if self.b.len() != m || self.senses.len() != m {
            return Err(LpError::Malformed(format!(
                "{m} rows but b has {} entries and {} senses",
                self.b.len(),
                self.senses.len()
            )));
        }
        if self.c.len() != n || self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::Malformed(format!("{n} columns but c/lower/upper lengths differ")));
        }
        if !self.a.is_finite() || !self.b.iter().chain(&self.c).all(|v| v.is_finite()) {
            return Err(LpError::Malformed("non-finite entry in A, b or c".into()));
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(LpError::Malformed(format!("bad bounds [{l}, {u}] on variable {j}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum NonBasic {
    Lower,
    Upper,
    /// Free variable parked at zero.
    Zero,
}

/// Final basis, reusable as a warm start for an LP of the same shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    /// Basic column (structural `0..n`, logical `n..n+m`) for each row.
    basic: Vec<usize>,
    /// For each of the `n + m` columns: `None` if basic, else where it sits.
    status: Vec<Option<NonBasic>>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `y` with `c − Aᵀy` the structural reduced costs.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub pivot_tol: f64,
    pub optimality_tol: f64,
    /// Pivots between refactorizations of the basis inverse.
    pub refactor_interval: usize,
    /// `None` means `50·(m+n) + 1000`.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            pivot_tol: 1e-9,
            optimality_tol: 1e-9,
            refactor_interval: 50,
            max_iterations: None,
        }
    }
}

pub fn solve(lp: &StandardLp) -> Result<LpSolution, LpError> {
    solve_with(lp, &SolverOptions::default(), None)
}

/// Solves `lp`, optionally starting from a previous basis. A warm basis that
/// is singular or primal infeasible for this LP is discarded in favour of a
/// cold start, so warm starting never changes the status returned.
pub fn solve_with(
    lp: &StandardLp,
    opts: &SolverOptions,
    warm: Option<&Basis>,
) -> Result<LpSolution, LpError> {
    lp.check()?;
    let mut simplex = Simplex::new(lp, *opts);
    if let Some(basis) = warm {
        if simplex.try_warm_start(basis) {
            return simplex.phase_two();
        }
        simplex = Simplex::new(lp, *opts);
    }
    simplex.cold_start();
    if !simplex.phase_one()? {
        return Ok(simplex.infeasible());
    }
    simplex.phase_two()
}

const TRACE_LEN: usize = 8;
const RATIO_TIE: f64 = 1e-12;

struct Simplex<'a> {
    lp: &'a StandardLp,
    opts: SolverOptions,
    m: usize,
    n: usize,
    /// Rows that carry an artificial column, with its sign.
    artificial: Vec<(usize, f64)>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    basic: Vec<usize>,
    status: Vec<Option<NonBasic>>,
    x: Vec<f64>,
    binv: Matrix,
    pivots_since_refactor: usize,
    iterations: usize,
    degenerate_run: usize,
    bland: bool,
    trace: Vec<String>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a StandardLp, opts: SolverOptions) -> Self {
        let (m, n) = lp.a.shape();
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        for sense in &lp.senses {
            let (l, u) = match sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            lower.push(l);
            upper.push(u);
        }
        let mut cost = lp.c.clone();
        cost.resize(n + m, 0.0);
        Self {
            lp,
            opts,
            m,
            n,
            artificial: Vec::new(),
            lower,
            upper,
            cost,
            basic: Vec::new(),
            status: Vec::new(),
            x: vec![0.0; n + m],
            binv: Matrix::identity(m),
            pivots_since_refactor: 0,
            iterations: 0,
            degenerate_run: 0,
            bland: false,
            trace: Vec::new(),
        }
    }

    fn n_cols(&self) -> usize {
        self.n + self.m + self.artificial.len()
    }

    /// Writes column `j` of the working matrix into `out`.
    fn column_into(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for i in 0..self.m {
                out[i] = self.lp.a[(i, j)];
            }
        } else if j < self.n + self.m {
            out[j - self.n] = 1.0;
        } else {
            let (row, sign) = self.artificial[j - self.n - self.m];
            out[row] = sign;
        }
    }

    fn column_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            (0..self.m).map(|i| self.lp.a[(i, j)] * y[i]).sum()
        } else if j < self.n + self.m {
            y[j - self.n]
        } else {
            let (row, sign) = self.artificial[j - self.n - self.m];
            sign * y[row]
        }
    }

    fn nonbasic_value(&self, j: usize, at: NonBasic) -> f64 {
        match at {
            NonBasic::Lower => self.lower[j],
            NonBasic::Upper => self.upper[j],
            NonBasic::Zero => 0.0,
        }
    }

    fn park(&self, j: usize) -> NonBasic {
        if self.lower[j].is_finite() {
            NonBasic::Lower
        } else if self.upper[j].is_finite() {
            NonBasic::Upper
        } else {
            NonBasic::Zero
        }
    }

    fn cold_start(&mut self) {
        let (m, n) = (self.m, self.n);
        self.status = vec![None; n + m];
        for j in 0..n {
            let at = self.park(j);
            self.status[j] = Some(at);
            self.x[j] = self.nonbasic_value(j, at);
        }
        let tol = self.opts.feasibility_tol;
        self.basic = Vec::with_capacity(m);
        for i in 0..m {
            let r = self.lp.b[i] - dot(self.lp.a.row(i), &self.x[..n]);
            let s = n + i;
            if r >= self.lower[s] - tol && r <= self.upper[s] + tol {
                self.basic.push(s);
                self.x[s] = r;
            } else {
                self.status[s] = Some(self.park(s));
                self.x[s] = 0.0;
                let sign = if r >= 0.0 { 1.0 } else { -1.0 };
                self.artificial.push((i, sign));
                let a = n + m + self.artificial.len() - 1;
                self.lower.push(0.0);
                self.upper.push(f64::INFINITY);
                self.cost.push(0.0);
                self.status.push(None);
                self.x.push(r.abs());
                self.basic.push(a);
            }
        }
        self.binv = Matrix::identity(m);
        for &(row, sign) in &self.artificial {
            self.binv[(row, row)] = sign;
        }
        self.pivots_since_refactor = 0;
    }

    fn try_warm_start(&mut self, basis: &Basis) -> bool {
        let total = self.n + self.m;
        if basis.basic.len() != self.m
            || basis.status.len() != total
            || basis.basic.iter().any(|&j| j >= total)
        {
            return false;
        }
        self.basic = basis.basic.clone();
        self.status = basis.status.clone();
        for j in 0..total {
            if let Some(at) = self.status[j] {
                // Bounds may have changed since the basis was recorded.
                let at = match at {
                    NonBasic::Lower if self.lower[j].is_finite() => NonBasic::Lower,
                    NonBasic::Upper if self.upper[j].is_finite() => NonBasic::Upper,
                    _ => self.park(j),
                };
                self.status[j] = Some(at);
                self.x[j] = self.nonbasic_value(j, at);
            }
        }
        if self.refactor().is_err() {
            return false;
        }
        let tol = self.opts.feasibility_tol;
        self.basic
            .iter()
            .all(|&j| self.x[j] >= self.lower[j] - tol && self.x[j] <= self.upper[j] + tol)
    }

    /// Rebuilds the basis inverse from scratch and recomputes basic values.
    fn refactor(&mut self) -> Result<(), ()> {
        let m = self.m;
        let mut bmat = Matrix::zeros(m, m);
        let mut col = vec![0.0; m];
        for (k, &j) in self.basic.iter().enumerate() {
            self.column_into(j, &mut col);
            for i in 0..m {
                bmat[(i, k)] = col[i];
            }
        }
        let lu = LuFactors::factor_with_threshold(&bmat, 1e-11).map_err(|_| ())?;
        self.binv = lu.inverse();
        self.pivots_since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = self.lp.b.clone();
        let mut col = vec![0.0; m];
        for j in 0..self.n_cols() {
            if self.status[j].is_none() {
                continue;
            }
            let v = self.x[j];
            if v != 0.0 {
                self.column_into(j, &mut col);
                for i in 0..m {
                    rhs[i] -= v * col[i];
                }
            }
        }
        let xb = self.binv.mul_vec(&rhs);
        for (k, &j) in self.basic.iter().enumerate() {
            self.x[j] = xb[k];
        }
    }

    fn duals(&self) -> Vec<f64> {
        let cb: Vec<f64> = self.basic.iter().map(|&j| self.cost[j]).collect();
        self.binv.tr_mul_vec(&cb)
    }

    fn phase_one(&mut self) -> Result<bool, LpError> {
        if self.artificial.is_empty() {
            return Ok(true);
        }
        let first_art = self.n + self.m;
        let total = self.n_cols();
        let real_cost = std::mem::replace(&mut self.cost, vec![0.0; total]);
        for j in first_art..self.n_cols() {
            self.cost[j] = 1.0;
        }
        let outcome = self.iterate(true)?;
        debug_assert_ne!(outcome, LpStatus::Unbounded, "phase one is bounded below");
        let infeasibility: f64 = (first_art..self.n_cols()).map(|j| self.x[j]).sum();
        self.cost = real_cost;
        self.cost.resize(self.n_cols(), 0.0);
        let scale = 1.0 + norm_inf(&self.lp.b);
        if infeasibility > self.opts.feasibility_tol * scale {
            return Ok(false);
        }
        // Artificials are pinned to zero from here on.
        for j in first_art..self.n_cols() {
            self.upper[j] = 0.0;
            if self.status[j].is_some() {
                self.status[j] = Some(NonBasic::Lower);
                self.x[j] = 0.0;
            }
        }
        self.bland = false;
        self.degenerate_run = 0;
        Ok(true)
    }

    fn phase_two(mut self) -> Result<LpSolution, LpError> {
        let status = self.iterate(false)?;
        if self.refactor().is_err() {
            return Err(self.breakdown("basis became singular at termination"));
        }
        let y = self.duals();
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let reduced_costs: Vec<f64> = (0..self.n).map(|j| self.lp.c[j] - self.column_dot(j, &y)).collect();
        let objective = dot(&self.lp.c, &x);
        let basis = self.export_basis();
        Ok(LpSolution {
            status,
            x,
            objective,
            duals: y,
            reduced_costs,
            iterations: self.iterations,
            basis,
        })
    }

    /// The basis is exportable only when no artificial column is still basic.
    fn export_basis(&self) -> Option<Basis> {
        let total = self.n + self.m;
        if self.basic.iter().any(|&j| j >= total) {
            return None;
        }
        Some(Basis {
            basic: self.basic.clone(),
            status: self.status[..total].to_vec(),
        })
    }

    fn infeasible(self) -> LpSolution {
        LpSolution {
            status: LpStatus::Infeasible,
            x: self.x[..self.n].to_vec(),
            objective: f64::NAN,
            duals: vec![0.0; self.m],
            reduced_costs: vec![0.0; self.n],
            iterations: self.iterations,
            basis: None,
        }
    }

    fn breakdown(&self, reason: &str) -> LpError {
        let mut trace = self.trace.clone();
        trace.push(reason.to_string());
        LpError::NumericalBreakdown {
            iterations: self.iterations,
            trace,
        }
    }

    fn record(&mut self, entry: String) {
        if self.trace.len() == TRACE_LEN {
            self.trace.remove(0);
        }
        self.trace.push(entry);
    }

    /// Runs simplex pivots until optimality or unboundedness.
    fn iterate(&mut self, phase_one: bool) -> Result<LpStatus, LpError> {
        let m = self.m;
        let max_iter = self
            .opts
            .max_iterations
            .unwrap_or(50 * (m + self.n) + 1000);
        let bland_after = 3 * (m + self.n);
        let first_art = self.n + self.m;
        let mut col = vec![0.0; m];
        loop {
            if self.pivots_since_refactor >= self.opts.refactor_interval && self.refactor().is_err() {
                return Err(self.breakdown("singular basis on refactorization"));
            }
            if self.iterations >= max_iter {
                return Err(self.breakdown("iteration limit reached"));
            }

            let y = self.duals();
            let tol = self.opts.optimality_tol;
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..self.n_cols() {
                let Some(at) = self.status[j] else { continue };
                if !phase_one && j >= first_art {
                    continue;
                }
                if self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.cost[j] - self.column_dot(j, &y);
                let eligible = match at {
                    NonBasic::Lower => d < -tol,
                    NonBasic::Upper => d > tol,
                    NonBasic::Zero => d.abs() > tol,
                };
                if !eligible {
                    continue;
                }
                if self.bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, best)| d.abs() > best.abs()) {
                    entering = Some((j, d));
                }
            }
            let Some((q, dq)) = entering else {
                return Ok(LpStatus::Optimal);
            };
            let dir = if dq < 0.0 { 1.0 } else { -1.0 };

            self.column_into(q, &mut col);
            let alpha = self.binv.mul_vec(&col);

            // Ratio test: x_B changes by −dir·α·t as x_q moves by dir·t.
            let piv_tol = self.opts.pivot_tol;
            let mut step = self.upper[q] - self.lower[q];
            let mut leave: Option<usize> = None;
            for r in 0..m {
                let delta = -dir * alpha[r];
                let j = self.basic[r];
                let limit = if delta < -piv_tol && self.lower[j].is_finite() {
                    (self.x[j] - self.lower[j]) / -delta
                } else if delta > piv_tol && self.upper[j].is_finite() {
                    (self.upper[j] - self.x[j]) / delta
                } else {
                    continue;
                };
                let limit = limit.max(0.0);
                let take = if limit < step - RATIO_TIE {
                    true
                } else if limit <= step + RATIO_TIE {
                    // Ties with a bound flip keep the flip; ties between rows
                    // go to the larger pivot (or the lower index under Bland).
                    match leave {
                        Some(cur) if self.bland => j < self.basic[cur],
                        Some(cur) => alpha[r].abs() > alpha[cur].abs(),
                        None => false,
                    }
                } else {
                    false
                };
                if take {
                    step = limit;
                    leave = Some(r);
                }
            }
            if !step.is_finite() {
                return Ok(LpStatus::Unbounded);
            }

            for r in 0..m {
                let j = self.basic[r];
                self.x[j] -= dir * alpha[r] * step;
            }
            self.x[q] += dir * step;
            self.iterations += 1;

            if step <= self.opts.feasibility_tol {
                self.degenerate_run += 1;
                if self.degenerate_run >= bland_after && !self.bland {
                    self.bland = true;
                    log::debug!("simplex: switching to Bland's rule after {} degenerate pivots", self.degenerate_run);
                }
            } else {
                self.degenerate_run = 0;
            }

            match leave {
                None => {
                    // Bound flip; the basis is unchanged.
                    let to = if dir > 0.0 { NonBasic::Upper } else { NonBasic::Lower };
                    self.status[q] = Some(to);
                    self.x[q] = self.nonbasic_value(q, to);
                    self.record(format!("flip {q}"));
                }
                Some(r) => {
                    let out = self.basic[r];
                    let to = if -dir * alpha[r] < 0.0 {
                        NonBasic::Lower
                    } else {
                        NonBasic::Upper
                    };
                    let to = if self.lower[out] == self.upper[out] {
                        NonBasic::Lower
                    } else {
                        to
                    };
                    self.status[out] = Some(to);
                    self.x[out] = self.nonbasic_value(out, to);
                    self.status[q] = None;
                    self.basic[r] = q;
                    self.update_inverse(r, &alpha)
                        .map_err(|_| self.breakdown("pivot element vanished"))?;
                    self.record(format!("in {q} out {out} row {r} step {step:e}"));
                }
            }
        }
    }

    /// Product-form update of `B⁻¹` after column `alpha` replaces row `r`.
    fn update_inverse(&mut self, r: usize, alpha: &[f64]) -> Result<(), ()> {
        let pivot = alpha[r];
        if pivot.abs() < self.opts.pivot_tol {
            return Err(());
        }
        let m = self.m;
        let inv_pivot = 1.0 / pivot;
        for v in self.binv.row_mut(r) {
            *v *= inv_pivot;
        }
        let pivot_row = self.binv.row(r).to_vec();
        for i in 0..m {
            if i == r || alpha[i] == 0.0 {
                continue;
            }
            let f = alpha[i];
            for (v, p) in self.binv.row_mut(i).iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
        }
        self.pivots_since_refactor += 1;
        Ok(())
    }
}

/// Residuals of the optimality conditions at a reported solution.
#[derive(Clone, Copy, Debug, Default)]
pub struct KktResiduals {
    /// `max |Ax − b|` over equality rows and row-sense violations.
    pub primal: f64,
    /// Largest variable bound violation.
    pub bounds: f64,
    /// Largest dual sign or complementarity violation (structural and row).
    pub dual: f64,
    /// `|cᵀx − (bᵀy + Σ dⱼ xⱼ)|`.
    pub duality_gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.bounds).max(self.dual).max(self.duality_gap)
    }
}

/// Checks primal feasibility, dual sign conditions and complementary
/// slackness for a minimization LP.
pub fn kkt_residuals(lp: &StandardLp, sol: &LpSolution, active_tol: f64) -> KktResiduals {
    let ax = lp.a.mul_vec(&sol.x);
    let mut res = KktResiduals::default();
    for i in 0..lp.n_rows() {
        let r = ax[i] - lp.b[i];
        let viol = match lp.senses[i] {
            RowSense::Eq => r.abs(),
            RowSense::Le => r.max(0.0),
            RowSense::Ge => (-r).max(0.0),
        };
        res.primal = res.primal.max(viol);
        let y = sol.duals[i];
        let inactive = r.abs() > active_tol;
        let dual_viol = match lp.senses[i] {
            RowSense::Eq => 0.0,
            RowSense::Le => y.max(0.0).max(if inactive { y.abs() } else { 0.0 }),
            RowSense::Ge => (-y).max(0.0).max(if inactive { y.abs() } else { 0.0 }),
        };
        res.dual = res.dual.max(dual_viol);
    }
    let mut bound_terms = 0.0;
    for j in 0..lp.n_vars() {
        let (x, l, u, d) = (sol.x[j], lp.lower[j], lp.upper[j], sol.reduced_costs[j]);
        res.bounds = res.bounds.max((l - x).max(x - u).max(0.0));
        let at_lower = (x - l).abs() <= active_tol;
        let at_upper = (u - x).abs() <= active_tol;
        let viol = match (at_lower, at_upper) {
            (true, true) => 0.0,
            (true, false) => (-d).max(0.0),
            (false, true) => d.max(0.0),
            (false, false) => d.abs(),
        };
        res.dual = res.dual.max(viol);
        bound_terms += d * x;
    }
    let primal_obj = dot(&lp.c, &sol.x);
    let dual_obj = dot(&lp.b, &sol.duals) + bound_terms;
    res.duality_gap = (primal_obj - dual_obj).abs();
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lp(
        rows: &[Vec<f64>],
        b: &[f64],
        c: &[f64],
        bounds: &[(f64, f64)],
        senses: &[RowSense],
    ) -> StandardLp {
        let a = if rows.is_empty() {
            Matrix::zeros(0, c.len())
        } else {
            Matrix::from_rows(rows)
        };
        StandardLp::new(
            a,
            b.to_vec(),
            c.to_vec(),
            bounds.iter().map(|b| b.0).collect(),
            bounds.iter().map(|b| b.1).collect(),
            senses.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn single_ge_row() {
        let p = lp(&[vec![1.0]], &[3.0], &[1.0], &[(0.0, f64::INFINITY)], &[RowSense::Ge]);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 3.0).abs() < 1e-12);
        assert!((s.objective - 3.0).abs() < 1e-12);
    }

    #[test]
    fn two_generator_merit_order() {
        let p = lp(
            &[vec![1.0, 1.0]],
            &[60.0],
            &[10.0, 20.0],
            &[(0.0, 50.0), (0.0, 50.0)],
            &[RowSense::Eq],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.x[0] - 50.0).abs() < 1e-9 && (s.x[1] - 10.0).abs() < 1e-9);
        assert!((s.objective - 700.0).abs() < 1e-9);
        let kkt = kkt_residuals(&p, &s, 1e-7);
        assert!(kkt.max() < 1e-9, "{kkt:?}");
        // The balance row's dual is the marginal unit's cost.
        assert!((s.duals[0] - 20.0).abs() < 1e-9);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let p = lp(
            &[vec![1.0], vec![1.0]],
            &[1.0, 2.0],
            &[1.0],
            &[(f64::NEG_INFINITY, f64::INFINITY)],
            &[RowSense::Le, RowSense::Ge],
        );
        assert_eq!(solve(&p).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_direction_is_detected() {
        let p = lp(
            &[vec![1.0, -1.0]],
            &[1.0],
            &[-1.0, 0.0],
            &[(0.0, f64::INFINITY), (0.0, f64::INFINITY)],
            &[RowSense::Le],
        );
        assert_eq!(solve(&p).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn no_rows_picks_cheapest_bounds() {
        let p = lp(&[], &[], &[1.0, -2.0], &[(-1.0, 4.0), (0.0, 3.0)], &[]);
        let s = solve(&p).unwrap();
        assert_eq!(s.x, vec![-1.0, 3.0]);
    }

    #[test]
    fn free_variables_are_handled() {
        // min x + y, x − y = 1, x + y ≥ 3, both free.
        let inf = f64::INFINITY;
        let p = lp(
            &[vec![1.0, -1.0], vec![1.0, 1.0]],
            &[1.0, 3.0],
            &[1.0, 1.0],
            &[(-inf, inf), (-inf, inf)],
            &[RowSense::Eq, RowSense::Ge],
        );
        let s = solve(&p).unwrap();
        assert_eq!(s.status, LpStatus::Optimal);
        assert!((s.objective - 3.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn warm_start_reproduces_cold_result() {
        let mut p = lp(
            &[vec![1.0, 1.0, 1.0], vec![1.0, -1.0, 0.0]],
            &[60.0, 5.0],
            &[10.0, 20.0, 30.0],
            &[(0.0, 30.0), (0.0, 30.0), (0.0, 30.0)],
            &[RowSense::Eq, RowSense::Le],
        );
        let cold = solve(&p).unwrap();
        p.b[0] = 62.0;
        let cold2 = solve(&p).unwrap();
        let warm = solve_with(&p, &SolverOptions::default(), cold.basis.as_ref()).unwrap();
        assert_eq!(warm.status, LpStatus::Optimal);
        assert!((warm.objective - cold2.objective).abs() < 1e-9);
    }

    #[test]
    fn malformed_bounds_are_rejected() {
        let r = StandardLp::new(
            Matrix::zeros(0, 1),
            vec![],
            vec![1.0],
            vec![2.0],
            vec![1.0],
            vec![],
        );
        assert!(matches!(r, Err(LpError::Malformed(_))));
    }

    #[test]
    fn deterministic_pivot_sequence() {
        let p = lp(
            &[vec![1.0, 2.0, 1.0], vec![2.0, 1.0, 3.0], vec![1.0, 1.0, 1.0]],
            &[4.0, 5.0, 2.0],
            &[-1.0, -1.0, -2.0],
            &[(0.0, 10.0), (0.0, 10.0), (0.0, 1.5)],
            &[RowSense::Le, RowSense::Le, RowSense::Ge],
        );
        let a = solve(&p).unwrap();
        let b = solve(&p).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.duals, b.duals);
    }

    /// Brute force over all vertices of `{A x ≤ b, 0 ≤ x ≤ u}`.
    fn brute_force(a: &[Vec<f64>], b: &[f64], c: &[f64], u: &[f64]) -> Option<f64> {
        let n = c.len();
        // Every constraint as (coefficients, rhs) with `coef·x ≤ rhs`.
        let mut cons: Vec<(Vec<f64>, f64)> = a.iter().cloned().zip(b.iter().copied()).collect();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = -1.0;
            cons.push((e.clone(), 0.0));
            e[j] = 1.0;
            cons.push((e, u[j]));
        }
        let mut best: Option<f64> = None;
        let k = cons.len();
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| cons[i].0.clone()).collect();
            let rhs: Vec<f64> = idx.iter().map(|&i| cons[i].1).collect();
            if let Ok(lu) = LuFactors::factor_with_threshold(&Matrix::from_rows(&rows), 1e-10) {
                let x = lu.solve(&rhs);
                if cons.iter().all(|(co, r)| dot(co, &x) <= r + 1e-7) {
                    let obj = dot(c, &x);
                    best = Some(best.map_or(obj, |b: f64| b.min(obj)));
                }
            }
            // Next combination.
            let mut i = n;
            loop {
                if i == 0 {
                    return best;
                }
                i -= 1;
                if idx[i] < k - n + i {
                    idx[i] += 1;
                    for j in i + 1..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    fn expand_senses(a: &[Vec<f64>], b: &[f64], senses: &[RowSense]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for ((row, &bi), s) in a.iter().zip(b).zip(senses) {
            let neg: Vec<f64> = row.iter().map(|v| -v).collect();
            match s {
                RowSense::Le => {
                    rows.push(row.clone());
                    rhs.push(bi);
                }
                RowSense::Ge => {
                    rows.push(neg);
                    rhs.push(-bi);
                }
                RowSense::Eq => {
                    rows.push(row.clone());
                    rhs.push(bi);
                    rows.push(neg);
                    rhs.push(-bi);
                }
            }
        }
        (rows, rhs)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_vertex_enumeration(
            n in 1usize..5,
            m in 1usize..5,
            seed_vals in proptest::collection::vec(-5.0f64..5.0, 64),
        ) {
            let mut it = seed_vals.iter().copied().cycle();
            let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| it.next().unwrap()).collect()).collect();
            // b ≥ 0 keeps x = 0 feasible.
            let b: Vec<f64> = (0..m).map(|_| it.next().unwrap().abs() + 0.5).collect();
            let c: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
            let u: Vec<f64> = (0..n).map(|_| it.next().unwrap().abs() + 1.0).collect();
            let p = StandardLp::new(
                Matrix::from_rows(&a), b.clone(), c.clone(), vec![0.0; n], u.clone(), vec![RowSense::Le; m],
            ).unwrap();
            let s = solve(&p).unwrap();
            prop_assert_eq!(s.status, LpStatus::Optimal);
            let oracle = brute_force(&a, &b, &c, &u).unwrap();
            prop_assert!((s.objective - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
                "simplex {} vs brute force {}", s.objective, oracle);
            let kkt = kkt_residuals(&p, &s, 1e-7);
            prop_assert!(kkt.primal <= 1e-8 * (1.0 + norm_inf(&b)));
            prop_assert!(kkt.duality_gap <= 1e-6 * (1.0 + s.objective.abs()), "{:?}", kkt);
        }

        #[test]
        fn mixed_senses_match_vertex_enumeration(
            n in 1usize..5,
            m in 1usize..4,
            sense_ids in proptest::collection::vec(0u8..3, 4),
            seed_vals in proptest::collection::vec(-4.0f64..4.0, 64),
        ) {
            let mut it = seed_vals.iter().copied().cycle();
            let a: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| it.next().unwrap()).collect()).collect();
            let b: Vec<f64> = (0..m).map(|_| it.next().unwrap()).collect();
            let c: Vec<f64> = (0..n).map(|_| it.next().unwrap()).collect();
            let u: Vec<f64> = (0..n).map(|_| it.next().unwrap().abs() + 1.0).collect();
            let senses: Vec<RowSense> = sense_ids[..m]
                .iter()
                .map(|s| [RowSense::Le, RowSense::Eq, RowSense::Ge][*s as usize])
                .collect();
            let p = StandardLp::new(
                Matrix::from_rows(&a), b.clone(), c.clone(), vec![0.0; n], u.clone(), senses.clone(),
            ).unwrap();
            let s = solve(&p).unwrap();
            let (rows, rhs) = expand_senses(&a, &b, &senses);
            match brute_force(&rows, &rhs, &c, &u) {
                None => prop_assert_eq!(s.status, LpStatus::Infeasible),
                Some(oracle) => {
                    prop_assert_eq!(s.status, LpStatus::Optimal);
                    prop_assert!((s.objective - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()),
                        "simplex {} vs brute force {}", s.objective, oracle);
                    let kkt = kkt_residuals(&p, &s, 1e-7);
                    prop_assert!(kkt.max() <= 1e-6, "{:?}", kkt);
                }
            }
        }
    }
}
