//! Per-sample feasibility mechanisms and their vector-Jacobian products.

use super::ProxyError;

/// `p̂ = z·p_lo + (1 − z)·p_hi`, clamped so rounding never leaves the box.
pub fn decode_bounded(z: &[f64], p_lo: &[f64], p_hi: &[f64]) -> Vec<f64> {
    z.iter()
        .zip(p_lo.iter().zip(p_hi))
        .map(|(&zi, (&lo, &hi))| (hi + zi * (lo - hi)).clamp(lo, hi))
        .collect()
}

/// Which side of the balance the repair moved toward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RepairBranch {
    Identity,
    Up { eta: f64, scale: f64 },
    Down { eta: f64, scale: f64 },
}

/// Convex-combination repair restoring `Σp = d_total` inside the box.
pub fn e2elr_repair(
    p_hat: &[f64],
    p_lo: &[f64],
    p_hi: &[f64],
    d_total: f64,
) -> Result<(Vec<f64>, RepairBranch), ProxyError> {
    let s: f64 = p_hat.iter().sum();
    let lo_sum: f64 = p_lo.iter().sum();
    let hi_sum: f64 = p_hi.iter().sum();
    if !(lo_sum <= d_total && d_total <= hi_sum) {
        return Err(ProxyError::RepairInfeasible {
            demand: d_total,
            lo: lo_sum,
            hi: hi_sum,
        });
    }
    let (target, branch) = if s < d_total {
        let den = hi_sum - s;
        if den <= 0.0 {
            return Ok((p_hat.to_vec(), RepairBranch::Identity));
        }
        let eta = (d_total - s) / den;
        (p_hi, RepairBranch::Up { eta, scale: (d_total - hi_sum) / (den * den) })
    } else {
        let den = s - lo_sum;
        if den <= 0.0 {
            return Ok((p_hat.to_vec(), RepairBranch::Identity));
        }
        let eta = (s - d_total) / den;
        (p_lo, RepairBranch::Down { eta, scale: (d_total - lo_sum) / (den * den) })
    };
    let eta = match branch {
        RepairBranch::Up { eta, .. } | RepairBranch::Down { eta, .. } => eta,
        RepairBranch::Identity => unreachable!(),
    };
    let out = p_hat
        .iter()
        .zip(target)
        .zip(p_lo.iter().zip(p_hi))
        .map(|((&p, &t), (&lo, &hi))| (p + eta * (t - p)).clamp(lo, hi))
        .collect();
    Ok((out, branch))
}

/// Pulls `g = dL/dp̃` back through [`e2elr_repair`].
pub fn e2elr_repair_vjp(g: &[f64], p_hat: &[f64], p_lo: &[f64], p_hi: &[f64], branch: RepairBranch) -> Vec<f64> {
    let (eta, scale, target) = match branch {
        RepairBranch::Identity => return g.to_vec(),
        RepairBranch::Up { eta, scale } => (eta, scale, p_hi),
        RepairBranch::Down { eta, scale } => (eta, scale, p_lo),
    };
    let coupling: f64 = g.iter().zip(target.iter().zip(p_hat)).map(|(gi, (t, p))| gi * (t - p)).sum();
    let shared = coupling * scale;
    g.iter().map(|gi| gi * (1.0 - eta) + shared).collect()
}

/// Sets the slack entry to the residual demand.
pub fn deepopf_complete(p_hat: &[f64], d_total: f64, slack: usize) -> Vec<f64> {
    let mut out = p_hat.to_vec();
    out[slack] = residual(&out, d_total, slack);
    out
}

fn residual(p: &[f64], d_total: f64, slack: usize) -> f64 {
    let others: f64 = p.iter().enumerate().filter(|&(i, _)| i != slack).map(|(_, v)| v).sum();
    d_total - others
}

pub fn deepopf_complete_vjp(g: &[f64], slack: usize) -> Vec<f64> {
    let gs = g[slack];
    g.iter()
        .enumerate()
        .map(|(i, &gi)| if i == slack { 0.0 } else { gi - gs })
        .collect()
}

#[inline]
fn violation_grad(p: f64, lo: f64, hi: f64) -> (f64, bool) {
    if p > hi {
        (p - hi, true)
    } else if p < lo {
        (p - lo, true)
    } else {
        (0.0, false)
    }
}

/// `½‖max(0, p − hi)‖² + ½‖max(0, lo − p)‖²`.
pub fn bound_violation_energy(p: &[f64], p_lo: &[f64], p_hi: &[f64]) -> f64 {
    p.iter()
        .zip(p_lo.iter().zip(p_hi))
        .map(|(&v, (&lo, &hi))| {
            let (g, _) = violation_grad(v, lo, hi);
            0.5 * g * g
        })
        .sum()
}

/// Active-violation masks recorded per correction step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dc3Trace {
    pub active: Vec<Vec<bool>>,
}

/// `steps` gradient steps on the bound-violation energy, taken in the
/// completed space: non-slack entries move, the slack is re-completed after
/// every step so the balance holds throughout.
pub fn dc3_correct(
    p: &[f64],
    p_lo: &[f64],
    p_hi: &[f64],
    d_total: f64,
    slack: usize,
    steps: usize,
    step_size: f64,
) -> (Vec<f64>, Dc3Trace) {
    let mut cur = p.to_vec();
    let mut trace = Dc3Trace::default();
    let mut v = vec![0.0; cur.len()];
    for _ in 0..steps {
        let mut mask = vec![false; cur.len()];
        let mut any = false;
        for i in 0..cur.len() {
            let (g, a) = violation_grad(cur[i], p_lo[i], p_hi[i]);
            v[i] = g;
            mask[i] = a;
            any |= a;
        }
        trace.active.push(mask);
        if !any {
            continue;
        }
        let vs = v[slack];
        for i in 0..cur.len() {
            if i != slack {
                cur[i] -= step_size * (v[i] - vs);
            }
        }
        cur[slack] = residual(&cur, d_total, slack);
    }
    (cur, trace)
}

/// Pulls `g = dL/dp'` back through [`dc3_correct`] to its input `p`.
pub fn dc3_correct_vjp(g: &[f64], trace: &Dc3Trace, slack: usize, step_size: f64) -> Vec<f64> {
    let mut g = g.to_vec();
    let mut a = vec![0.0; g.len()];
    for mask in trace.active.iter().rev() {
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let gs = g[slack];
        let mut sum_a = 0.0;
        for i in 0..g.len() {
            if i != slack {
                a[i] = g[i] - gs;
                sum_a += a[i];
            }
        }
        for i in 0..g.len() {
            g[i] = if i == slack {
                if mask[slack] {
                    step_size * sum_a
                } else {
                    0.0
                }
            } else if mask[i] {
                a[i] * (1.0 - step_size)
            } else {
                a[i]
            };
        }
    }
    g
}
