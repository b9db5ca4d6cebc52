use crate::grid::GridSpec;
use crate::proxies::Architecture;

/// Loss terms in $. Penalty terms are already multiplied by λ·M_pb.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub energy: f64,
    pub thermal: f64,
    pub balance_penalty: f64,
    pub bound_penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.energy + self.thermal + self.balance_penalty + self.bound_penalty
    }
}

/// Per-sample training loss and its gradient with respect to the final
/// dispatch `p`. `base_flow` is `Φ·d` for the sample's loads.
pub fn sample_loss(
    arch: Architecture,
    spec: &GridSpec,
    demand: f64,
    base_flow: &[f64],
    p_lo: &[f64],
    p_hi: &[f64],
    p: &[f64],
    lambda: f64,
) -> (LossParts, Vec<f64>) {
    let mut grad: Vec<f64> = spec.generators.iter().map(|g| g.cost).collect();
    let mut parts = LossParts {
        energy: grad.iter().zip(p).map(|(c, v)| c * v).sum(),
        ..LossParts::default()
    };
    let m_th = spec.penalties.thermal;
    let phi_g = spec.gen_ptdf();
    let mut sens = vec![0.0; spec.n_branches()];
    for (e, br) in spec.branches.iter().enumerate() {
        let f = crate::linalg::dot(phi_g.row(e), p) - base_flow[e];
        if f > br.f_max {
            parts.thermal += m_th * (f - br.f_max);
            sens[e] = m_th;
        } else if f < br.f_min {
            parts.thermal += m_th * (br.f_min - f);
            sens[e] = -m_th;
        }
    }
    for (gi, v) in grad.iter_mut().zip(phi_g.tr_mul_vec(&sens)) {
        *gi += v;
    }
    let weight = lambda * spec.penalties.power_balance;
    match arch {
        // Balance and bounds hold by construction; no penalty is evaluated.
        Architecture::E2elr => {}
        Architecture::Dnn => {
            let gap = p.iter().sum::<f64>() - demand;
            parts.balance_penalty = weight * gap.abs();
            let s = weight * gap.signum() * (gap != 0.0) as u8 as f64;
            grad.iter_mut().for_each(|g| *g += s);
        }
        Architecture::DeepOpf | Architecture::Dc3 => {
            for i in 0..p.len() {
                if p[i] > p_hi[i] {
                    parts.bound_penalty += weight * (p[i] - p_hi[i]);
                    grad[i] += weight;
                } else if p[i] < p_lo[i] {
                    parts.bound_penalty += weight * (p_lo[i] - p[i]);
                    grad[i] -= weight;
                }
            }
        }
    }
    (parts, grad)
}
