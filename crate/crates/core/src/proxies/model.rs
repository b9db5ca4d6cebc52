use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use super::mechanisms::{self, *};
use super::ProxyError;
use crate::grid::GridSpec;
use crate::nn::checkpoint::{self, LayerEntry, Manifest};
use crate::nn::{write_grads, Activation, Mlp, MlpTrace, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Dnn,
    DeepOpf,
    Dc3,
    E2elr,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [Self::Dnn, Self::DeepOpf, Self::Dc3, Self::E2elr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dnn => "dnn",
            Self::DeepOpf => "deepopf",
            Self::Dc3 => "dc3",
            Self::E2elr => "e2elr",
        }
    }

    pub fn uses_slack(self) -> bool {
        matches!(self, Self::DeepOpf | Self::Dc3)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dnn" => Ok(Self::Dnn),
            "deepopf" => Ok(Self::DeepOpf),
            "dc3" => Ok(Self::Dc3),
            "e2elr" => Ok(Self::E2elr),
            other => Err(format!("unknown architecture {other:?} (expected dnn, deepopf, dc3 or e2elr)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dc3Params {
    pub steps: usize,
    pub step_size: f64,
    /// Differentiate through the correction during training. When false the
    /// correction only runs at inference.
    pub unroll: bool,
}

/// Construction knobs. `None` fields fall back to grid-derived defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyOptions {
    pub encoder_width: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub slack: Option<usize>,
    pub dc3_steps: usize,
    pub dc3_step_size: Option<f64>,
    pub dc3_unroll: bool,
}

impl Default for ProxyOptions {
    fn default() -> Self {
        Self {
            encoder_width: 64,
            hidden_width: 128,
            hidden_layers: 2,
            slack: None,
            dc3_steps: 200,
            dc3_step_size: None,
            dc3_unroll: true,
        }
    }
}

/// One dispatch query: nodal loads and the step's tightened bounds, all MW.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyInput {
    pub d: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
}

impl ProxyInput {
    pub fn demand(&self) -> f64 {
        self.d.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Descriptor {
    arch: Architecture,
    n_buses: usize,
    n_gens: usize,
    encoder_width: usize,
    hidden_width: usize,
    hidden_layers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slack: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dc3: Option<Dc3Params>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProxyModel {
    desc: Descriptor,
    peak_load: f64,
    enc_d: Mlp,
    enc_lo: Mlp,
    enc_hi: Mlp,
    head: Mlp,
}

/// Mechanism state kept per row for the backward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    None,
    Repair(RepairBranch),
    Completion,
    Correction(mechanisms::Dc3Trace),
}


#[derive(Clone, Debug)]
pub struct RowPass {
    pub p_hat: Vec<f64>,
    pub mechanism: Mechanism,
    pub output: Vec<f64>,
}

pub struct ProxyPass {
    enc: [MlpTrace; 3],
    head: MlpTrace,
    pub rows: Vec<Result<RowPass, ProxyError>>,
}

impl ProxyPass {
    pub fn z(&self) -> &Tensor2 {
        self.head.output()
    }
}

fn encoder<R: Rng + ?Sized>(inputs: usize, width: usize, rng: &mut R) -> Mlp {
    Mlp::init(&[inputs, width, width], &[Activation::Relu, Activation::Relu], rng)
}

impl ProxyModel {
    pub fn new<R: Rng + ?Sized>(
        spec: &GridSpec,
        arch: Architecture,
        opts: &ProxyOptions,
        rng: &mut R,
    ) -> Result<Self, ProxyError> {
        let g = spec.n_gens();
        let slack = if arch.uses_slack() {
            let s = opts.slack.unwrap_or_else(|| spec.default_slack_generator());
            if s >= g {
                return Err(ProxyError::InvalidModel(format!("slack generator {s} out of range")));
            }
            Some(s)
        } else {
            None
        };
        let dc3 = (arch == Architecture::Dc3).then(|| Dc3Params {
            steps: opts.dc3_steps,
            step_size: opts.dc3_step_size.unwrap_or(1.0 / g as f64),
            unroll: opts.dc3_unroll,
        });
        let desc = Descriptor {
            arch,
            n_buses: spec.n_buses,
            n_gens: g,
            encoder_width: opts.encoder_width,
            hidden_width: opts.hidden_width,
            hidden_layers: opts.hidden_layers,
            slack,
            dc3,
        };
        Ok(Self::build(desc, spec.peak_load(), rng))
    }

    fn build<R: Rng + ?Sized>(desc: Descriptor, peak_load: f64, rng: &mut R) -> Self {
        let w = desc.encoder_width;
        let enc_d = encoder(desc.n_buses, w, rng);
        let enc_lo = encoder(desc.n_gens, w, rng);
        let enc_hi = encoder(desc.n_gens, w, rng);
        let mut sizes = vec![3 * w];
        let mut acts = Vec::new();
        for _ in 0..desc.hidden_layers {
            sizes.push(desc.hidden_width);
            acts.push(Activation::Relu);
        }
        sizes.push(desc.n_gens);
        acts.push(Activation::Sigmoid);
        let head = Mlp::init(&sizes, &acts, rng);
        Self {
            desc,
            peak_load,
            enc_d,
            enc_lo,
            enc_hi,
            head,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.desc.arch
    }

    pub fn n_gens(&self) -> usize {
        self.desc.n_gens
    }

    pub fn n_buses(&self) -> usize {
        self.desc.n_buses
    }

    pub fn peak_load(&self) -> f64 {
        self.peak_load
    }

    pub fn slack(&self) -> Option<usize> {
        self.desc.slack
    }

    pub fn dc3(&self) -> Option<Dc3Params> {
        self.desc.dc3
    }

    pub fn hidden_width(&self) -> usize {
        self.desc.hidden_width
    }

    fn nets(&self) -> [&Mlp; 4] {
        [&self.enc_d, &self.enc_lo, &self.enc_hi, &self.head]
    }

    pub fn n_params(&self) -> usize {
        self.nets().iter().map(|m| m.n_params()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for m in self.nets() {
            m.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<(), ProxyError> {
        if src.len() != self.n_params() {
            return Err(ProxyError::InvalidModel(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                src.len()
            )));
        }
        let mut off = 0;
        for m in [&mut self.enc_d, &mut self.enc_lo, &mut self.enc_hi, &mut self.head] {
            off += m.read_params(&src[off..])?;
        }
        Ok(())
    }

    fn check_input(&self, x: &ProxyInput) -> Result<(), ProxyError> {
        if x.d.len() != self.desc.n_buses || x.p_lo.len() != self.desc.n_gens || x.p_hi.len() != self.desc.n_gens {
            return Err(crate::nn::NnError::ShapeMismatch(format!(
                "input sizes ({}, {}, {}) vs model ({}, {})",
                x.d.len(),
                x.p_lo.len(),
                x.p_hi.len(),
                self.desc.n_buses,
                self.desc.n_gens
            ))
            .into());
        }
        Ok(())
    }

    /// Runs the full forward pass. With `training`, a non-unrolled DC3 skips
    /// its correction so the loss sees the completion output.
    pub fn forward(&self, inputs: &[ProxyInput], training: bool) -> Result<ProxyPass, ProxyError> {
        let [xd, xlo, xhi] = self.features(inputs)?;
        let enc = [self.enc_d.forward(&xd)?, self.enc_lo.forward(&xlo)?, self.enc_hi.forward(&xhi)?];
        let h = self.concat([enc[0].output(), enc[1].output(), enc[2].output()]);
        let head = self.head.forward(&h)?;
        let z = head.output();
        let rows = inputs
            .iter()
            .enumerate()
            .map(|(i, x)| self.mechanism(z.row(i), x, training))
            .collect();
        Ok(ProxyPass { enc, head, rows })
    }

    /// Scaled demand, lower and upper bound inputs.
    fn features(&self, inputs: &[ProxyInput]) -> Result<[Tensor2; 3], ProxyError> {
        let b = inputs.len();
        let scale = 1.0 / self.peak_load;
        let mut xd = Tensor2::zeros(b, self.desc.n_buses);
        let mut xlo = Tensor2::zeros(b, self.desc.n_gens);
        let mut xhi = Tensor2::zeros(b, self.desc.n_gens);
        for (i, x) in inputs.iter().enumerate() {
            self.check_input(x)?;
            for (dst, &v) in xd.row_mut(i).iter_mut().zip(&x.d) {
                *dst = v * scale;
            }
            for (dst, &v) in xlo.row_mut(i).iter_mut().zip(&x.p_lo) {
                *dst = v * scale;
            }
            for (dst, &v) in xhi.row_mut(i).iter_mut().zip(&x.p_hi) {
                *dst = v * scale;
            }
        }
        Ok([xd, xlo, xhi])
    }

    fn concat(&self, enc: [&Tensor2; 3]) -> Tensor2 {
        let w = self.desc.encoder_width;
        let mut h = Tensor2::zeros(enc[0].rows(), 3 * w);
        for i in 0..h.rows() {
            let row = h.row_mut(i);
            for (k, t) in enc.iter().enumerate() {
                row[k * w..(k + 1) * w].copy_from_slice(t.row(i));
            }
        }
        h
    }

    fn mechanism(&self, z: &[f64], x: &ProxyInput, training: bool) -> Result<RowPass, ProxyError> {
        let p_hat = decode_bounded(z, &x.p_lo, &x.p_hi);
        let demand = x.demand();
        let (output, mechanism) = match self.desc.arch {
            Architecture::Dnn => (p_hat.clone(), Mechanism::None),
            Architecture::E2elr => {
                let (p, branch) = e2elr_repair(&p_hat, &x.p_lo, &x.p_hi, demand)?;
                (p, Mechanism::Repair(branch))
            }
            Architecture::DeepOpf => (
                deepopf_complete(&p_hat, demand, self.desc.slack.unwrap()),
                Mechanism::Completion,
            ),
            Architecture::Dc3 => {
                let slack = self.desc.slack.unwrap();
                let dc3 = self.desc.dc3.unwrap();
                let completed = deepopf_complete(&p_hat, demand, slack);
                if training && !dc3.unroll {
                    (completed, Mechanism::Completion)
                } else {
                    let (p, trace) = dc3_correct(&completed, &x.p_lo, &x.p_hi, demand, slack, dc3.steps, dc3.step_size);
                    (p, Mechanism::Correction(trace))
                }
            }
        };
        Ok(RowPass {
            p_hat,
            mechanism,
            output,
        })
    }

    /// Inference: one dispatch (or error) per input row.
    pub fn predict(&self, inputs: &[ProxyInput]) -> Result<Vec<Result<Vec<f64>, ProxyError>>, ProxyError> {
        let [xd, xlo, xhi] = self.features(inputs)?;
        let h = self.concat([&self.enc_d.predict(&xd)?, &self.enc_lo.predict(&xlo)?, &self.enc_hi.predict(&xhi)?]);
        let z = self.head.predict(&h)?;
        Ok(inputs
            .iter()
            .enumerate()
            .map(|(i, x)| self.mechanism(z.row(i), x, false).map(|r| r.output))
            .collect())
    }

    pub fn predict_one(&self, input: &ProxyInput) -> Result<Vec<f64>, ProxyError> {
        self.predict(std::slice::from_ref(input))?.pop().unwrap()
    }

    /// Parameter gradient (flat, in [`ProxyModel::params`] order) given
    /// `dL/dp` for every row of a successful pass.
    pub fn backward(&self, inputs: &[ProxyInput], pass: &ProxyPass, dl_dp: &Tensor2) -> Result<Vec<f64>, ProxyError> {
        let g = self.desc.n_gens;
        let b = inputs.len();
        if dl_dp.shape() != (b, g) || pass.rows.len() != b {
            return Err(crate::nn::NnError::ShapeMismatch("backward batch shape".into()).into());
        }
        let mut dz = Tensor2::zeros(b, g);
        for (i, (x, row)) in inputs.iter().zip(&pass.rows).enumerate() {
            let row = row.as_ref().map_err(|e| ProxyError::InvalidModel(format!("backward through failed row: {e}")))?;
            let up = dl_dp.row(i);
            let dp_hat = match &row.mechanism {
                Mechanism::None => up.to_vec(),
                Mechanism::Repair(branch) => e2elr_repair_vjp(up, &row.p_hat, &x.p_lo, &x.p_hi, *branch),
                Mechanism::Completion => deepopf_complete_vjp(up, self.desc.slack.unwrap()),
                Mechanism::Correction(trace) => {
                    let slack = self.desc.slack.unwrap();
                    let step = self.desc.dc3.unwrap().step_size;
                    deepopf_complete_vjp(&dc3_correct_vjp(up, trace, slack, step), slack)
                }
            };
            for (k, dst) in dz.row_mut(i).iter_mut().enumerate() {
                *dst = dp_hat[k] * (x.p_lo[k] - x.p_hi[k]);
            }
        }
        let (head_grads, dh) = self.head.backward(&pass.head, &dz)?;
        let w = self.desc.encoder_width;
        let mut out = Vec::with_capacity(self.n_params());
        for (k, (net, trace)) in [&self.enc_d, &self.enc_lo, &self.enc_hi].into_iter().zip(&pass.enc).enumerate() {
            let mut slice = Tensor2::zeros(b, w);
            for i in 0..b {
                slice.row_mut(i).copy_from_slice(&dh.row(i)[k * w..(k + 1) * w]);
            }
            let (grads, _) = net.backward(trace, &slice)?;
            write_grads(&grads, &mut out);
        }
        write_grads(&head_grads, &mut out);
        Ok(out)
    }

    fn layer_entries(&self) -> Vec<LayerEntry> {
        let mut out = Vec::new();
        for (name, net) in ["enc_d", "enc_lo", "enc_hi", "head"].into_iter().zip(self.nets()) {
            for (k, l) in net.layers.iter().enumerate() {
                out.push(LayerEntry {
                    name: format!("{name}.{k}"),
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.act,
                });
            }
        }
        out
    }

    pub fn manifest(&self, training: serde_json::Value) -> Manifest {
        Manifest {
            format: checkpoint::FORMAT.into(),
            architecture: serde_json::to_value(&self.desc).expect("descriptor serializes"),
            layers: self.layer_entries(),
            normalization: [("peak_load".to_string(), self.peak_load)].into(),
            training,
        }
    }

    pub fn save(&self, dir: &Path, training: serde_json::Value) -> Result<(), ProxyError> {
        checkpoint::write(dir, &self.manifest(training), &self.params())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest), ProxyError> {
        let (manifest, params) = checkpoint::read(dir)?;
        let desc: Descriptor = serde_json::from_value(manifest.architecture.clone())
            .map_err(|e| ProxyError::InvalidModel(format!("architecture descriptor: {e}")))?;
        if desc.arch.uses_slack() != desc.slack.is_some() || (desc.arch == Architecture::Dc3) != desc.dc3.is_some() {
            return Err(ProxyError::InvalidModel(format!(
                "mechanism parameters do not match architecture {}",
                desc.arch
            )));
        }
        let peak_load = *manifest
            .normalization
            .get("peak_load")
            .ok_or_else(|| ProxyError::InvalidModel("missing peak_load normalization".into()))?;
        let mut model = Self::build(desc, peak_load, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0));
        if model.layer_entries() != manifest.layers {
            return Err(ProxyError::InvalidModel("layer list does not match descriptor".into()));
        }
        model.set_params(&params)?;
        Ok((model, manifest))
    }
}
