use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Record, Split, TrainSet};
use super::loss::sample_loss;
use crate::grid::GridSpec;
use crate::nn::{adam_step, AdamConfig, AdamState, Tensor2};
use crate::proxies::{Architecture, ProxyError, ProxyInput, ProxyModel, ProxyOptions};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("every grid-search run diverged")]
    AllRunsDiverged,
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_grid: Vec<f64>,
    pub hidden_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    /// Plateau cut: `lr /= lr_divisor`.
    pub lr_divisor: f64,
    pub min_rel_improvement: f64,
    /// λ used when comparing validation losses across grid points.
    pub selection_lambda: f64,
    pub encoder_width: usize,
    pub hidden_layers: usize,
    pub slack: Option<usize>,
    pub dc3_steps: usize,
    pub dc3_step_size: Option<f64>,
    pub dc3_unroll: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_grid: vec![1e-2, 1e-3],
            hidden_grid: vec![128, 256],
            lambda_grid: vec![0.1, 1.0],
            batch_size: 64,
            max_epochs: 300,
            plateau_patience: 10,
            early_stop_patience: 20,
            lr_divisor: 10.0,
            min_rel_improvement: 1e-6,
            selection_lambda: 1.0,
            encoder_width: 64,
            hidden_layers: 2,
            slack: None,
            dc3_steps: 200,
            dc3_step_size: None,
            dc3_unroll: true,
            seed: 2024,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if self.lr_grid.is_empty() || self.hidden_grid.is_empty() || self.lambda_grid.is_empty() {
            return bad("grids must be non-empty");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.lr_divisor > 1.0) {
            return bad("lr_divisor must exceed 1");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and epoch budget must be positive");
        }
        if self.lr_grid.iter().any(|&v| !(v > 0.0)) || self.lambda_grid.iter().any(|&v| !(v >= 0.0)) {
            return bad("learning rates must be positive and penalty weights non-negative");
        }
        Ok(())
    }

    fn proxy_options(&self, hidden: usize) -> ProxyOptions {
        ProxyOptions {
            encoder_width: self.encoder_width,
            hidden_width: hidden,
            hidden_layers: self.hidden_layers,
            slack: self.slack,
            dc3_steps: self.dc3_steps,
            dc3_step_size: self.dc3_step_size,
            dc3_unroll: self.dc3_unroll,
        }
    }

    /// Grid points in a fixed order. The penalty weight has no effect on
    /// E2ELR, so its λ axis collapses to the first value.
    pub fn runs(&self, arch: Architecture) -> Vec<RunSpec> {
        let lambdas: &[f64] = if arch == Architecture::E2elr {
            &self.lambda_grid[..1]
        } else {
            &self.lambda_grid
        };
        let mut out = Vec::new();
        for &lr in &self.lr_grid {
            for &hidden in &self.hidden_grid {
                for &lambda in lambdas {
                    out.push(RunSpec {
                        index: out.len(),
                        lr,
                        hidden,
                        lambda,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub index: usize,
    pub lr: f64,
    pub hidden: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Wall time; kept out of deterministic outputs.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub spec: RunSpec,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val: f64,
    /// Validation loss of the restored parameters at the selection λ.
    pub selection_loss: f64,
    pub model: ProxyModel,
}

pub struct TrainOutcome {
    pub model: ProxyModel,
    pub best: usize,
    pub runs: Vec<Result<RunResult, TrainError>>,
}

impl TrainOutcome {
    pub fn best_run(&self) -> &RunResult {
        self.runs[self.best].as_ref().expect("best run succeeded")
    }
}

fn batch_inputs(set: &TrainSet, idx: &[usize]) -> Vec<ProxyInput> {
    idx.iter().map(|&i| set.records[i].input.clone()).collect()
}

/// Summed loss over `records[idx]` and the gradient of the batch-mean loss
/// with respect to the flat parameter vector.
pub fn batch_loss_grad(
    model: &ProxyModel,
    spec: &GridSpec,
    records: &[Record],
    idx: &[usize],
    lambda: f64,
    training: bool,
) -> Result<(f64, Vec<f64>), TrainError> {
    let inputs: Vec<ProxyInput> = idx.iter().map(|&i| records[i].input.clone()).collect();
    let pass = model.forward(&inputs, training)?;
    let scale = 1.0 / idx.len() as f64;
    let mut dl_dp = Tensor2::zeros(idx.len(), spec.n_gens());
    let mut total = 0.0;
    for (k, (&i, row)) in idx.iter().zip(&pass.rows).enumerate() {
        let row = match row {
            Ok(r) => r,
            Err(e) => return Err(ProxyError::InvalidModel(e.to_string()).into()),
        };
        let r = &records[i];
        let (parts, grad) = sample_loss(
            model.architecture(),
            spec,
            r.demand,
            &r.base_flow,
            &r.input.p_lo,
            &r.input.p_hi,
            &row.output,
            lambda,
        );
        total += parts.total();
        for (dst, v) in dl_dp.row_mut(k).iter_mut().zip(grad) {
            *dst = v * scale;
        }
    }
    Ok((total, model.backward(&inputs, &pass, &dl_dp)?))
}

/// Mean loss over `idx` in inference mode, plus per-row final dispatches.
pub fn mean_loss(
    model: &ProxyModel,
    spec: &GridSpec,
    set: &TrainSet,
    idx: &[usize],
    lambda: f64,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        let pass = model.forward(&batch_inputs(set, chunk), false)?;
        for (&i, row) in chunk.iter().zip(pass.rows) {
            let row = row?;
            let r = &set.records[i];
            let (parts, _) = sample_loss(
                model.architecture(),
                spec,
                r.demand,
                &r.base_flow,
                &r.input.p_lo,
                &r.input.p_hi,
                &row.output,
                lambda,
            );
            total += parts.total();
        }
    }
    Ok(total / idx.len() as f64)
}

/// Mean relative gap of the proxy's ED objective (energy + thermal, plus the
/// imbalance penalty for unbalanced outputs) over the oracle's, on `split`.
pub fn evaluate_gap(model: &ProxyModel, spec: &GridSpec, set: &TrainSet, split: Split) -> Result<f64, TrainError> {
    let idx = set.indices(split);
    if idx.is_empty() {
        return Err(TrainError::EmptySplit("evaluation"));
    }
    let mut gap = 0.0;
    for chunk in idx.chunks(256) {
        let outs = model.predict(&batch_inputs(set, chunk))?;
        for (&i, out) in chunk.iter().zip(outs) {
            let p = out?;
            let r = &set.records[i];
            let ev = crate::ed::evaluate(spec, &r.input.d, &p);
            gap += (ev.objective() + ev.cost_pb - r.oracle_cost) / r.oracle_cost.abs().max(1e-9);
        }
    }
    Ok(gap / idx.len() as f64)
}

/// One grid point: Adam with a plateau schedule and early stopping; the
/// parameters with the best validation loss are restored at the end.
pub fn train_run(
    spec: &GridSpec,
    set: &TrainSet,
    arch: Architecture,
    cfg: &TrainConfig,
    run: RunSpec,
) -> Result<RunResult, TrainError> {
    let train_idx = set.indices(Split::Train);
    let val_idx = set.indices(Split::Val);
    if train_idx.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_idx.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(run.index as u64);
    let mut model = ProxyModel::new(spec, arch, &cfg.proxy_options(run.hidden), &mut rng)?;
    let mut params = model.params();
    let mut adam = AdamState::new(params.len());
    let mut lr = run.lr;
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut since_cut = 0;
    let mut order = train_idx.clone();
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let clock = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss_sum, grads) = batch_loss_grad(&model, spec, &set.records, chunk, run.lambda, true)?;
            epoch_loss += loss_sum;
            if grads.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::DivergedTraining { epoch });
            }
            adam_step(&mut params, &grads, &mut adam, &AdamConfig::with_lr(lr));
            model.set_params(&params)?;
        }
        let train_loss = epoch_loss / order.len() as f64;
        let val_loss = mean_loss(&model, spec, set, &val_idx, run.lambda)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(TrainError::DivergedTraining { epoch });
        }
        log.push(EpochLog {
            epoch,
            lr,
            train_loss,
            val_loss,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if val_loss < best_val - cfg.min_rel_improvement * best_val.abs() || !best_val.is_finite() {
            best_val = val_loss;
            best_params.clone_from(&params);
            best_epoch = epoch;
            since_best = 0;
            since_cut = 0;
        } else {
            since_best += 1;
            since_cut += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
            if since_cut >= cfg.plateau_patience {
                lr /= cfg.lr_divisor;
                since_cut = 0;
            }
        }
    }
    model.set_params(&best_params)?;
    let selection_loss = if run.lambda == cfg.selection_lambda || arch == Architecture::E2elr {
        best_val
    } else {
        mean_loss(&model, spec, set, &val_idx, cfg.selection_lambda)?
    };
    Ok(RunResult {
        spec: run,
        log,
        best_epoch,
        best_val,
        selection_loss,
        model,
    })
}

/// Full grid search; returns the run with the lowest validation loss at the
/// selection λ. Runs are independent and execute on the ambient rayon pool.
pub fn train(spec: &GridSpec, set: &TrainSet, arch: Architecture, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    let runs: Vec<Result<RunResult, TrainError>> = cfg
        .runs(arch)
        .into_par_iter()
        .map(|r| {
            let res = train_run(spec, set, arch, cfg, r);
            if let Err(e) = &res {
                log::warn!("grid point {r:?} failed: {e}");
            }
            res
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, r) in runs.iter().enumerate() {
        if let Ok(r) = r {
            if best.is_none_or(|b| r.selection_loss < runs[b].as_ref().unwrap().selection_loss) {
                best = Some(i);
            }
        }
    }
    let best = best.ok_or(TrainError::AllRunsDiverged)?;
    let model = runs[best].as_ref().unwrap().model.clone();
    Ok(TrainOutcome { model, best, runs })
}
