use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::PolicyModel;
use super::noise::{mix_coefficients, ALPHA_BAR_GUARD};
use super::schedule::{NoiseSchedule, StagedLossConfig};
use crate::autodiff::ops;
use crate::autodiff::{ModelParams, ParamGrads, Session, Tensor, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    pub staged: StagedLossConfig,
    /// Stop decoder-loss gradients at ẑ0 so only the decoder learns from it.
    pub detach_decoder_input: bool,
    /// Clamp ẑ0 to [-1, 1] before decoding (training and sampling).
    pub clip_z0: bool,
}

impl DiffusionConfig {
    pub fn new(eta: f64, k_max: usize) -> Result<Self> {
        Ok(Self {
            staged: StagedLossConfig::new(eta, k_max)?,
            detach_decoder_input: true,
            clip_z0: true,
        })
    }
}

/// Observations and ground-truth actions, batch first.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Tensor,
    pub actions: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l_ed: Var,
    pub l_dec: Var,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub l_ed: f64,
    pub l_dec: f64,
    pub l_total: f64,
    pub ks: Vec<usize>,
    pub grads: ParamGrads,
}

/// Per-entry factors repeating one value per batch row.
fn per_row(ks: &[usize], row_len: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    ks.iter().flat_map(|&k| core::iter::repeat(f(k)).take(row_len)).collect()
}

#[allow(clippy::too_many_arguments)]
/// Records both losses on `s` for steps `ks` (one per row) and noise `eps`.
pub fn loss_graph(
    model: &PolicyModel,
    s: &mut Session<'_>,
    obs: Var,
    actions: Var,
    schedule: &NoiseSchedule,
    cfg: &DiffusionConfig,
    ks: &[usize],
    eps: &[f64],
) -> Result<LossVars> {
    let b = s.tape.shape(obs)[0];
    if ks.len() != b {
        return Err(shape_err!("{} steps for batch of {b}", ks.len()));
    }
    let mut ab = Vec::with_capacity(b);
    for &k in ks {
        if k == 0 {
            return Err(Error::StepOutOfRange { k, k_max: schedule.k_max() });
        }
        ab.push(mix_coefficients(schedule, k)?);
    }
    let cond = model.condition(s, obs)?;
    let z0 = model.clean_latent(s, actions)?;
    let shape = s.tape.shape(z0).to_vec();
    let n = s.tape.value(z0).len();
    if eps.len() != n {
        return Err(shape_err!("noise has {} entries, latent {n}", eps.len()));
    }
    let row = n / b;
    let sig: Vec<f64> = per_row(&(0..b).collect::<Vec<_>>(), row, |i| ab[i].0);
    let za = ops::scale_each(&mut s.tape, z0, sig)?;
    let noise: Vec<f64> = eps.iter().enumerate().map(|(i, e)| ab[i / row].1 * e).collect();
    let zk = ops::add_const(&mut s.tape, za, &noise)?;
    let eps_hat = model.predict_noise(s, zk, cond, ks)?;
    let eps_v = s.input(Tensor::new(&shape, eps.to_vec()));
    let l_ed = ops::mse(&mut s.tape, eps_hat, eps_v)?;

    let active: Vec<usize> = (0..b).filter(|&i| cfg.staged.active(ks[i])).collect();
    let l_dec = if !model.has_decoder() || active.is_empty() {
        s.input(Tensor::scalar(0.0))
    } else {
        for &i in &active {
            let a = ab[i].0 * ab[i].0;
            if a <= ALPHA_BAR_GUARD {
                return Err(Error::DivisionGuard { alpha_bar: a });
            }
        }
        let (zk_d, eh_d) = if cfg.detach_decoder_input {
            (ops::detach(&mut s.tape, zk), ops::detach(&mut s.tape, eps_hat))
        } else {
            (zk, eps_hat)
        };
        let zk_d = ops::gather_rows(&mut s.tape, zk_d, &active)?;
        let eh_d = ops::gather_rows(&mut s.tape, eh_d, &active)?;
        let inv: Vec<f64> = active.iter().flat_map(|&i| core::iter::repeat(1.0 / ab[i].0).take(row)).collect();
        let ratio: Vec<f64> = active.iter().flat_map(|&i| core::iter::repeat(ab[i].1 / ab[i].0).take(row)).collect();
        let a = ops::scale_each(&mut s.tape, zk_d, inv)?;
        let c = ops::scale_each(&mut s.tape, eh_d, ratio)?;
        let mut z0_hat = ops::sub(&mut s.tape, a, c)?;
        if cfg.clip_z0 {
            z0_hat = ops::clamp(&mut s.tape, z0_hat, -1.0, 1.0);
        }
        let decoded = model.decode(s, z0_hat)?;
        let target = ops::gather_rows(&mut s.tape, actions, &active)?;
        let l = ops::mse(&mut s.tape, decoded, target)?;
        ops::scale(&mut s.tape, l, active.len() as f64 / b as f64)
    };
    let total = ops::add(&mut s.tape, l_ed, l_dec)?;
    Ok(LossVars { l_ed, l_dec, total })
}

/// One training step with given steps and noise.
pub fn train_step_with(
    model: &PolicyModel,
    params: &ModelParams,
    batch: &Batch,
    schedule: &NoiseSchedule,
    cfg: &DiffusionConfig,
    ks: &[usize],
    eps: &[f64],
) -> Result<StepOutput> {
    model.check_batch(&batch.obs, Some(&batch.actions))?;
    let mut s = Session::train(params);
    let obs = s.input(batch.obs.clone());
    let actions = s.input(batch.actions.clone());
    let lv = loss_graph(model, &mut s, obs, actions, schedule, cfg, ks, eps)?;
    let grads = s.backward(lv.total)?;
    let scalar = |v: Var| s.value(v).data()[0];
    Ok(StepOutput {
        l_ed: scalar(lv.l_ed),
        l_dec: scalar(lv.l_dec),
        l_total: scalar(lv.total),
        ks: ks.to_vec(),
        grads,
    })
}

/// Samples `k ~ U[1, K_max]` per batch row and unit Gaussian noise, then runs
/// [`train_step_with`].
pub fn train_step(
    model: &PolicyModel,
    params: &ModelParams,
    batch: &Batch,
    schedule: &NoiseSchedule,
    cfg: &DiffusionConfig,
    rng: &mut impl Rng,
) -> Result<StepOutput> {
    let b = model.check_batch(&batch.obs, Some(&batch.actions))?;
    let ks: Vec<usize> = (0..b).map(|_| rng.gen_range(1..=schedule.k_max())).collect();
    let n = b * model.h_p() * model.latent_dim();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    train_step_with(model, params, batch, schedule, cfg, &ks, &eps)
}
