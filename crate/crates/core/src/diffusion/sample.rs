use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::PolicyModel;
use super::noise::recover_slice;
use super::schedule::NoiseSchedule;
use crate::autodiff::{ModelParams, Session, Tensor};
use crate::error::Result;

/// DDPM ancestral sampling of `n` values. `eps_fn(z, k)` predicts the noise in
/// `z` at step `k`; ẑ0 is clamped to `[-clip, clip]` when `clip` is set.
pub fn ddpm_sample(
    schedule: &NoiseSchedule,
    n: usize,
    clip: Option<f64>,
    rng: &mut impl Rng,
    mut eps_fn: impl FnMut(&[f64], usize) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    for k in (1..=schedule.k_max()).rev() {
        let eps_hat = eps_fn(&z, k)?;
        let mut z0 = recover_slice(&z, &eps_hat, k, schedule)?;
        if let Some(c) = clip {
            z0.iter_mut().for_each(|v| *v = v.clamp(-c, c));
        }
        let ab = schedule.alpha_bar(k)?;
        let ab_prev = schedule.alpha_bar(k - 1)?;
        let beta = schedule.beta(k)?;
        let c0 = libm::sqrt(ab_prev) * beta / (1.0 - ab);
        let ck = libm::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
        let sigma = libm::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab));
        for (zi, z0i) in z.iter_mut().zip(&z0) {
            *zi = c0 * z0i + ck * *zi;
        }
        if k > 1 {
            for zi in z.iter_mut() {
                let e: f64 = StandardNormal.sample(rng);
                *zi += sigma * e;
            }
        }
    }
    Ok(z)
}

/// Draws a batch of action sequences for observations `obs` (batch first).
/// Returns actions in the model's per-sample action shape.
pub fn sample_actions(
    model: &PolicyModel,
    params: &ModelParams,
    obs: &Tensor,
    schedule: &NoiseSchedule,
    clip: bool,
    seed: u64,
) -> Result<Tensor> {
    let b = model.check_batch(obs, None)?;
    let cond = {
        let mut s = Session::inference(params);
        let o = s.input(obs.clone());
        let c = model.condition(&mut s, o)?;
        s.value(c).clone()
    };
    let latent = [b, model.h_p(), model.latent_dim()];
    let n = latent.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = ddpm_sample(schedule, n, clip.then_some(1.0), &mut rng, |z, k| {
        let mut s = Session::inference(params);
        let zv = s.input(Tensor::new(&latent, z.to_vec()));
        let cv = s.input(cond.clone());
        let ks = alloc::vec![k; b];
        let e = model.predict_noise(&mut s, zv, cv, &ks)?;
        Ok(s.value(e).data().to_vec())
    })?;
    let mut s = Session::inference(params);
    let zv = s.input(Tensor::new(&latent, z));
    let out = model.decode(&mut s, zv)?;
    Ok(s.value(out).clone())
}
