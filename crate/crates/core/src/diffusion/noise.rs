use alloc::vec::Vec;

use super::schedule::{NoiseSchedule, StagedLossConfig};
use crate::error::{shape_err, Error, Result};
use crate::mvstack::MvStack;

/// ᾱ below this cannot be inverted.
pub const ALPHA_BAR_GUARD: f64 = 1e-12;

/// `(sqrt(ᾱ_k), sqrt(1 - ᾱ_k))`.
pub fn mix_coefficients(s: &NoiseSchedule, k: usize) -> Result<(f64, f64)> {
    let a = s.alpha_bar(k)?;
    Ok((libm::sqrt(a), libm::sqrt(1.0 - a)))
}

/// Slice form of [`forward_noise`].
pub fn noise_slice(z0: &[f64], eps: &[f64], k: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    if z0.len() != eps.len() {
        return Err(shape_err!("forward_noise: {} vs {} entries", z0.len(), eps.len()));
    }
    let (a, b) = mix_coefficients(s, k)?;
    Ok(z0.iter().zip(eps).map(|(z, e)| a * z + b * e).collect())
}

/// Slice form of [`recover_z0`].
pub fn recover_slice(zk: &[f64], eps_hat: &[f64], k: usize, s: &NoiseSchedule) -> Result<Vec<f64>> {
    if zk.len() != eps_hat.len() {
        return Err(shape_err!("recover_z0: {} vs {} entries", zk.len(), eps_hat.len()));
    }
    let alpha_bar = s.alpha_bar(k)?;
    if alpha_bar <= ALPHA_BAR_GUARD {
        return Err(Error::DivisionGuard { alpha_bar });
    }
    let (a, b) = (libm::sqrt(alpha_bar), libm::sqrt(1.0 - alpha_bar));
    Ok(zk.iter().zip(eps_hat).map(|(z, e)| (z - b * e) / a).collect())
}

fn same(a: &MvStack, b: &MvStack, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

/// `sqrt(ᾱ_k) z0 + sqrt(1 - ᾱ_k) eps`.
pub fn forward_noise(z0: &MvStack, k: usize, eps: &MvStack, s: &NoiseSchedule) -> Result<MvStack> {
    same(z0, eps, "forward_noise")?;
    MvStack::new(z0.time(), z0.channels(), noise_slice(z0.data(), eps.data(), k, s)?)
}

/// `(z_k - sqrt(1 - ᾱ_k) eps_hat) / sqrt(ᾱ_k)`.
pub fn recover_z0(zk: &MvStack, eps_hat: &MvStack, k: usize, s: &NoiseSchedule) -> Result<MvStack> {
    same(zk, eps_hat, "recover_z0")?;
    MvStack::new(zk.time(), zk.channels(), recover_slice(zk.data(), eps_hat.data(), k, s)?)
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len().max(1) as f64
}

/// Mean squared error between predicted and true noise.
pub fn loss_encode_denoise(eps_hat: &MvStack, eps: &MvStack) -> Result<f64> {
    same(eps_hat, eps, "loss_encode_denoise")?;
    Ok(mse(eps_hat.data(), eps.data()))
}

/// Mean squared error when `k >= K_thresh`, otherwise 0.
pub fn loss_decoder(decoded: &MvStack, target: &MvStack, k: usize, cfg: &StagedLossConfig) -> Result<f64> {
    same(decoded, target, "loss_decoder")?;
    if !cfg.active(k) {
        return Ok(0.0);
    }
    Ok(mse(decoded.data(), target.data()))
}

pub fn total_loss(l_ed: f64, l_dec: f64) -> f64 {
    l_ed + l_dec
}
