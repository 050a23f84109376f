//! Interchangeable epsilon-prediction backbones. Inputs are plain feature
//! sequences: `(batch, horizon, dim)` noisy actions plus `(batch, tokens,
//! token_dim)` condition tokens (flattened for the U-Net).

mod modules;
mod transformer;
mod unet;

use alloc::vec::Vec;

use rand::Rng;

pub use modules::{sinusoidal, Conv, Dense, Norm, TimestepEmbedding};
pub use transformer::{TransformerConfig, TransformerDenoiser};
pub use unet::{UNet1d, UNetConfig};

use crate::autodiff::ops;
use crate::autodiff::{ModelParams, Session, Var};
use crate::error::{Error, Result};

/// Shapes a denoiser is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserShape {
    pub horizon: usize,
    /// Features per action time step.
    pub dim: usize,
    pub cond_tokens: usize,
    pub cond_token_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackboneConfig {
    UNet(UNetConfig),
    Transformer(TransformerConfig),
}

#[derive(Debug, Clone)]
pub enum Denoiser {
    UNet(UNet1d),
    Transformer(TransformerDenoiser),
}

impl Denoiser {
    pub fn new(p: &mut ModelParams, group: &str, cfg: &BackboneConfig, shape: DenoiserShape, rng: &mut impl Rng) -> Result<Self> {
        Ok(match cfg {
            BackboneConfig::UNet(c) => Denoiser::UNet(UNet1d::new(
                p,
                group,
                c.clone(),
                shape.horizon,
                shape.dim,
                shape.cond_tokens * shape.cond_token_dim,
                rng,
            )?),
            BackboneConfig::Transformer(c) => Denoiser::Transformer(TransformerDenoiser::new(
                p,
                group,
                c.clone(),
                shape.horizon,
                shape.dim,
                shape.cond_tokens,
                shape.cond_token_dim,
                rng,
            )?),
        })
    }

    /// `x`: `(B, horizon, dim)`, `cond`: `(B, tokens, token_dim)`; one step per batch row.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, cond: Var, ks: &[usize]) -> Result<Var> {
        match self {
            Denoiser::UNet(u) => {
                let b = s.tape.shape(cond)[0];
                let flat = ops::reshape(&mut s.tape, cond, &[b, u.cond_dim])?;
                u.forward(s, x, flat, ks)
            }
            Denoiser::Transformer(t) => t.forward(s, x, cond, ks),
        }
    }
}

impl BackboneConfig {
    /// Parameter count of a denoiser with this config, without building it.
    pub fn param_count(&self, shape: DenoiserShape) -> usize {
        match self {
            BackboneConfig::UNet(c) => unet_params(c, shape.dim, shape.cond_tokens * shape.cond_token_dim),
            BackboneConfig::Transformer(c) => transformer_params(c, shape),
        }
    }

    /// Variant of this config (U-Net widths and time embedding, or transformer
/// width and MLP ratio) whose parameter count is closest to `target`.
    pub fn matched_to(&self, target: usize, shape: DenoiserShape) -> Result<(BackboneConfig, usize)> {
        let mut best: Option<(BackboneConfig, usize)> = None;
        let mut consider = |cfg: BackboneConfig| {
            let n = cfg.param_count(shape);
            let better = match &best {
                None => true,
                Some((_, m)) => n.abs_diff(target) < m.abs_diff(target),
            };
            if better {
                best = Some((cfg, n));
            }
        };
        match self {
            BackboneConfig::UNet(c) => {
                let g = c.n_groups.max(1);
                let base0 = c.down_dims[0] as f64;
                for w0 in (1..=64).map(|i| i * g) {
                    let f = w0 as f64 / base0;
                    let dims: Vec<usize> = c
                        .down_dims
                        .iter()
                        .map(|&d| ((libm::round(f * d as f64) as usize).div_ceil(g) * g).max(g))
                        .collect();
                    for e in (2..=128).map(|i| 2 * i) {
                        consider(BackboneConfig::UNet(UNetConfig {
                            down_dims: dims.clone(),
                            time_dim: e,
                            ..c.clone()
                        }));
                    }
                }
            }
            BackboneConfig::Transformer(c) => {
                for d in (1..=128).map(|i| i * c.n_heads) {
                    for mlp_ratio in 1..=8 {
                        consider(BackboneConfig::Transformer(TransformerConfig {
                            d_model: d,
                            mlp_ratio,
                            ..c.clone()
                        }));
                    }
                }
            }
        }
        best.ok_or_else(|| Error::Config("no candidate backbone".into()))
    }
}

fn unet_params(c: &UNetConfig, dim: usize, cond_dim: usize) -> usize {
    let e = c.time_dim;
    let k = c.kernel;
    let cond = e + cond_dim;
    let time = e * 4 * e + 4 * e + 4 * e * e + e;
    let res = |cin: usize, cout: usize| {
        let mut n = cin * cout * k + cout + 2 * cout + cout * cout * k + cout + 2 * cout + cond * 2 * cout + 2 * cout;
        if cin != cout {
            n += cin * cout + cout;
        }
        n
    };
    let dims = &c.down_dims;
    let mut total = time;
    let mut cin = dim;
    for (i, &d) in dims.iter().enumerate() {
        total += res(cin, d) + res(d, d);
        if i + 1 != dims.len() {
            total += d * d * 3 + d;
        }
        cin = d;
    }
    let top = *dims.last().unwrap_or(&0);
    total += 2 * res(top, top);
    for i in (1..dims.len()).rev() {
        let (hi, lo) = (dims[i], dims[i - 1]);
        total += res(2 * hi, lo) + res(lo, lo) + lo * lo * 3 + lo;
    }
    let d0 = dims[0];
    total + d0 * d0 * k + d0 + 2 * d0 + d0 * dim + dim
}

fn transformer_params(c: &TransformerConfig, s: DenoiserShape) -> usize {
    let d = c.d_model;
    let h = c.mlp_ratio * d;
    let time = d * 4 * d + 4 * d + 4 * d * d + d;
    let embed = s.dim * d + d + s.horizon * d + s.cond_token_dim * d + d + s.cond_tokens * d;
    let layer = 4 * d + 4 * (d * d + d) + d * h + h + h * d + d;
    time + embed + c.n_layers * layer + 2 * d + d * s.dim + s.dim
}
