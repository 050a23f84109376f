use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::modules::{Conv, Dense, Norm, TimestepEmbedding};
use crate::autodiff::ops::{self, Activation};
use crate::autodiff::{ModelParams, Session, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    /// Channel width per level; each level after the first halves the horizon.
    pub down_dims: Vec<usize>,
    pub kernel: usize,
    pub n_groups: usize,
    pub time_dim: usize,
    /// Zero-initialise the output convolution.
    pub zero_head: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            down_dims: alloc::vec![64, 128, 256],
            kernel: 5,
            n_groups: 8,
            time_dim: 64,
            zero_head: false,
        }
    }
}

impl UNetConfig {
    pub fn downsample_factor(&self) -> usize {
        1 << self.down_dims.len().saturating_sub(1)
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.down_dims.is_empty() || self.kernel % 2 == 0 || self.time_dim < 2 {
            return Err(Error::Config(format!("invalid U-Net config {self:?}")));
        }
        if let Some(d) = self.down_dims.iter().find(|&&d| d % self.n_groups != 0) {
            return Err(Error::Config(format!("width {d} not divisible by {} groups", self.n_groups)));
        }
        if horizon == 0 || horizon % self.downsample_factor() != 0 {
            return Err(Error::Config(format!(
                "horizon {horizon} not divisible by the U-Net downsampling factor {}",
                self.downsample_factor()
            )));
        }
        Ok(())
    }
}

/// Conv, group norm, Mish.
#[derive(Debug, Clone)]
struct ConvBlock {
    conv: Conv,
    norm: Norm,
    groups: usize,
}

impl ConvBlock {
    fn new(p: &mut ModelParams, g: &str, name: &str, cin: usize, cout: usize, cfg: &UNetConfig, rng: &mut impl Rng) -> Self {
        Self {
            conv: Conv::new(p, g, &format!("{name}.conv"), cin, cout, cfg.kernel, 1, false, rng),
            norm: Norm::new(p, g, &format!("{name}.gn"), cout, rng),
            groups: cfg.n_groups,
        }
    }

    fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let h = self.conv.forward(s, x)?;
        let h = self.norm.group(s, h, self.groups)?;
        Ok(ops::activation(&mut s.tape, h, Activation::Mish))
    }
}

/// Two conv blocks with FiLM from the global condition in between.
#[derive(Debug, Clone)]
struct ResBlock {
    a: ConvBlock,
    b: ConvBlock,
    film: Dense,
    skip: Option<Conv>,
    cout: usize,
}

impl ResBlock {
    #[allow(clippy::too_many_arguments)]
    fn new(p: &mut ModelParams, g: &str, name: &str, cin: usize, cout: usize, cond: usize, cfg: &UNetConfig, rng: &mut impl Rng) -> Self {
        Self {
            a: ConvBlock::new(p, g, &format!("{name}.a"), cin, cout, cfg, rng),
            b: ConvBlock::new(p, g, &format!("{name}.b"), cout, cout, cfg, rng),
            film: Dense::new(p, g, &format!("{name}.film"), cond, 2 * cout, false, rng),
            skip: (cin != cout).then(|| Conv::new(p, g, &format!("{name}.skip"), cin, cout, 1, 1, false, rng)),
            cout,
        }
    }

    fn forward(&self, s: &mut Session<'_>, x: Var, cond: Var) -> Result<Var> {
        let h = self.a.forward(s, x)?;
        let c = ops::activation(&mut s.tape, cond, Activation::Mish);
        let c = self.film.forward(s, c)?;
        let scale = ops::slice(&mut s.tape, c, 1, 0, self.cout)?;
        let shift = ops::slice(&mut s.tape, c, 1, self.cout, self.cout)?;
        let h = ops::film(&mut s.tape, h, scale, shift)?;
        let h = self.b.forward(s, h)?;
        let r = match &self.skip {
            Some(conv) => conv.forward(s, x)?,
            None => x,
        };
        ops::add(&mut s.tape, h, r)
    }
}

#[derive(Debug, Clone)]
struct Level {
    r1: ResBlock,
    r2: ResBlock,
    resample: Option<Conv>,
}

/// Temporal U-Net over `(batch, horizon, dim)` sequences with FiLM conditioning.
#[derive(Debug, Clone)]
pub struct UNet1d {
    pub cfg: UNetConfig,
    pub horizon: usize,
    pub dim: usize,
    pub cond_dim: usize,
    time: TimestepEmbedding,
    downs: Vec<Level>,
    mids: [ResBlock; 2],
    ups: Vec<Level>,
    final_block: ConvBlock,
    head: Conv,
}

impl UNet1d {
    pub fn new(p: &mut ModelParams, group: &str, cfg: UNetConfig, horizon: usize, dim: usize, cond_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate(horizon)?;
        let g = group;
        let time = TimestepEmbedding::new(p, g, cfg.time_dim, rng);
        let cond = cfg.time_dim + cond_dim;
        let dims = &cfg.down_dims;
        let mut downs = Vec::new();
        let mut cin = dim;
        for (i, &d) in dims.iter().enumerate() {
            let last = i + 1 == dims.len();
            downs.push(Level {
                r1: ResBlock::new(p, g, &format!("down{i}.r1"), cin, d, cond, &cfg, rng),
                r2: ResBlock::new(p, g, &format!("down{i}.r2"), d, d, cond, &cfg, rng),
                resample: (!last).then(|| Conv::new(p, g, &format!("down{i}.ds"), d, d, 3, 2, false, rng)),
            });
            cin = d;
        }
        let top = *dims.last().expect("validated");
        let mids = [
            ResBlock::new(p, g, "mid0", top, top, cond, &cfg, rng),
            ResBlock::new(p, g, "mid1", top, top, cond, &cfg, rng),
        ];
        let mut ups = Vec::new();
        for i in (1..dims.len()).rev() {
            let (hi, lo) = (dims[i], dims[i - 1]);
            ups.push(Level {
                r1: ResBlock::new(p, g, &format!("up{i}.r1"), 2 * hi, lo, cond, &cfg, rng),
                r2: ResBlock::new(p, g, &format!("up{i}.r2"), lo, lo, cond, &cfg, rng),
                resample: Some(Conv::new(p, g, &format!("up{i}.us"), lo, lo, 3, 1, false, rng)),
            });
        }
        let final_block = ConvBlock::new(p, g, "final", dims[0], dims[0], &cfg, rng);
        let head = Conv::new(p, g, "head", dims[0], dim, 1, 1, cfg.zero_head, rng);
        Ok(Self {
            cfg,
            horizon,
            dim,
            cond_dim,
            time,
            downs,
            mids,
            ups,
            final_block,
            head,
        })
    }

    /// `x`: `(B, horizon, dim)`, `cond`: `(B, cond_dim)`; returns `(B, horizon, dim)`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, cond: Var, ks: &[usize]) -> Result<Var> {
        let xs = s.tape.shape(x).to_vec();
        let b = xs[0];
        if xs != [b, self.horizon, self.dim] || s.tape.shape(cond) != [b, self.cond_dim] || ks.len() != b {
            return Err(shape_err!(
                "unet: x {xs:?}, cond {:?}, {} steps; expected (B, {}, {}) and (B, {})",
                s.tape.shape(cond),
                ks.len(),
                self.horizon,
                self.dim,
                self.cond_dim
            ));
        }
        let te = self.time.forward(s, ks)?;
        let cond = ops::concat(&mut s.tape, &[te, cond], 1)?;
        let mut h = ops::swap_axes(&mut s.tape, x, 1)?;
        let mut skips = Vec::new();
        for lvl in &self.downs {
            h = lvl.r1.forward(s, h, cond)?;
            h = lvl.r2.forward(s, h, cond)?;
            skips.push(h);
            if let Some(ds) = &lvl.resample {
                h = ds.forward(s, h)?;
            }
        }
        for m in &self.mids {
            h = m.forward(s, h, cond)?;
        }
        for lvl in &self.ups {
            let skip = skips.pop().expect("one skip per level");
            h = ops::concat(&mut s.tape, &[h, skip], 1)?;
            h = lvl.r1.forward(s, h, cond)?;
            h = lvl.r2.forward(s, h, cond)?;
            let up = ops::upsample2(&mut s.tape, h);
            h = lvl.resample.as_ref().expect("up levels resample").forward(s, up)?;
        }
        let h = self.final_block.forward(s, h)?;
        let h = self.head.forward(s, h)?;
        ops::swap_axes(&mut s.tape, h, 1)
    }
}
