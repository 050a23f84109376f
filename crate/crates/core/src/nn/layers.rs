use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::ops::{
    add_grade0, bilinear_features, channel, equi_layernorm, equi_linear, gated_gelu, mv_attention,
    LAYERNORM_EPS, N_E0_WEIGHTS, N_GRADE_WEIGHTS,
};
use crate::autodiff::ops::{add, concat, reshape};
use crate::autodiff::{Init, ModelParams, ParamId, Session, Var};
use crate::error::{shape_err, Error, Result};
use crate::pga::DIM;

/// Grade-wise linear map with e0 mixing, parameters stored in a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct EquiLinear {
    pub cin: usize,
    pub cout: usize,
    pub w: ParamId,
    pub v: ParamId,
}

impl EquiLinear {
    /// Random init (`w ~ N(0, 1/cin)`, `v ~ N(0, 0.1/cin)`) or all zeros.
    pub fn new(params: &mut ModelParams, group: &str, name: &str, cin: usize, cout: usize, zero: bool, rng: &mut impl Rng) -> Self {
        let std = 1.0 / libm::sqrt(cin as f64);
        let (iw, iv) = if zero {
            (Init::Zeros, Init::Zeros)
        } else {
            (Init::Normal(std), Init::Normal(0.1 * std))
        };
        let w = params.add(group, &format!("{name}.w"), &[cout, cin, N_GRADE_WEIGHTS], iw, rng);
        let v = params.add(group, &format!("{name}.v"), &[cout, cin, N_E0_WEIGHTS], iv, rng);
        Self { cin, cout, w, v }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, v) = (s.param(self.w), s.param(self.v));
        equi_linear(&mut s.tape, x, w, v)
    }
}

/// Geometric product and join features from two projections of the input,
/// projected back to `channels`.
#[derive(Debug, Clone)]
pub struct GeometricBilinear {
    pub left: EquiLinear,
    pub right: EquiLinear,
    pub proj: EquiLinear,
}

impl GeometricBilinear {
    pub fn new(params: &mut ModelParams, group: &str, name: &str, channels: usize, rng: &mut impl Rng) -> Self {
        Self {
            left: EquiLinear::new(params, group, &format!("{name}.left"), channels, channels, false, rng),
            right: EquiLinear::new(params, group, &format!("{name}.right"), channels, channels, false, rng),
            proj: EquiLinear::new(params, group, &format!("{name}.proj"), 2 * channels, channels, false, rng),
        }
    }

    /// `reference`: `(..., 16)`, one multivector per token.
    pub fn forward(&self, s: &mut Session<'_>, h: Var, reference: Var) -> Result<Var> {
        let x = self.left.forward(s, h)?;
        let y = self.right.forward(s, h)?;
        let f = bilinear_features(&mut s.tape, x, y, reference)?;
        self.proj.forward(s, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PgatrConfig {
    pub n_blocks: usize,
    pub channels: usize,
    pub n_heads: usize,
}

impl Default for PgatrConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            channels: 16,
            n_heads: 4,
        }
    }
}

impl PgatrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::Config("P-GATr needs at least one block".into()));
        }
        if self.channels == 0 || self.n_heads == 0 || self.channels % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "{} channels not divisible into {} heads",
                self.channels, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Pre-norm residual block: attention branch, then bilinear/gated-GELU branch.
#[derive(Debug, Clone)]
pub struct PgatrBlock {
    pub heads: usize,
    pub q: EquiLinear,
    pub k: EquiLinear,
    pub v: EquiLinear,
    pub attn_out: EquiLinear,
    pub bilinear: GeometricBilinear,
    pub mlp_out: EquiLinear,
}

impl PgatrBlock {
    /// `zero_out` zero-initialises both residual projections.
    pub fn new(params: &mut ModelParams, group: &str, name: &str, cfg: &PgatrConfig, zero_out: bool, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            heads: cfg.n_heads,
            q: EquiLinear::new(params, group, &format!("{name}.q"), c, c, false, rng),
            k: EquiLinear::new(params, group, &format!("{name}.k"), c, c, false, rng),
            v: EquiLinear::new(params, group, &format!("{name}.v"), c, c, false, rng),
            attn_out: EquiLinear::new(params, group, &format!("{name}.attn_out"), c, c, zero_out, rng),
            bilinear: GeometricBilinear::new(params, group, &format!("{name}.bilinear"), c, rng),
            mlp_out: EquiLinear::new(params, group, &format!("{name}.mlp_out"), c, c, zero_out, rng),
        })
    }

    /// `x`: `(batch, tokens, C, 16)`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[2] != self.q.cin || shape[3] != DIM {
            return Err(shape_err!("pgatr_block: expected (B, T, {}, 16), got {shape:?}", self.q.cin));
        }
        let h = equi_layernorm(&mut s.tape, x, LAYERNORM_EPS)?;
        let q = self.q.forward(s, h)?;
        let k = self.k.forward(s, h)?;
        let v = self.v.forward(s, h)?;
        let a = mv_attention(&mut s.tape, q, k, v, self.heads)?;
        let a = self.attn_out.forward(s, a)?;
        let x = add(&mut s.tape, x, a)?;

        let reference = channel(&mut s.tape, x, 0)?;
        let h = equi_layernorm(&mut s.tape, x, LAYERNORM_EPS)?;
        let f = self.bilinear.forward(s, h, reference)?;
        let f = gated_gelu(&mut s.tape, f)?;
        let f = self.mlp_out.forward(s, f)?;
        add(&mut s.tape, x, f)
    }
}

/// Stack of [`PgatrBlock`]s over a fixed number of single-multivector tokens,
/// with a lift to `channels`, learned per-token scalar markers and a
/// projection back to one channel that also sees the raw input.
#[derive(Debug, Clone)]
pub struct PgatrNet {
    pub cfg: PgatrConfig,
    pub time: usize,
    pub width: usize,
    pub lift: EquiLinear,
    pub markers: ParamId,
    pub blocks: Vec<PgatrBlock>,
    pub out: EquiLinear,
}

impl PgatrNet {
    /// Network over `(time, width)` multivector inputs.
    pub fn new(params: &mut ModelParams, group: &str, cfg: PgatrConfig, time: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        if time == 0 || width == 0 {
            return Err(Error::Config(format!("P-GATr token grid ({time}, {width}) is empty")));
        }
        let c = cfg.channels;
        let lift = EquiLinear::new(params, group, "lift", 1, c, false, rng);
        let markers = params.add(group, "markers", &[time * width, c], Init::Normal(0.1), rng);
        let blocks = (0..cfg.n_blocks)
            .map(|i| PgatrBlock::new(params, group, &format!("block{i}"), &cfg, false, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = EquiLinear::new(params, group, "out", c + 1, 1, false, rng);
        Ok(Self {
            cfg,
            time,
            width,
            lift,
            markers,
            blocks,
            out,
        })
    }

    /// `x`: `(batch, time, width, 16)`; output has the same shape.
    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let shape = s.tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.time || shape[2] != self.width || shape[3] != DIM {
            return Err(shape_err!(
                "P-GATr expects (B, {}, {}, 16), got {shape:?}",
                self.time,
                self.width
            ));
        }
        let b = shape[0];
        let tokens = self.time * self.width;
        let x1 = reshape(&mut s.tape, x, &[b, tokens, 1, DIM])?;
        let mut h = self.lift.forward(s, x1)?;
        let m = s.param(self.markers);
        h = add_grade0(&mut s.tape, h, m)?;
        for blk in &self.blocks {
            h = blk.forward(s, h)?;
        }
        let h = concat(&mut s.tape, &[h, x1], 2)?;
        let o = self.out.forward(s, h)?;
        reshape(&mut s.tape, o, &shape)
    }
}
