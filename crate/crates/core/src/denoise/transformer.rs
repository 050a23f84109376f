use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::modules::{Dense, Norm, TimestepEmbedding};
use crate::autodiff::ops::{self, Activation};
use crate::autodiff::{Init, ModelParams, ParamId, Session, Var};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub zero_head: bool,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            mlp_ratio: 4,
            zero_head: false,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: Norm,
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
    ln2: Norm,
    fc1: Dense,
    fc2: Dense,
}

/// Pre-norm transformer over action tokens with prepended condition tokens.
#[derive(Debug, Clone)]
pub struct TransformerDenoiser {
    pub cfg: TransformerConfig,
    pub horizon: usize,
    pub dim: usize,
    pub cond_tokens: usize,
    pub cond_token_dim: usize,
    time: TimestepEmbedding,
    act_in: Dense,
    act_pos: ParamId,
    cond_in: Dense,
    cond_pos: ParamId,
    layers: Vec<Layer>,
    ln_f: Norm,
    head: Dense,
}

impl TransformerDenoiser {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut ModelParams,
        group: &str,
        cfg: TransformerConfig,
        horizon: usize,
        dim: usize,
        cond_tokens: usize,
        cond_token_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let d = cfg.d_model;
        if d == 0 || cfg.n_heads == 0 || d % cfg.n_heads != 0 || cfg.n_layers == 0 || horizon == 0 || cond_tokens == 0 {
            return Err(Error::Config(format!("invalid transformer config {cfg:?}")));
        }
        let g = group;
        let time = TimestepEmbedding::new(p, g, d, rng);
        let act_in = Dense::new(p, g, "act_in", dim, d, false, rng);
        let act_pos = p.add(g, "act_pos", &[horizon, d], Init::Normal(0.02), rng);
        let cond_in = Dense::new(p, g, "cond_in", cond_token_dim, d, false, rng);
        let cond_pos = p.add(g, "cond_pos", &[cond_tokens, d], Init::Normal(0.02), rng);
        let hidden = cfg.mlp_ratio * d;
        let layers = (0..cfg.n_layers)
            .map(|i| Layer {
                ln1: Norm::new(p, g, &format!("l{i}.ln1"), d, rng),
                q: Dense::new(p, g, &format!("l{i}.q"), d, d, false, rng),
                k: Dense::new(p, g, &format!("l{i}.k"), d, d, false, rng),
                v: Dense::new(p, g, &format!("l{i}.v"), d, d, false, rng),
                o: Dense::new(p, g, &format!("l{i}.o"), d, d, false, rng),
                ln2: Norm::new(p, g, &format!("l{i}.ln2"), d, rng),
                fc1: Dense::new(p, g, &format!("l{i}.fc1"), d, hidden, false, rng),
                fc2: Dense::new(p, g, &format!("l{i}.fc2"), hidden, d, false, rng),
            })
            .collect();
        let ln_f = Norm::new(p, g, "ln_f", d, rng);
        let head = Dense::new(p, g, "head", d, dim, cfg.zero_head, rng);
        Ok(Self {
            cfg,
            horizon,
            dim,
            cond_tokens,
            cond_token_dim,
            time,
            act_in,
            act_pos,
            cond_in,
            cond_pos,
            layers,
            ln_f,
            head,
        })
    }

    /// `x`: `(B, horizon, dim)`, `cond`: `(B, cond_tokens, cond_token_dim)`.
    pub fn forward(&self, s: &mut Session<'_>, x: Var, cond: Var, ks: &[usize]) -> Result<Var> {
        let xs = s.tape.shape(x).to_vec();
        let b = xs[0];
        if xs != [b, self.horizon, self.dim] || s.tape.shape(cond) != [b, self.cond_tokens, self.cond_token_dim] || ks.len() != b {
            return Err(shape_err!(
                "transformer: x {xs:?}, cond {:?}, {} steps",
                s.tape.shape(cond),
                ks.len()
            ));
        }
        let te = self.time.forward(s, ks)?;
        let a = self.act_in.forward(s, x)?;
        let ap = s.param(self.act_pos);
        let a = ops::add_broadcast(&mut s.tape, a, ap, 0)?;
        let c = self.cond_in.forward(s, cond)?;
        let cp = s.param(self.cond_pos);
        let c = ops::add_broadcast(&mut s.tape, c, cp, 0)?;
        let h = ops::concat(&mut s.tape, &[c, a], 1)?;
        let mut h = ops::add_broadcast(&mut s.tape, h, te, 1)?;
        for l in &self.layers {
            let n = l.ln1.layer(s, h)?;
            let q = l.q.forward(s, n)?;
            let k = l.k.forward(s, n)?;
            let v = l.v.forward(s, n)?;
            let att = ops::multi_head_attention(&mut s.tape, q, k, v, self.cfg.n_heads)?;
            let att = l.o.forward(s, att)?;
            h = ops::add(&mut s.tape, h, att)?;
            let n = l.ln2.layer(s, h)?;
            let f = l.fc1.forward(s, n)?;
            let f = ops::activation(&mut s.tape, f, Activation::Gelu);
            let f = l.fc2.forward(s, f)?;
            h = ops::add(&mut s.tape, h, f)?;
        }
        let h = self.ln_f.layer(s, h)?;
        let h = ops::slice(&mut s.tape, h, 1, self.cond_tokens, self.horizon)?;
        self.head.forward(s, h)
    }
}
