//! Rigid-motion equivariance probes for the P-GATr layers.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{PgatrBlock, PgatrConfig, PgatrNet};
use super::{
    decode_actions, encode_obs, equi_layernorm, equi_linear, gated_gelu, geometric_bilinear, mv_attention,
    mv_attention_weights, pgatr_block, EquiLinearParams,
};
use crate::autodiff::ModelParams;
use crate::error::Result;
use crate::mvstack::MvStack;
use crate::pga::{Multivector, UnitQuaternion, Versor, DIM};

/// Tolerance factor `c` in `|L(rx) - rL(x)| <= c (1 + |L(x)|)`.
pub const EQUIVARIANCE_TOL: f64 = 1e-5;

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Rotor, translator, or translator after rotor, chosen uniformly.
pub fn random_motion(rng: &mut impl Rng) -> Versor {
    let q = UnitQuaternion::normalize(gauss(rng), gauss(rng), gauss(rng), gauss(rng)).unwrap_or(UnitQuaternion::IDENTITY);
    let d = [gauss(rng), gauss(rng), gauss(rng)];
    match rng.gen_range(0..3) {
        0 => Versor::rotor(q),
        1 => Versor::translator(d),
        _ => Versor::translator(d).compose(&Versor::rotor(q)),
    }
}

pub fn random_stack(rng: &mut impl Rng, time: usize, channels: usize) -> MvStack {
    let data = (0..time * channels * DIM).map(|_| gauss(rng)).collect();
    MvStack::new(time, channels, data).expect("finite")
}

fn random_vec(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * gauss(rng)).collect()
}

pub fn random_equi_linear(rng: &mut impl Rng, cin: usize, cout: usize) -> EquiLinearParams {
    EquiLinearParams::new(cin, cout, random_vec(rng, cout * cin * 5, 1.0), random_vec(rng, cout * cin * 4, 1.0))
        .expect("consistent shapes")
}

pub fn act(v: &Versor, x: &MvStack) -> MvStack {
    x.map(|m: &Multivector| v.apply(m))
}

/// `|L(rx) - rL(x)| / (1 + |L(x)|)` using the coefficient norm over the whole stack.
pub fn relative_error(f: impl Fn(&MvStack) -> Result<MvStack>, v: &Versor, x: &MvStack) -> Result<f64> {
    let lx = f(x)?;
    let lrx = f(&act(v, x))?;
    let rlx = act(v, &lx);
    let diff: f64 = lrx.data().iter().zip(rlx.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(libm::sqrt(diff) / (1.0 + lx.norm()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivarianceResult {
    pub layer: String,
    pub trials: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

fn record(layer: &str, trials: usize, worst: f64) -> EquivarianceResult {
    EquivarianceResult {
        layer: layer.to_string(),
        trials,
        max_rel_err: worst,
        pass: worst <= EQUIVARIANCE_TOL,
    }
}

/// Every layer plus a default-size encoder and decoder, each against `trials`
/// random motions with fresh random parameters per trial. The last entry is
/// the attention-weight invariance (absolute difference, bound 1e-6).
pub fn suite(trials: usize, seed: u64) -> Result<Vec<EquivarianceResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (t, c) = (3, 4);

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = random_equi_linear(&mut rng, c, 3);
        let (x, v) = (random_stack(&mut rng, t, c), random_motion(&mut rng));
        worst = worst.max(relative_error(|s| equi_linear(&p, s), &v, &x)?);
    }
    out.push(record("equi_linear", trials, worst));

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let p = random_equi_linear(&mut rng, 2 * c, c);
        let x = random_stack(&mut rng, t, c);
        let y = random_stack(&mut rng, t, c);
        let r = random_stack(&mut rng, t, c);
        let v = random_motion(&mut rng);
        let lx = geometric_bilinear(&p, &x, &y, &r)?;
        let lrx = geometric_bilinear(&p, &act(&v, &x), &act(&v, &y), &act(&v, &r))?;
        let rlx = act(&v, &lx);
        let diff: f64 = lrx.data().iter().zip(rlx.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(libm::sqrt(diff) / (1.0 + lx.norm()));
    }
    out.push(record("geometric_bilinear", trials, worst));

    let mut worst: f64 = 0.0;
    let mut worst_w: f64 = 0.0;
    for _ in 0..trials {
        let q = random_stack(&mut rng, t, c);
        let k = random_stack(&mut rng, t, c);
        let vv = random_stack(&mut rng, t, c);
        let m = random_motion(&mut rng);
        let lx = mv_attention(&q, &k, &vv, 2)?;
        let lrx = mv_attention(&act(&m, &q), &act(&m, &k), &act(&m, &vv), 2)?;
        let rlx = act(&m, &lx);
        let diff: f64 = lrx.data().iter().zip(rlx.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        worst = worst.max(libm::sqrt(diff) / (1.0 + lx.norm()));
        let w0 = mv_attention_weights(&q, &k, 2)?;
        let w1 = mv_attention_weights(&act(&m, &q), &act(&m, &k), 2)?;
        let dw = w0.iter().zip(&w1).map(|(a, b)| libm::fabs(a - b)).fold(0.0, f64::max);
        worst_w = worst_w.max(dw);
    }
    out.push(record("mv_attention", trials, worst));

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (x, v) = (random_stack(&mut rng, t, c), random_motion(&mut rng));
        worst = worst.max(relative_error(gated_gelu, &v, &x)?);
    }
    out.push(record("gated_gelu", trials, worst));

    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (x, v) = (random_stack(&mut rng, t, c), random_motion(&mut rng));
        worst = worst.max(relative_error(equi_layernorm, &v, &x)?);
    }
    out.push(record("equi_layernorm", trials, worst));

    let cfg = PgatrConfig {
        n_blocks: 1,
        channels: c,
        n_heads: 2,
    };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let mut params = ModelParams::new();
        let blk = PgatrBlock::new(&mut params, "g", "b", &cfg, false, &mut rng)?;
        let (x, v) = (random_stack(&mut rng, t, c), random_motion(&mut rng));
        worst = worst.max(relative_error(|s| pgatr_block(&blk, &params, s), &v, &x)?);
    }
    out.push(record("pgatr_block", trials, worst));

    // Full default-size encoder (N = 4, 16 channels, 4 heads) over (2, 5) tokens
    // and decoder over (4, 3) tokens; parameters drawn once per trial.
    let cfg = PgatrConfig::default();
    let mut worst_e: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for _ in 0..trials {
        let mut params = ModelParams::new();
        let enc = PgatrNet::new(&mut params, "encoder", cfg, 2, 5, &mut rng)?;
        let dec = PgatrNet::new(&mut params, "decoder", cfg, 4, 3, &mut rng)?;
        let v = random_motion(&mut rng);
        let x = random_stack(&mut rng, 2, 5);
        worst_e = worst_e.max(relative_error(|s| encode_obs(&enc, &params, s), &v, &x)?);
        let z = random_stack(&mut rng, 4, 3);
        worst_d = worst_d.max(relative_error(|s| decode_actions(&dec, &params, s), &v, &z)?);
    }
    out.push(record("encoder", trials, worst_e));
    out.push(record("decoder", trials, worst_d));

    out.push(EquivarianceResult {
        layer: "attention_weights".to_string(),
        trials,
        max_rel_err: worst_w,
        pass: worst_w <= 1e-6,
    });
    Ok(out)
}
