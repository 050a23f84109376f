//! Central finite-difference checks of hand-written adjoints.
//!
//! Each registered op builds random inputs, contracts its output with a fixed
//! random vector and compares tape gradients with
//! `sum_j r_j (f_j(x + h e_i) - f_j(x - h e_i)) / 2h`. Inputs are rounded to a
//! 2^-12 grid and `h = 2^-20`, so perturbed points are exact.

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::ops::{self, Activation};
use crate::autodiff::{ModelParams, Session, Tape, Tensor, Var};
use crate::denoise::{BackboneConfig, Denoiser, DenoiserShape, TransformerConfig, UNetConfig};
use crate::diffusion::{loss_graph, DiffusionConfig, HpgaConfig, LatentMode, ModelConfig, NoiseSchedule, PolicyModel, ScheduleKind};
use crate::error::{Error, Result};
use crate::nn::ops as mvops;
use crate::nn::{PgatrBlock, PgatrConfig, PgatrNet};
use crate::pga::DIM;

/// Step used for central differences (2^-20, about 9.5e-7).
pub const FD_STEP: f64 = 1.0 / 1_048_576.0;
/// Pass threshold on the maximum relative error for primitives and layers.
pub const REL_TOL: f64 = 1e-4;
/// Threshold for end-to-end training losses, whose ẑ0 recovery divides by
/// sqrt(alpha_bar) and makes central differences noisier.
pub const TRAIN_STEP_TOL: f64 = 1e-3;
/// Gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;
/// Coordinates checked per trial.
pub const MAX_COORDS: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub op: String,
    pub trials: usize,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub pass: bool,
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;
type Accept = fn(&[Tensor]) -> bool;

/// A differentiable function of some input tensors.
pub struct Case {
    pub inputs: Vec<Tensor>,
    build: Build,
    accept: Option<Accept>,
}

impl Case {
    pub fn new(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            inputs,
            build: Box::new(build),
            accept: None,
        }
    }

    /// Rejection predicate for non-smooth regions.
    pub fn with_accept(mut self, f: Accept) -> Self {
        self.accept = Some(f);
        self
    }

    /// Treats a module's parameters as extra inputs after `x`.
    pub fn module<M: 'static>(
        params: ModelParams,
        x: Vec<Tensor>,
        module: M,
        f: fn(&M, &mut Session<'_>, &[Var]) -> Result<Var>,
    ) -> Self {
        let nx = x.len();
        let mut inputs = x;
        inputs.extend(params.ids().map(|id| {
            let t = params.tensor(id);
            Tensor::new(&t.shape, t.data.clone())
        }));
        Self::new(inputs, move |tape, vars| {
            let taken = core::mem::take(tape);
            let mut s = Session::attach(&params, taken, &vars[nx..])?;
            let out = f(&module, &mut s, &vars[..nx]);
            *tape = s.into_tape();
            out
        })
    }

    fn outputs(&self, inputs: &[Tensor]) -> Result<Vec<f64>> {
        let mut t = Tape::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let o = (self.build)(&mut t, &vars)?;
        Ok(t.value(o).data().to_vec())
    }

    fn analytic(&self, r: &[f64]) -> Result<Vec<Vec<f64>>> {
        let mut t = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|x| t.leaf(x.clone())).collect();
        let o = (self.build)(&mut t, &vars)?;
        let loss = ops::weighted_sum(&mut t, o, r.to_vec())?;
        let g = t.backward(loss, None)?;
        Ok(vars
            .iter()
            .zip(&self.inputs)
            .map(|(&v, x)| g.get_or_zeros(v, x.len()))
            .collect())
    }
}

fn quantize(x: f64) -> f64 {
    libm::round(x * 4096.0) / 4096.0
}

fn normal(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let d = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            quantize(std * z)
        })
        .collect();
    Tensor::new(shape, d)
}

fn quantize_params(p: &mut ModelParams) {
    let flat: Vec<f64> = p.flat().into_iter().map(quantize).collect();
    p.set_flat(&flat).expect("same layout");
}

/// Ops known to [`gradcheck`].
pub const REGISTERED: &[&str] = &[
    "identity",
    "add",
    "sub",
    "mul",
    "scale",
    "gelu",
    "mish",
    "silu",
    "sum",
    "mean",
    "mse",
    "reshape",
    "swap_axes",
    "concat",
    "slice",
    "gather_rows",
    "select_last",
    "add_broadcast",
    "film",
    "linear",
    "conv1d",
    "conv1d_stride2",
    "upsample2",
    "group_norm",
    "layer_norm",
    "multi_head_attention",
    "geometric_product",
    "join",
    "equi_linear",
    "geometric_bilinear",
    "mv_attention",
    "gated_gelu",
    "equi_layernorm",
    "add_grade0",
    "pgatr_block",
    "pgatr_net",
    "unet",
    "transformer",
    "train_step_unet",
    "train_step_transformer",
];

fn gated_region(inputs: &[Tensor]) -> bool {
    inputs[0].data().chunks(DIM).all(|m| libm::fabs(m[0]) > 0.1)
}

/// Builds the named case with fresh random inputs.
pub fn make_case(op: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let c = match op {
        "identity" => Case::new(vec![normal(rng, &[3, 4], 1.0)], |_, v| Ok(v[0])),
        "add" => Case::new(vec![normal(rng, &[5], 1.0), normal(rng, &[5], 1.0)], |t, v| ops::add(t, v[0], v[1])),
        "sub" => Case::new(vec![normal(rng, &[5], 1.0), normal(rng, &[5], 1.0)], |t, v| ops::sub(t, v[0], v[1])),
        "mul" => Case::new(vec![normal(rng, &[5], 1.0), normal(rng, &[5], 1.0)], |t, v| ops::mul(t, v[0], v[1])),
        "scale" => Case::new(vec![normal(rng, &[5], 1.0)], |t, v| Ok(ops::scale(t, v[0], -1.7))),
        "gelu" => Case::new(vec![normal(rng, &[8], 1.5)], |t, v| Ok(ops::activation(t, v[0], Activation::Gelu))),
        "mish" => Case::new(vec![normal(rng, &[8], 1.5)], |t, v| Ok(ops::activation(t, v[0], Activation::Mish))),
        "silu" => Case::new(vec![normal(rng, &[8], 1.5)], |t, v| Ok(ops::activation(t, v[0], Activation::Silu))),
        "sum" => Case::new(vec![normal(rng, &[2, 3], 1.0)], |t, v| Ok(ops::sum(t, v[0]))),
        "mean" => Case::new(vec![normal(rng, &[2, 3], 1.0)], |t, v| Ok(ops::mean(t, v[0]))),
        "mse" => Case::new(vec![normal(rng, &[6], 1.0), normal(rng, &[6], 1.0)], |t, v| ops::mse(t, v[0], v[1])),
        "reshape" => Case::new(vec![normal(rng, &[2, 6], 1.0)], |t, v| ops::reshape(t, v[0], &[3, 4])),
        "swap_axes" => Case::new(vec![normal(rng, &[2, 3, 4], 1.0)], |t, v| ops::swap_axes(t, v[0], 1)),
        "concat" => Case::new(vec![normal(rng, &[2, 3, 2], 1.0), normal(rng, &[2, 1, 2], 1.0)], |t, v| {
            ops::concat(t, &[v[0], v[1]], 1)
        }),
        "slice" => Case::new(vec![normal(rng, &[2, 5, 2], 1.0)], |t, v| ops::slice(t, v[0], 1, 1, 3)),
        "gather_rows" => Case::new(vec![normal(rng, &[4, 3], 1.0)], |t, v| ops::gather_rows(t, v[0], &[2, 0, 2])),
        "select_last" => Case::new(vec![normal(rng, &[3, 5], 1.0)], |t, v| ops::select_last(t, v[0], &[4, 1])),
        "add_broadcast" => Case::new(vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[2, 4], 1.0)], |t, v| {
            ops::add_broadcast(t, v[0], v[1], 1)
        }),
        "film" => Case::new(
            vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[2, 3], 1.0), normal(rng, &[2, 3], 1.0)],
            |t, v| ops::film(t, v[0], v[1], v[2]),
        ),
        "linear" => Case::new(
            vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[5, 4], 0.5), normal(rng, &[5], 0.5)],
            |t, v| ops::linear(t, v[0], v[1], Some(v[2])),
        ),
        "conv1d" => Case::new(
            vec![normal(rng, &[2, 3, 6], 1.0), normal(rng, &[4, 3, 5], 0.3), normal(rng, &[4], 0.3)],
            |t, v| ops::conv1d(t, v[0], v[1], Some(v[2]), 1, 2),
        ),
        "conv1d_stride2" => Case::new(
            vec![normal(rng, &[1, 2, 8], 1.0), normal(rng, &[3, 2, 3], 0.3), normal(rng, &[3], 0.3)],
            |t, v| ops::conv1d(t, v[0], v[1], Some(v[2]), 2, 1),
        ),
        "upsample2" => Case::new(vec![normal(rng, &[2, 3, 3], 1.0)], |t, v| Ok(ops::upsample2(t, v[0]))),
        "group_norm" => Case::new(
            vec![normal(rng, &[2, 4, 5], 1.0), normal(rng, &[4], 1.0), normal(rng, &[4], 1.0)],
            |t, v| ops::group_norm(t, v[0], v[1], v[2], 2, 1e-5),
        ),
        "layer_norm" => Case::new(
            vec![normal(rng, &[3, 6], 1.0), normal(rng, &[6], 1.0), normal(rng, &[6], 1.0)],
            |t, v| ops::layer_norm(t, v[0], v[1], v[2], 1e-5),
        ),
        "multi_head_attention" => Case::new(
            vec![normal(rng, &[2, 3, 4], 1.0), normal(rng, &[2, 5, 4], 1.0), normal(rng, &[2, 5, 6], 1.0)],
            |t, v| ops::multi_head_attention(t, v[0], v[1], v[2], 2),
        ),
        "geometric_product" => Case::new(
            vec![normal(rng, &[2, 3, DIM], 1.0), normal(rng, &[2, 3, DIM], 1.0), normal(rng, &[2, DIM], 1.0)],
            |t, v| {
                let f = mvops::bilinear_features(t, v[0], v[1], v[2])?;
                ops::slice(t, f, 1, 0, 3)
            },
        ),
        "join" => Case::new(
            vec![normal(rng, &[2, 3, DIM], 1.0), normal(rng, &[2, 3, DIM], 1.0), normal(rng, &[2, DIM], 1.0)],
            |t, v| {
                let f = mvops::bilinear_features(t, v[0], v[1], v[2])?;
                ops::slice(t, f, 1, 3, 3)
            },
        ),
        "equi_linear" => Case::new(
            vec![normal(rng, &[2, 3, DIM], 1.0), normal(rng, &[4, 3, 5], 0.5), normal(rng, &[4, 3, 4], 0.5)],
            |t, v| mvops::equi_linear(t, v[0], v[1], v[2]),
        ),
        "geometric_bilinear" => Case::new(
            vec![
                normal(rng, &[2, 2, DIM], 1.0),
                normal(rng, &[2, 2, DIM], 1.0),
                normal(rng, &[2, DIM], 1.0),
                normal(rng, &[2, 4, 5], 0.5),
                normal(rng, &[2, 4, 4], 0.5),
            ],
            |t, v| {
                let f = mvops::bilinear_features(t, v[0], v[1], v[2])?;
                mvops::equi_linear(t, f, v[3], v[4])
            },
        ),
        "mv_attention" => Case::new(
            vec![
                normal(rng, &[1, 3, 4, DIM], 0.5),
                normal(rng, &[1, 3, 4, DIM], 0.5),
                normal(rng, &[1, 3, 4, DIM], 1.0),
            ],
            |t, v| mvops::mv_attention(t, v[0], v[1], v[2], 2),
        ),
        "gated_gelu" => {
            Case::new(vec![normal(rng, &[3, 2, DIM], 1.0)], |t, v| mvops::gated_gelu(t, v[0])).with_accept(gated_region)
        }
        "equi_layernorm" => Case::new(vec![normal(rng, &[3, 2, DIM], 1.0)], |t, v| {
            mvops::equi_layernorm(t, v[0], mvops::LAYERNORM_EPS)
        }),
        "add_grade0" => Case::new(vec![normal(rng, &[2, 3, 2, DIM], 1.0), normal(rng, &[3, 2], 1.0)], |t, v| {
            mvops::add_grade0(t, v[0], v[1])
        }),
        "pgatr_block" => {
            let cfg = PgatrConfig {
                n_blocks: 1,
                channels: 4,
                n_heads: 2,
            };
            let mut p = ModelParams::new();
            let blk = PgatrBlock::new(&mut p, "g", "b", &cfg, false, rng)?;
            quantize_params(&mut p);
            let x = normal(rng, &[1, 3, 4, DIM], 1.0);
            Case::module(p, vec![x], blk, |m, s, v| m.forward(s, v[0]))
        }
        "pgatr_net" => {
            let cfg = PgatrConfig {
                n_blocks: 2,
                channels: 4,
                n_heads: 2,
            };
            let mut p = ModelParams::new();
            let net = PgatrNet::new(&mut p, "g", cfg, 2, 2, rng)?;
            quantize_params(&mut p);
            let x = normal(rng, &[1, 2, 2, DIM], 1.0);
            Case::module(p, vec![x], net, |m, s, v| m.forward(s, v[0]))
        }
        other => return extra_case(other, rng),
    };
    Ok(c)
}

fn extra_case(op: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let shape = DenoiserShape {
        horizon: 4,
        dim: 3,
        cond_tokens: 2,
        cond_token_dim: 3,
    };
    let cfg = match op {
        "unet" => BackboneConfig::UNet(UNetConfig {
            down_dims: vec![4, 8],
            kernel: 3,
            n_groups: 2,
            time_dim: 4,
            zero_head: false,
        }),
        "transformer" => BackboneConfig::Transformer(TransformerConfig {
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            mlp_ratio: 2,
            zero_head: false,
        }),
        "train_step_unet" | "train_step_transformer" => return train_step_case(op, rng),
        _ => return Err(Error::UnknownOp(op.to_string())),
    };
    let mut p = ModelParams::new();
    let den = Denoiser::new(&mut p, "denoiser", &cfg, shape, rng)?;
    quantize_params(&mut p);
    let x = normal(rng, &[2, 4, 3], 1.0);
    let c = normal(rng, &[2, 2, 3], 1.0);
    let ks = vec![rng.gen_range(1..=100), rng.gen_range(1..=100)];
    Ok(Case::module(p, vec![x, c], (den, ks), |(d, ks), s, v| d.forward(s, v[0], v[1], ks)))
}

/// Checks one case; returns `(max_rel_err, coords_checked)`.
pub fn check_case(case: &Case, rng: &mut impl Rng) -> Result<(f64, usize)> {
    let out = case.outputs(&case.inputs)?;
    let r: Vec<f64> = (0..out.len()).map(|_| quantize(rng.gen_range(-1.0..1.0))).collect();
    let analytic = case.analytic(&r)?;
    let sizes: Vec<usize> = case.inputs.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if total <= MAX_COORDS {
        (0..total).collect()
    } else {
        sample(rng, total, MAX_COORDS).into_vec()
    };
    let mut worst: f64 = 0.0;
    for &flat in &picks {
        let (mut which, mut idx) = (0, flat);
        while idx >= sizes[which] {
            idx -= sizes[which];
            which += 1;
        }
        let mut inputs = case.inputs.clone();
        let x0 = inputs[which].data()[idx];
        inputs[which].data_mut()[idx] = x0 + FD_STEP;
        let plus = case.outputs(&inputs)?;
        inputs[which].data_mut()[idx] = x0 - FD_STEP;
        let minus = case.outputs(&inputs)?;
        let numeric: f64 = r
            .iter()
            .zip(plus.iter().zip(&minus))
            .map(|(rj, (p, m))| rj * (p - m))
            .sum::<f64>()
            / (2.0 * FD_STEP);
        let a = analytic[which][idx];
        let denom = libm::fabs(a).max(libm::fabs(numeric)).max(REL_FLOOR);
        worst = worst.max(libm::fabs(a - numeric) / denom);
    }
    Ok((worst, picks.len()))
}

pub fn tolerance(op: &str) -> f64 {
    if op.starts_with("train_step") {
        TRAIN_STEP_TOL
    } else {
        REL_TOL
    }
}

/// Runs `trials` random checks of a registered op with a fixed seed.
pub fn gradcheck(op: &str, trials: usize) -> Result<GradcheckReport> {
    gradcheck_seeded(op, trials, 0)
}

pub fn gradcheck_seeded(op: &str, trials: usize, seed: u64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut coords = 0;
    for _ in 0..trials {
        let mut case = make_case(op, &mut rng)?;
        let mut tries = 0;
        while let Some(accept) = case.accept {
            if accept(&case.inputs) {
                break;
            }
            tries += 1;
            if tries > 1000 {
                return Err(Error::Config("no smooth sample found".into()));
            }
            case = make_case(op, &mut rng)?;
        }
        let (e, n) = check_case(&case, &mut rng)?;
        worst = worst.max(e);
        coords += n;
    }
    Ok(GradcheckReport {
        op: op.to_string(),
        trials,
        coords_checked: coords,
        max_rel_err: worst,
        pass: worst <= tolerance(op),
    })
}

/// Total loss of a tiny hybrid model (H_p = 4, K_a = 2, two blocks) with one
/// supervised and one masked row; no detaching or clipping so every path is smooth.
fn train_step_case(op: &str, rng: &mut ChaCha8Rng) -> Result<Case> {
    let backbone = if op == "train_step_unet" {
        BackboneConfig::UNet(UNetConfig {
            down_dims: vec![4, 8],
            kernel: 3,
            n_groups: 2,
            time_dim: 4,
            zero_head: false,
        })
    } else {
        BackboneConfig::Transformer(TransformerConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            mlp_ratio: 2,
            zero_head: false,
        })
    };
    let pg = PgatrConfig {
        n_blocks: 2,
        channels: 4,
        n_heads: 2,
    };
    let cfg = ModelConfig::Hpga(HpgaConfig {
        h_o: 2,
        h_p: 4,
        k_o: 2,
        k_a: 2,
        encoder: pg.clone(),
        decoder: pg,
        backbone,
        latent: LatentMode::Actions,
    });
    let mut p = ModelParams::new();
    let model = PolicyModel::new(&cfg, &mut p, rng)?;
    quantize_params(&mut p);
    let schedule = NoiseSchedule::new(20, ScheduleKind::Cosine)?;
    let mut dc = DiffusionConfig::new(0.25, 20)?;
    dc.detach_decoder_input = false;
    dc.clip_z0 = false;
    let ks = vec![rng.gen_range(15..=19), rng.gen_range(1..15)];
    let eps = normal(rng, &[2 * 4 * 32], 1.0).into_data();
    let obs = normal(rng, &[2, 2, 2, 16], 0.5);
    let act = normal(rng, &[2, 4, 2, 16], 0.5);
    Ok(Case::module(p, vec![obs, act], (model, schedule, dc, ks, eps), |(m, sch, dc, ks, eps), s, v| {
        Ok(loss_graph(m, s, v[0], v[1], sch, dc, ks, eps)?.total)
    }))
}
