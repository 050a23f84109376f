use alloc::format;

use rand::Rng;

use crate::autodiff::ops::{self, Activation};
use crate::autodiff::{Init, ModelParams, ParamId, Session, Var};
use crate::error::Result;

/// `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new(p: &mut ModelParams, group: &str, name: &str, din: usize, dout: usize, zero: bool, rng: &mut impl Rng) -> Self {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Normal(1.0 / libm::sqrt(din as f64))
        };
        Self {
            w: p.add(group, &format!("{name}.w"), &[dout, din], init, rng),
            b: p.add(group, &format!("{name}.b"), &[dout], Init::Zeros, rng),
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        ops::linear(&mut s.tape, x, w, Some(b))
    }
}

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: &mut ModelParams,
        group: &str,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        zero: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let init = if zero {
            Init::Zeros
        } else {
            Init::Normal(1.0 / libm::sqrt((cin * kernel) as f64))
        };
        Self {
            w: p.add(group, &format!("{name}.w"), &[cout, cin, kernel], init, rng),
            b: p.add(group, &format!("{name}.b"), &[cout], Init::Zeros, rng),
            stride,
            pad: kernel / 2,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        ops::conv1d(&mut s.tape, x, w, Some(b), self.stride, self.pad)
    }
}

/// Affine normalisation parameters, used as group norm or layer norm.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(p: &mut ModelParams, group: &str, name: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            gamma: p.add(group, &format!("{name}.gamma"), &[dim], Init::Ones, rng),
            beta: p.add(group, &format!("{name}.beta"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn group(&self, s: &mut Session<'_>, x: Var, groups: usize) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        ops::group_norm(&mut s.tape, x, g, b, groups, 1e-5)
    }

    pub fn layer(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        ops::layer_norm(&mut s.tape, x, g, b, 1e-5)
    }
}

/// Sinusoidal embedding followed by `Dense -> Mish -> Dense`.
#[derive(Debug, Clone)]
pub struct TimestepEmbedding {
    pub dim: usize,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl TimestepEmbedding {
    pub fn new(p: &mut ModelParams, group: &str, dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            dim,
            fc1: Dense::new(p, group, "time.fc1", dim, 4 * dim, false, rng),
            fc2: Dense::new(p, group, "time.fc2", 4 * dim, dim, false, rng),
        }
    }

    /// `(batch, dim)` embedding of the given steps.
    pub fn forward(&self, s: &mut Session<'_>, ks: &[usize]) -> Result<Var> {
        let mut data = alloc::vec::Vec::with_capacity(ks.len() * self.dim);
        for &k in ks {
            data.extend(sinusoidal(k, self.dim));
        }
        let e = s.input(crate::autodiff::Tensor::new(&[ks.len(), self.dim], data));
        let h = self.fc1.forward(s, e)?;
        let h = ops::activation(&mut s.tape, h, Activation::Mish);
        self.fc2.forward(s, h)
    }
}

/// `[sin(k f_0), .., sin(k f_{d/2-1}), cos(k f_0), ..]` with `f_i = 10000^(-i/(d/2-1))`.
pub fn sinusoidal(k: usize, dim: usize) -> alloc::vec::Vec<f64> {
    let half = dim / 2;
    let denom = (half.max(2) - 1) as f64;
    let mut out = alloc::vec![0.0; dim];
    for i in 0..half {
        let f = libm::exp(-libm::log(10_000.0) * i as f64 / denom);
        out[i] = libm::sin(k as f64 * f);
        out[half + i] = libm::cos(k as f64 * f);
    }
    out
}
