//! P-GATr layers: equivariant primitives on multivector channels and their
//! assembly into the state encoder / action decoder.
//!
//! Tape-level ops live in [`ops`], parameterised modules in [`layers`]. The
//! free functions here evaluate single stacks without gradients.

pub mod equivariance;
mod layers;
pub mod ops;

use alloc::vec::Vec;

pub use layers::{EquiLinear, GeometricBilinear, PgatrBlock, PgatrConfig, PgatrNet};

use crate::autodiff::{ModelParams, Session, Tape, Tensor};
use crate::error::{shape_err, Result};
use crate::mvstack::MvStack;
use crate::pga::basis::EUCLIDEAN_BLADES;
use crate::pga::DIM;

/// Standalone weights for one [`ops::equi_linear`] map.
#[derive(Debug, Clone, PartialEq)]
pub struct EquiLinearParams {
    pub cin: usize,
    pub cout: usize,
    /// `(cout, cin, 5)`
    pub w: Vec<f64>,
    /// `(cout, cin, 4)`
    pub v: Vec<f64>,
}

impl EquiLinearParams {
    pub fn new(cin: usize, cout: usize, w: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if w.len() != cout * cin * 5 || v.len() != cout * cin * 4 {
            return Err(shape_err!("equi_linear params for {cin}->{cout}: w {}, v {}", w.len(), v.len()));
        }
        if w.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(shape_err!("equi_linear params are not finite"));
        }
        Ok(Self { cin, cout, w, v })
    }

    /// Reads the weights of a module out of a parameter store.
    pub fn from_module(m: &EquiLinear, params: &ModelParams) -> Self {
        Self {
            cin: m.cin,
            cout: m.cout,
            w: params.tensor(m.w).data.clone(),
            v: params.tensor(m.v).data.clone(),
        }
    }
}

fn stack_out(t: &Tape, v: crate::autodiff::Var) -> Result<MvStack> {
    let s = t.shape(v);
    let (time, c) = (s[s.len() - 3..][0], s[s.len() - 2]);
    MvStack::from_tensor(t.value(v), time, c)
}

fn batched(x: &MvStack) -> Tensor {
    let [t, c, _] = x.shape();
    Tensor::new(&[1, t, c, DIM], x.data().to_vec())
}

pub fn equi_linear(p: &EquiLinearParams, x: &MvStack) -> Result<MvStack> {
    let mut t = Tape::no_grad();
    let xv = t.constant(x.to_tensor());
    let w = t.constant(Tensor::new(&[p.cout, p.cin, 5], p.w.clone()));
    let v = t.constant(Tensor::new(&[p.cout, p.cin, 4], p.v.clone()));
    let o = ops::equi_linear(&mut t, xv, w, v)?;
    stack_out(&t, o)
}

/// `proj(concat(x y, z_0123 join(x, y)))`, with `z` taken per time step from
/// channel 0 of `reference`.
pub fn geometric_bilinear(proj: &EquiLinearParams, x: &MvStack, y: &MvStack, reference: &MvStack) -> Result<MvStack> {
    if x.shape() != y.shape() || x.shape() != reference.shape() {
        return Err(shape_err!(
            "geometric_bilinear: {:?}, {:?}, {:?}",
            x.shape(),
            y.shape(),
            reference.shape()
        ));
    }
    let mut t = Tape::no_grad();
    let xv = t.constant(x.to_tensor());
    let yv = t.constant(y.to_tensor());
    let rv = t.constant(reference.to_tensor());
    let r0 = ops::channel(&mut t, rv, 0)?;
    let f = ops::bilinear_features(&mut t, xv, yv, r0)?;
    let w = t.constant(Tensor::new(&[proj.cout, proj.cin, 5], proj.w.clone()));
    let v = t.constant(Tensor::new(&[proj.cout, proj.cin, 4], proj.v.clone()));
    let o = ops::equi_linear(&mut t, f, w, v)?;
    stack_out(&t, o)
}

/// Attention over the time axis of the stacks.
pub fn mv_attention(q: &MvStack, k: &MvStack, v: &MvStack, heads: usize) -> Result<MvStack> {
    if q.channels() != k.channels() || k.shape() != v.shape() {
        return Err(shape_err!("mv_attention: {:?}, {:?}, {:?}", q.shape(), k.shape(), v.shape()));
    }
    let mut t = Tape::no_grad();
    let (qv, kv, vv) = (t.constant(batched(q)), t.constant(batched(k)), t.constant(batched(v)));
    let o = ops::mv_attention(&mut t, qv, kv, vv, heads)?;
    stack_out(&t, o)
}

/// Softmax weights `(heads, T_q, T_k)` used by [`mv_attention`].
pub fn mv_attention_weights(q: &MvStack, k: &MvStack, heads: usize) -> Result<Vec<f64>> {
    let [tq, c, _] = q.shape();
    let [tk, ck, _] = k.shape();
    if c != ck || heads == 0 || c % heads != 0 {
        return Err(shape_err!("mv_attention_weights: {:?}, {:?}, {heads} heads", q.shape(), k.shape()));
    }
    let e = EUCLIDEAN_BLADES.len();
    let pick = |s: &MvStack, n: usize| -> Tensor {
        let d: Vec<f64> = s.data().chunks(DIM).flat_map(|m| EUCLIDEAN_BLADES.iter().map(move |&i| m[i])).collect();
        Tensor::new(&[1, n, c * e], d)
    };
    let mut t = Tape::no_grad();
    let qv = t.constant(pick(q, tq));
    let kv = t.constant(pick(k, tk));
    crate::autodiff::ops::attention_weights(&t, qv, kv, heads)
}

pub fn gated_gelu(x: &MvStack) -> Result<MvStack> {
    let mut t = Tape::no_grad();
    let xv = t.constant(x.to_tensor());
    let o = ops::gated_gelu(&mut t, xv)?;
    stack_out(&t, o)
}

/// Normalises each time step over its channels.
pub fn equi_layernorm(x: &MvStack) -> Result<MvStack> {
    let mut t = Tape::no_grad();
    let xv = t.constant(x.to_tensor());
    let o = ops::equi_layernorm(&mut t, xv, ops::LAYERNORM_EPS)?;
    stack_out(&t, o)
}

/// Applies one block with the time axis as tokens.
pub fn pgatr_block(block: &PgatrBlock, params: &ModelParams, x: &MvStack) -> Result<MvStack> {
    let mut s = Session::inference(params);
    let xv = s.input(batched(x));
    let o = block.forward(&mut s, xv)?;
    stack_out(&s.tape, o)
}

fn run_net(net: &PgatrNet, params: &ModelParams, x: &MvStack) -> Result<MvStack> {
    let mut s = Session::inference(params);
    let xv = s.input(batched(x));
    let o = net.forward(&mut s, xv)?;
    stack_out(&s.tape, o)
}

/// `x_o (H_o, K_o, 16)` to `z_o` of the same shape.
pub fn encode_obs(net: &PgatrNet, params: &ModelParams, x_o: &MvStack) -> Result<MvStack> {
    run_net(net, params, x_o)
}

/// `z (H_p, K_a, 16)` to action multivectors of the same shape.
pub fn decode_actions(net: &PgatrNet, params: &ModelParams, z: &MvStack) -> Result<MvStack> {
    run_net(net, params, z)
}
