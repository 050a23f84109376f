//! Dense tensor primitives with hand-written adjoints.

use alloc::vec;
use alloc::vec::Vec;

use super::tape::{Backward, Ctx, Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// `c = alpha * a.b + beta * c` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta != 1.0 {
            for i in 0..m {
                for j in 0..n {
                    c[i * rsc + j * csc] *= beta;
                }
            }
        }
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: every index touched by dgemm lies within the slices, checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn same_shape(t: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if t.shape(a) != t.shape(b) {
        return Err(shape_err!("{what}: {:?} vs {:?}", t.shape(a), t.shape(b)));
    }
    Ok(())
}

fn acc(dst: &mut Option<Vec<f64>>, f: impl Fn(usize) -> f64) {
    if let Some(d) = dst {
        for (i, x) in d.iter_mut().enumerate() {
            *x += f(i);
        }
    }
}

// ---------------------------------------------------------------- elementwise

struct AddOp;
impl Backward for AddOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[i]);
        acc(&mut grads[1], |i| g[i]);
    }
}

pub fn add(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, a, b, "add")?;
    let data = t.value(a).data().iter().zip(t.value(b).data()).map(|(x, y)| x + y).collect();
    let v = Tensor::new(t.shape(a), data);
    Ok(t.push_op(v, &[a, b], AddOp))
}

struct SubOp;
impl Backward for SubOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[i]);
        acc(&mut grads[1], |i| -g[i]);
    }
}

pub fn sub(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, a, b, "sub")?;
    let data = t.value(a).data().iter().zip(t.value(b).data()).map(|(x, y)| x - y).collect();
    let v = Tensor::new(t.shape(a), data);
    Ok(t.push_op(v, &[a, b], SubOp))
}

struct MulOp;
impl Backward for MulOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (a, b) = (ctx.input(0).data(), ctx.input(1).data());
        acc(&mut grads[0], |i| g[i] * b[i]);
        acc(&mut grads[1], |i| g[i] * a[i]);
    }
}

pub fn mul(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, a, b, "mul")?;
    let data = t.value(a).data().iter().zip(t.value(b).data()).map(|(x, y)| x * y).collect();
    let v = Tensor::new(t.shape(a), data);
    Ok(t.push_op(v, &[a, b], MulOp))
}

struct ScaleOp(f64);
impl Backward for ScaleOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| self.0 * g[i]);
    }
}

pub fn scale(t: &mut Tape, a: Var, c: f64) -> Var {
    let data = t.value(a).data().iter().map(|x| c * x).collect();
    let v = Tensor::new(t.shape(a), data);
    t.push_op(v, &[a], ScaleOp(c))
}

/// Per-element constant scaling `c[i] * a[i]`.
struct ScaleEachOp(Vec<f64>);
impl Backward for ScaleEachOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| self.0[i] * g[i]);
    }
}

pub fn scale_each(t: &mut Tape, a: Var, c: Vec<f64>) -> Result<Var> {
    if c.len() != t.value(a).len() {
        return Err(shape_err!("scale_each: {} factors for {} elements", c.len(), t.value(a).len()));
    }
    let data = t.value(a).data().iter().zip(&c).map(|(x, s)| x * s).collect();
    let v = Tensor::new(t.shape(a), data);
    Ok(t.push_op(v, &[a], ScaleEachOp(c)))
}

/// Adds a constant tensor (no gradient to the constant).
pub fn add_const(t: &mut Tape, a: Var, c: &[f64]) -> Result<Var> {
    let cv = t.constant(Tensor::new(t.shape(a), c.to_vec()));
    add(t, a, cv)
}

struct ClampOp {
    lo: f64,
    hi: f64,
}
impl Backward for ClampOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let x = ctx.input(0).data();
        acc(&mut grads[0], |i| if x[i] > self.lo && x[i] < self.hi { g[i] } else { 0.0 });
    }
}

pub fn clamp(t: &mut Tape, a: Var, lo: f64, hi: f64) -> Var {
    let data = t.value(a).data().iter().map(|x| x.clamp(lo, hi)).collect();
    let v = Tensor::new(t.shape(a), data);
    t.push_op(v, &[a], ClampOp { lo, hi })
}

/// Copies the value into a new constant node, cutting the gradient path.
pub fn detach(t: &mut Tape, a: Var) -> Var {
    let v = t.value(a).clone();
    t.constant(v)
}

// ---------------------------------------------------------------- activations

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// Exact `x * Phi(x)`.
    Gelu,
    Mish,
    Silu,
}

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Mish => x * libm::tanh(softplus(x)),
            Activation::Silu => x * sigmoid(x),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Mish => {
                let tsp = libm::tanh(softplus(x));
                tsp + x * (1.0 - tsp * tsp) * sigmoid(x)
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

struct ActOp(Activation);
impl Backward for ActOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let x = ctx.input(0).data();
        acc(&mut grads[0], |i| g[i] * self.0.derivative(x[i]));
    }
}

pub fn activation(t: &mut Tape, a: Var, f: Activation) -> Var {
    let data = t.value(a).data().iter().map(|&x| f.apply(x)).collect();
    let v = Tensor::new(t.shape(a), data);
    t.push_op(v, &[a], ActOp(f))
}

// ---------------------------------------------------------------- reductions

struct SumOp;
impl Backward for SumOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |_| g[0]);
    }
}

pub fn sum(t: &mut Tape, a: Var) -> Var {
    let s = t.value(a).data().iter().sum();
    t.push_op(Tensor::scalar(s), &[a], SumOp)
}

pub fn mean(t: &mut Tape, a: Var) -> Var {
    let n = t.value(a).len().max(1) as f64;
    let s = sum(t, a);
    scale(t, s, 1.0 / n)
}

struct WeightedSumOp(Vec<f64>);
impl Backward for WeightedSumOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[0] * self.0[i]);
    }
}

/// `sum_i w[i] a[i]` for a constant weight vector.
pub fn weighted_sum(t: &mut Tape, a: Var, w: Vec<f64>) -> Result<Var> {
    if w.len() != t.value(a).len() {
        return Err(shape_err!("weighted_sum: {} weights for {} elements", w.len(), t.value(a).len()));
    }
    let s = t.value(a).data().iter().zip(&w).map(|(x, y)| x * y).sum();
    Ok(t.push_op(Tensor::scalar(s), &[a], WeightedSumOp(w)))
}

struct MseOp;
impl Backward for MseOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (a, b) = (ctx.input(0).data(), ctx.input(1).data());
        let k = 2.0 * g[0] / a.len() as f64;
        acc(&mut grads[0], |i| k * (a[i] - b[i]));
        acc(&mut grads[1], |i| -k * (a[i] - b[i]));
    }
}

/// Mean squared error over all entries.
pub fn mse(t: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(t, a, b, "mse")?;
    let (x, y) = (t.value(a).data(), t.value(b).data());
    let s: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
    let n = x.len().max(1) as f64;
    Ok(t.push_op(Tensor::scalar(s / n), &[a, b], MseOp))
}

// ---------------------------------------------------------------- layout

struct ReshapeOp;
impl Backward for ReshapeOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[i]);
    }
}

pub fn reshape(t: &mut Tape, a: Var, shape: &[usize]) -> Result<Var> {
    if shape.iter().product::<usize>() != t.value(a).len() {
        return Err(shape_err!("reshape {:?} -> {shape:?}", t.shape(a)));
    }
    let v = t.value(a).clone().reshaped(shape);
    Ok(t.push_op(v, &[a], ReshapeOp))
}

/// `(outer, axis, inner)` split of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct SwapOp {
    b: usize,
    x: usize,
    y: usize,
    inner: usize,
}
impl Backward for SwapOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(d) = &mut grads[0] {
            let SwapOp { b, x, y, inner } = *self;
            for bi in 0..b {
                for i in 0..x {
                    for j in 0..y {
                        let src = ((bi * y + j) * x + i) * inner;
                        let dst = ((bi * x + i) * y + j) * inner;
                        for e in 0..inner {
                            d[dst + e] += g[src + e];
                        }
                    }
                }
            }
        }
    }
}

/// Swaps axes `axis` and `axis + 1`.
pub fn swap_axes(t: &mut Tape, a: Var, axis: usize) -> Result<Var> {
    let shape = t.shape(a).to_vec();
    if axis + 1 >= shape.len() {
        return Err(shape_err!("swap_axes({axis}) on {shape:?}"));
    }
    let b: usize = shape[..axis].iter().product();
    let (x, y) = (shape[axis], shape[axis + 1]);
    let inner: usize = shape[axis + 2..].iter().product();
    let src = t.value(a).data();
    let mut out = vec![0.0; src.len()];
    for bi in 0..b {
        for i in 0..x {
            for j in 0..y {
                let s = ((bi * x + i) * y + j) * inner;
                let d = ((bi * y + j) * x + i) * inner;
                out[d..d + inner].copy_from_slice(&src[s..s + inner]);
            }
        }
    }
    let mut new_shape = shape.clone();
    new_shape.swap(axis, axis + 1);
    Ok(t.push_op(Tensor::new(&new_shape, out), &[a], SwapOp { b, x, y, inner }))
}

struct ConcatOp {
    outer: usize,
    inner: usize,
    sizes: Vec<usize>,
}
impl Backward for ConcatOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let total: usize = self.sizes.iter().sum();
        let mut off = 0;
        for (k, &s) in self.sizes.iter().enumerate() {
            if let Some(d) = &mut grads[k] {
                for o in 0..self.outer {
                    let src = (o * total + off) * self.inner;
                    let dst = o * s * self.inner;
                    for e in 0..s * self.inner {
                        d[dst + e] += g[src + e];
                    }
                }
            }
            off += s;
        }
    }
}

pub fn concat(t: &mut Tape, parts: &[Var], axis: usize) -> Result<Var> {
    let first = t.shape(parts[0]).to_vec();
    if axis >= first.len() {
        return Err(shape_err!("concat axis {axis} on {first:?}"));
    }
    let mut sizes = Vec::with_capacity(parts.len());
    for &p in parts {
        let s = t.shape(p);
        if s.len() != first.len()
            || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
        {
            return Err(shape_err!("concat {:?} with {first:?} on axis {axis}", s));
        }
        sizes.push(s[axis]);
    }
    let (outer, _, inner) = split_axis(&first, axis);
    let total: usize = sizes.iter().sum();
    let mut out = vec![0.0; outer * total * inner];
    let mut off = 0;
    for (&p, &s) in parts.iter().zip(&sizes) {
        let src = t.value(p).data();
        for o in 0..outer {
            let d = (o * total + off) * inner;
            out[d..d + s * inner].copy_from_slice(&src[o * s * inner..(o + 1) * s * inner]);
        }
        off += s;
    }
    let mut shape = first;
    shape[axis] = total;
    Ok(t.push_op(Tensor::new(&shape, out), parts, ConcatOp { outer, inner, sizes }))
}

struct SliceOp {
    outer: usize,
    size: usize,
    start: usize,
    len: usize,
    inner: usize,
}
impl Backward for SliceOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(d) = &mut grads[0] {
            for o in 0..self.outer {
                let dst = (o * self.size + self.start) * self.inner;
                let src = o * self.len * self.inner;
                for e in 0..self.len * self.inner {
                    d[dst + e] += g[src + e];
                }
            }
        }
    }
}

pub fn slice(t: &mut Tape, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let shape = t.shape(a).to_vec();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(shape_err!("slice axis {axis} [{start}, {}) of {shape:?}", start + len));
    }
    let (outer, size, inner) = split_axis(&shape, axis);
    let src = t.value(a).data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * size + start) * inner;
        out.extend_from_slice(&src[s..s + len * inner]);
    }
    let mut new_shape = shape;
    new_shape[axis] = len;
    let op = SliceOp { outer, size, start, len, inner };
    Ok(t.push_op(Tensor::new(&new_shape, out), &[a], op))
}

struct GatherOp {
    rows: Vec<usize>,
    row_len: usize,
}
impl Backward for GatherOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(d) = &mut grads[0] {
            for (k, &r) in self.rows.iter().enumerate() {
                for e in 0..self.row_len {
                    d[r * self.row_len + e] += g[k * self.row_len + e];
                }
            }
        }
    }
}

/// Selects entries along axis 0.
pub fn gather_rows(t: &mut Tape, a: Var, rows: &[usize]) -> Result<Var> {
    let shape = t.shape(a).to_vec();
    let row_len: usize = shape[1..].iter().product();
    if rows.iter().any(|&r| r >= shape[0]) {
        return Err(shape_err!("gather_rows index out of range for {shape:?}"));
    }
    let src = t.value(a).data();
    let mut out = Vec::with_capacity(rows.len() * row_len);
    for &r in rows {
        out.extend_from_slice(&src[r * row_len..(r + 1) * row_len]);
    }
    let mut new_shape = shape;
    new_shape[0] = rows.len();
    let op = GatherOp {
        rows: rows.to_vec(),
        row_len,
    };
    Ok(t.push_op(Tensor::new(&new_shape, out), &[a], op))
}

// ---------------------------------------------------------------- broadcasting

struct BroadcastAddOp {
    outer: usize,
    mid: usize,
    inner: usize,
}
impl Backward for BroadcastAddOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[i]);
        if let Some(d) = &mut grads[1] {
            for o in 0..self.outer {
                for m in 0..self.mid {
                    let base = (o * self.mid + m) * self.inner;
                    for e in 0..self.inner {
                        d[o * self.inner + e] += g[base + e];
                    }
                }
            }
        }
    }
}

/// `x[o, m, i] + y[o, i]`: `y` is broadcast over axis `axis` of `x`.
/// `y` must have the shape of `x` with `axis` removed.
pub fn add_broadcast(t: &mut Tape, x: Var, y: Var, axis: usize) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let mut expect = xs.clone();
    if axis >= xs.len() {
        return Err(shape_err!("add_broadcast axis {axis} on {xs:?}"));
    }
    expect.remove(axis);
    if t.shape(y) != expect.as_slice() && !(expect.is_empty() && t.value(y).len() == 1) {
        return Err(shape_err!("add_broadcast {:?} onto {xs:?} over axis {axis}", t.shape(y)));
    }
    let (outer, mid, inner) = split_axis(&xs, axis);
    let (xv, yv) = (t.value(x).data(), t.value(y).data());
    let mut out = xv.to_vec();
    for o in 0..outer {
        for m in 0..mid {
            let base = (o * mid + m) * inner;
            for e in 0..inner {
                out[base + e] += yv[o * inner + e];
            }
        }
    }
    let op = BroadcastAddOp { outer, mid, inner };
    Ok(t.push_op(Tensor::new(&xs, out), &[x, y], op))
}

struct FilmOp {
    bc: usize,
    len: usize,
}
impl Backward for FilmOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (x, s) = (ctx.input(0).data(), ctx.input(1).data());
        acc(&mut grads[0], |i| g[i] * s[i / self.len]);
        for slot in [1usize, 2] {
            if let Some(d) = &mut grads[slot] {
                for r in 0..self.bc {
                    let row = &g[r * self.len..(r + 1) * self.len];
                    d[r] += if slot == 1 {
                        row.iter().zip(&x[r * self.len..(r + 1) * self.len]).map(|(a, b)| a * b).sum::<f64>()
                    } else {
                        row.iter().sum::<f64>()
                    };
                }
            }
        }
    }
}

/// Feature-wise modulation `x[b, c, :] * scale[b, c] + shift[b, c]`.
pub fn film(t: &mut Tape, x: Var, scale: Var, shift: Var) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    if xs.len() != 3 || t.shape(scale) != &xs[..2] || t.shape(shift) != &xs[..2] {
        return Err(shape_err!(
            "film x {xs:?} scale {:?} shift {:?}",
            t.shape(scale),
            t.shape(shift)
        ));
    }
    let (bc, len) = (xs[0] * xs[1], xs[2]);
    let (xv, sv, hv) = (t.value(x).data(), t.value(scale).data(), t.value(shift).data());
    let out = (0..bc * len).map(|i| xv[i] * sv[i / len] + hv[i / len]).collect();
    Ok(t.push_op(Tensor::new(&xs, out), &[x, scale, shift], FilmOp { bc, len }))
}

// ---------------------------------------------------------------- dense layers

struct LinearOp {
    n: usize,
    din: usize,
    dout: usize,
}
impl Backward for LinearOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let LinearOp { n, din, dout } = *self;
        let (x, w) = (ctx.input(0).data(), ctx.input(1).data());
        if let Some(gx) = &mut grads[0] {
            gemm(n, dout, din, g, dout, 1, w, din, 1, 1.0, gx, din, 1);
        }
        if let Some(gw) = &mut grads[1] {
            gemm(dout, n, din, g, 1, dout, x, din, 1, 1.0, gw, din, 1);
        }
        if grads.len() > 2 {
            if let Some(gb) = &mut grads[2] {
                for r in 0..n {
                    for o in 0..dout {
                        gb[o] += g[r * dout + o];
                    }
                }
            }
        }
    }
}

/// `y = x W^T + b` over the last axis of `x`; `w` is `(out, in)`.
pub fn linear(t: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let ws = t.shape(w).to_vec();
    let din = *xs.last().unwrap_or(&0);
    if ws.len() != 2 || ws[1] != din {
        return Err(shape_err!("linear x {xs:?} w {ws:?}"));
    }
    let dout = ws[0];
    if let Some(b) = b {
        if t.shape(b) != [dout] {
            return Err(shape_err!("linear bias {:?} for out {dout}", t.shape(b)));
        }
    }
    let n = t.value(x).len() / din.max(1);
    let mut out = vec![0.0; n * dout];
    if let Some(b) = b {
        let bv = t.value(b).data();
        for r in 0..n {
            out[r * dout..(r + 1) * dout].copy_from_slice(bv);
        }
    }
    gemm(n, din, dout, t.value(x).data(), din, 1, t.value(w).data(), 1, din, 1.0, &mut out, dout, 1);
    let mut shape = xs;
    *shape.last_mut().unwrap() = dout;
    let op = LinearOp { n, din, dout };
    Ok(match b {
        Some(b) => t.push_op(Tensor::new(&shape, out), &[x, w, b], op),
        None => t.push_op(Tensor::new(&shape, out), &[x, w], op),
    })
}

#[derive(Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    len: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_len: usize,
}

impl ConvGeom {
    /// Column matrix `(cin * kernel, batch * out_len)`; column `b * out_len + o`.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.batch * self.out_len;
        for b in 0..self.batch {
            let xb = &x[b * self.cin * self.len..(b + 1) * self.cin * self.len];
            for c in 0..self.cin {
                for k in 0..self.kernel {
                    let row = (c * self.kernel + k) * n + b * self.out_len;
                    for o in 0..self.out_len {
                        let pos = (o * self.stride + k) as isize - self.pad as isize;
                        cols[row + o] = if pos >= 0 && (pos as usize) < self.len {
                            xb[c * self.len + pos as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], gx: &mut [f64]) {
        let n = self.batch * self.out_len;
        for b in 0..self.batch {
            let gb = &mut gx[b * self.cin * self.len..(b + 1) * self.cin * self.len];
            for c in 0..self.cin {
                for k in 0..self.kernel {
                    let row = (c * self.kernel + k) * n + b * self.out_len;
                    for o in 0..self.out_len {
                        let pos = (o * self.stride + k) as isize - self.pad as isize;
                        if pos >= 0 && (pos as usize) < self.len {
                            gb[c * self.len + pos as usize] += cols[row + o];
                        }
                    }
                }
            }
        }
    }
}

struct Conv1dOp(ConvGeom);
impl Backward for Conv1dOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let geo = self.0;
        let (x, w) = (ctx.input(0).data(), ctx.input(1).data());
        let ck = geo.cin * geo.kernel;
        let n = geo.batch * geo.out_len;
        // gY as (cout, batch * out_len).
        let mut gy = vec![0.0; geo.cout * n];
        for b in 0..geo.batch {
            for o in 0..geo.cout {
                let src = &g[(b * geo.cout + o) * geo.out_len..][..geo.out_len];
                gy[o * n + b * geo.out_len..][..geo.out_len].copy_from_slice(src);
            }
        }
        if let Some(gw) = &mut grads[1] {
            let mut cols = vec![0.0; ck * n];
            geo.im2col(x, &mut cols);
            // gW (cout, ck) += gY (cout, n) . cols^T (n, ck)
            gemm(geo.cout, n, ck, &gy, n, 1, &cols, 1, n, 1.0, gw, ck, 1);
        }
        if let Some(gx) = &mut grads[0] {
            let mut gcols = vec![0.0; ck * n];
            // gcols (ck, n) = W^T (ck, cout) . gY (cout, n)
            gemm(ck, geo.cout, n, w, 1, ck, &gy, n, 1, 0.0, &mut gcols, n, 1);
            geo.col2im(&gcols, gx);
        }
        if grads.len() > 2 {
            if let Some(gbias) = &mut grads[2] {
                for o in 0..geo.cout {
                    gbias[o] += gy[o * n..(o + 1) * n].iter().sum::<f64>();
                }
            }
        }
    }
}

/// 1-D convolution. `x`: `(batch, cin, len)`, `w`: `(cout, cin, kernel)`, `b`: `(cout)`.
pub fn conv1d(t: &mut Tape, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let ws = t.shape(w).to_vec();
    if xs.len() != 3 || ws.len() != 3 || ws[1] != xs[1] || stride == 0 {
        return Err(shape_err!("conv1d x {xs:?} w {ws:?}"));
    }
    if xs[2] + 2 * pad < ws[2] {
        return Err(shape_err!("conv1d kernel {} longer than padded input {}", ws[2], xs[2] + 2 * pad));
    }
    let geo = ConvGeom {
        batch: xs[0],
        cin: xs[1],
        cout: ws[0],
        len: xs[2],
        kernel: ws[2],
        stride,
        pad,
        out_len: (xs[2] + 2 * pad - ws[2]) / stride + 1,
    };
    if let Some(b) = b {
        if t.shape(b) != [geo.cout] {
            return Err(shape_err!("conv1d bias {:?}", t.shape(b)));
        }
    }
    let ck = geo.cin * geo.kernel;
    let n = geo.batch * geo.out_len;
    let mut cols = vec![0.0; ck * n];
    let (xv, wv) = (t.value(x).data(), t.value(w).data());
    geo.im2col(xv, &mut cols);
    let mut y = vec![0.0; geo.cout * n];
    gemm(geo.cout, ck, n, wv, ck, 1, &cols, n, 1, 0.0, &mut y, n, 1);
    let bias = b.map(|b| t.value(b).data());
    let mut out = vec![0.0; geo.batch * geo.cout * geo.out_len];
    for bi in 0..geo.batch {
        for o in 0..geo.cout {
            let dst = &mut out[(bi * geo.cout + o) * geo.out_len..][..geo.out_len];
            let src = &y[o * n + bi * geo.out_len..][..geo.out_len];
            let bo = bias.map_or(0.0, |bv| bv[o]);
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s + bo;
            }
        }
    }
    let shape = [geo.batch, geo.cout, geo.out_len];
    Ok(match b {
        Some(b) => t.push_op(Tensor::new(&shape, out), &[x, w, b], Conv1dOp(geo)),
        None => t.push_op(Tensor::new(&shape, out), &[x, w], Conv1dOp(geo)),
    })
}

struct UpsampleOp;
impl Backward for UpsampleOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        acc(&mut grads[0], |i| g[2 * i] + g[2 * i + 1]);
    }
}

/// Nearest-neighbour x2 upsampling along the last axis.
pub fn upsample2(t: &mut Tape, x: Var) -> Var {
    let mut shape = t.shape(x).to_vec();
    let out: Vec<f64> = t.value(x).data().iter().flat_map(|&v| [v, v]).collect();
    *shape.last_mut().unwrap() *= 2;
    t.push_op(Tensor::new(&shape, out), &[x], UpsampleOp)
}

// ---------------------------------------------------------------- normalisation

struct NormOp {
    /// Normalised values, laid out like the input.
    xhat: Vec<f64>,
    /// Reciprocal std per group.
    rstd: Vec<f64>,
    /// Maps element -> (group, channel).
    layout: NormLayout,
}

#[derive(Clone, Copy)]
enum NormLayout {
    /// `(batch, channels, len)` with `groups` channel groups.
    Group {
        batch: usize,
        channels: usize,
        len: usize,
        groups: usize,
    },
    /// Rows of length `dim`.
    Layer { rows: usize, dim: usize },
}

impl NormLayout {
    fn groups(&self) -> usize {
        match *self {
            NormLayout::Group { batch, groups, .. } => batch * groups,
            NormLayout::Layer { rows, .. } => rows,
        }
    }

    fn group_size(&self) -> usize {
        match *self {
            NormLayout::Group { channels, len, groups, .. } => channels / groups * len,
            NormLayout::Layer { dim, .. } => dim,
        }
    }

    /// Affine parameter index for element `j` of group `gi`.
    fn channel(&self, gi: usize, j: usize) -> usize {
        match *self {
            NormLayout::Group { channels, len, groups, .. } => {
                (gi % groups) * (channels / groups) + j / len
            }
            NormLayout::Layer { .. } => j,
        }
    }
}

impl Backward for NormOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let gamma = ctx.input(1).data();
        let size = self.layout.group_size();
        for gi in 0..self.layout.groups() {
            let base = gi * size;
            let mut m1 = 0.0;
            let mut m2 = 0.0;
            for j in 0..size {
                let c = self.layout.channel(gi, j);
                let gh = g[base + j] * gamma[c];
                m1 += gh;
                m2 += gh * self.xhat[base + j];
                if let Some(gg) = &mut grads[1] {
                    gg[c] += g[base + j] * self.xhat[base + j];
                }
                if let Some(gb) = &mut grads[2] {
                    gb[c] += g[base + j];
                }
            }
            m1 /= size as f64;
            m2 /= size as f64;
            if let Some(gx) = &mut grads[0] {
                let r = self.rstd[gi];
                for j in 0..size {
                    let c = self.layout.channel(gi, j);
                    let gh = g[base + j] * gamma[c];
                    gx[base + j] += r * (gh - m1 - self.xhat[base + j] * m2);
                }
            }
        }
    }
}

fn normalize(t: &mut Tape, x: Var, gamma: Var, beta: Var, layout: NormLayout, eps: f64) -> Var {
    let xv = t.value(x).data();
    let (gv, bv) = (t.value(gamma).data(), t.value(beta).data());
    let size = layout.group_size();
    let mut xhat = vec![0.0; xv.len()];
    let mut out = vec![0.0; xv.len()];
    let mut rstd = Vec::with_capacity(layout.groups());
    for gi in 0..layout.groups() {
        let seg = &xv[gi * size..(gi + 1) * size];
        let mu = seg.iter().sum::<f64>() / size as f64;
        let var = seg.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / size as f64;
        let r = 1.0 / libm::sqrt(var + eps);
        rstd.push(r);
        for j in 0..size {
            let h = (seg[j] - mu) * r;
            let c = layout.channel(gi, j);
            xhat[gi * size + j] = h;
            out[gi * size + j] = h * gv[c] + bv[c];
        }
    }
    let shape = t.shape(x).to_vec();
    t.push_op(Tensor::new(&shape, out), &[x, gamma, beta], NormOp { xhat, rstd, layout })
}

/// Group normalisation over `(batch, channels, len)`.
pub fn group_norm(t: &mut Tape, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    if xs.len() != 3 || groups == 0 || xs[1] % groups != 0 {
        return Err(shape_err!("group_norm x {xs:?} groups {groups}"));
    }
    if t.shape(gamma) != [xs[1]] || t.shape(beta) != [xs[1]] {
        return Err(shape_err!("group_norm affine params for {} channels", xs[1]));
    }
    let layout = NormLayout::Group {
        batch: xs[0],
        channels: xs[1],
        len: xs[2],
        groups,
    };
    Ok(normalize(t, x, gamma, beta, layout, eps))
}

/// Layer normalisation over the last axis.
pub fn layer_norm(t: &mut Tape, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let dim = *xs.last().unwrap_or(&0);
    if t.shape(gamma) != [dim] || t.shape(beta) != [dim] {
        return Err(shape_err!("layer_norm x {xs:?} gamma {:?}", t.shape(gamma)));
    }
    let rows = t.value(x).len() / dim.max(1);
    Ok(normalize(t, x, gamma, beta, NormLayout::Layer { rows, dim }, eps))
}

// ---------------------------------------------------------------- attention

struct MhaOp {
    batch: usize,
    nq: usize,
    nk: usize,
    heads: usize,
    dk: usize,
    dv: usize,
    scale: f64,
    /// Softmax weights `(batch, heads, nq, nk)`.
    attn: Vec<f64>,
}

impl Backward for MhaOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (q, k, v) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let MhaOp { batch, nq, nk, heads, dk, dv, scale, .. } = *self;
        let (wk, wv) = (heads * dk, heads * dv);
        let mut ga = vec![0.0; nk];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..nq {
                    let a = &self.attn[((b * heads + h) * nq + i) * nk..][..nk];
                    let go = &g[(b * nq + i) * wv + h * dv..][..dv];
                    for j in 0..nk {
                        let vj = &v[(b * nk + j) * wv + h * dv..][..dv];
                        ga[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                        if let Some(gv) = &mut grads[2] {
                            let gvj = &mut gv[(b * nk + j) * wv + h * dv..][..dv];
                            for e in 0..dv {
                                gvj[e] += a[j] * go[e];
                            }
                        }
                    }
                    let dot: f64 = ga.iter().zip(a).map(|(x, y)| x * y).sum();
                    for j in 0..nk {
                        let gs = a[j] * (ga[j] - dot) * scale;
                        if gs == 0.0 {
                            continue;
                        }
                        if let Some(gq) = &mut grads[0] {
                            let kj = &k[(b * nk + j) * wk + h * dk..][..dk];
                            let gqi = &mut gq[(b * nq + i) * wk + h * dk..][..dk];
                            for e in 0..dk {
                                gqi[e] += gs * kj[e];
                            }
                        }
                        if let Some(gk) = &mut grads[1] {
                            let qi = &q[(b * nq + i) * wk + h * dk..][..dk];
                            let gkj = &mut gk[(b * nk + j) * wk + h * dk..][..dk];
                            for e in 0..dk {
                                gkj[e] += gs * qi[e];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in x.iter_mut() {
        *v = libm::exp(*v - m);
        z += *v;
    }
    for v in x.iter_mut() {
        *v /= z;
    }
}

/// Softmax attention weights `(batch, heads, nq, nk)` for a recorded attention node.
pub fn attention_weights(t: &Tape, q: Var, k: Var, heads: usize) -> Result<Vec<f64>> {
    let (qs, ks) = (t.shape(q), t.shape(k));
    if qs.len() != 3 || ks.len() != 3 || qs[2] != ks[2] || qs[0] != ks[0] || heads == 0 || qs[2] % heads != 0 {
        return Err(shape_err!("attention weights q {qs:?} k {ks:?} heads {heads}"));
    }
    let (batch, nq, nk, wk) = (qs[0], qs[1], ks[1], qs[2]);
    let dk = wk / heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let (qv, kv) = (t.value(q).data(), t.value(k).data());
    let mut attn = vec![0.0; batch * heads * nq * nk];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..nq {
                let qi = &qv[(b * nq + i) * wk + h * dk..][..dk];
                let row = &mut attn[((b * heads + h) * nq + i) * nk..][..nk];
                for j in 0..nk {
                    let kj = &kv[(b * nk + j) * wk + h * dk..][..dk];
                    row[j] = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                }
                softmax_in_place(row);
            }
        }
    }
    Ok(attn)
}

/// Scaled dot-product attention. `q`: `(batch, nq, dk_total)`, `k`: `(batch, nk, dk_total)`,
/// `v`: `(batch, nk, dv_total)`. Both widths are split into `heads` equal slices and
/// logits are scaled by `1/sqrt(dk_total / heads)`.
pub fn multi_head_attention(t: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let (qs, ks, vs) = (t.shape(q).to_vec(), t.shape(k).to_vec(), t.shape(v).to_vec());
    if vs.len() != 3 || vs[0] != ks[0] || vs[1] != ks[1] || heads == 0 || vs[2] % heads != 0 {
        return Err(shape_err!("attention q {qs:?} k {ks:?} v {vs:?} heads {heads}"));
    }
    let attn = attention_weights(t, q, k, heads)?;
    let (batch, nq, nk) = (qs[0], qs[1], ks[1]);
    let (dk, dv) = (qs[2] / heads, vs[2] / heads);
    let wv = vs[2];
    let vv = t.value(v).data();
    let mut out = vec![0.0; batch * nq * wv];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..nq {
                let row = &attn[((b * heads + h) * nq + i) * nk..][..nk];
                let oi = &mut out[(b * nq + i) * wv + h * dv..][..dv];
                for j in 0..nk {
                    let vj = &vv[(b * nk + j) * wv + h * dv..][..dv];
                    for e in 0..dv {
                        oi[e] += row[j] * vj[e];
                    }
                }
            }
        }
    }
    let scale = 1.0 / libm::sqrt(dk as f64);
    let op = MhaOp { batch, nq, nk, heads, dk, dv, scale, attn };
    Ok(t.push_op(Tensor::new(&[batch, nq, wv], out), &[q, k, v], op))
}

struct SelectLastOp {
    idx: Vec<usize>,
    width: usize,
}
impl Backward for SelectLastOp {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(d) = &mut grads[0] {
            let m = self.idx.len();
            for (r, row) in g.chunks(m).enumerate() {
                for (k, &i) in self.idx.iter().enumerate() {
                    d[r * self.width + i] += row[k];
                }
            }
        }
    }
}

/// Picks the given entries of the last axis.
pub fn select_last(t: &mut Tape, x: Var, idx: &[usize]) -> Result<Var> {
    let mut shape = t.shape(x).to_vec();
    let width = *shape.last().unwrap_or(&0);
    if idx.iter().any(|&i| i >= width) {
        return Err(shape_err!("select_last index out of range for {shape:?}"));
    }
    let out: Vec<f64> = t
        .value(x)
        .data()
        .chunks(width)
        .flat_map(|row| idx.iter().map(move |&i| row[i]))
        .collect();
    *shape.last_mut().unwrap() = idx.len();
    let op = SelectLastOp { idx: idx.to_vec(), width };
    Ok(t.push_op(Tensor::new(&shape, out), &[x], op))
}
