//! Multivector tape primitives. Every tensor here ends in `(channels, 16)`;
//! leading axes are tokens.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::ops::{gelu, gelu_grad, gemm, multi_head_attention, reshape, select_last};
use crate::autodiff::{Backward, Ctx, Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::pga::basis::{E0_LEFT, EUCLIDEAN_BLADES};
use crate::pga::basis::{GP_TERMS, WEDGE_TERMS};
use crate::pga::{dual_into, dual_transpose_acc, gp_acc, join_into, DIM, GRADES};

/// Epsilon added under the square root of [`equi_layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-8;

/// Number of independent grade weights `w_k` and e0 weights `v_k`.
pub const N_GRADE_WEIGHTS: usize = 5;
pub const N_E0_WEIGHTS: usize = 4;

fn mv_dims(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape[shape.len() - 1] != DIM {
        return Err(shape_err!("{what}: expected (..., C, 16), got {shape:?}"));
    }
    let c = shape[shape.len() - 2];
    let n = shape[..shape.len() - 2].iter().product();
    Ok((n, c))
}

// ---------------------------------------------------------------- equi_linear

struct EquiLinearOp {
    n: usize,
    cin: usize,
    cout: usize,
}

impl Backward for EquiLinearOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (x, w, v) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let EquiLinearOp { n, cin, cout } = *self;
        for b in 0..DIM {
            let gr = GRADES[b];
            let target = E0_LEFT[b];
            if let Some(gx) = &mut grads[0] {
                gemm(n, cout, cin, &g[b..], cout * DIM, DIM, &w[gr..], cin * 5, 5, 1.0, &mut gx[b..], cin * DIM, DIM);
                if let Some(t) = target {
                    gemm(n, cout, cin, &g[t..], cout * DIM, DIM, &v[gr..], cin * 4, 4, 1.0, &mut gx[b..], cin * DIM, DIM);
                }
            }
            if let Some(gw) = &mut grads[1] {
                gemm(cout, n, cin, &g[b..], DIM, cout * DIM, &x[b..], cin * DIM, DIM, 1.0, &mut gw[gr..], cin * 5, 5);
            }
            if let (Some(gv), Some(t)) = (&mut grads[2], target) {
                gemm(cout, n, cin, &g[t..], DIM, cout * DIM, &x[b..], cin * DIM, DIM, 1.0, &mut gv[gr..], cin * 4, 4);
            }
        }
    }
}

/// `out_o = sum_i sum_k w[o,i,k] <x_i>_k + sum_{k<4} v[o,i,k] e0 <x_i>_k`.
///
/// `x`: `(..., cin, 16)`, `w`: `(cout, cin, 5)`, `v`: `(cout, cin, 4)`.
pub fn equi_linear(t: &mut Tape, x: Var, w: Var, v: Var) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let (n, cin) = mv_dims(&xs, "equi_linear")?;
    let (ws, vs) = (t.shape(w), t.shape(v));
    if ws.len() != 3 || ws[1] != cin || ws[2] != N_GRADE_WEIGHTS || vs.len() != 3 || vs[..2] != ws[..2] || vs[2] != N_E0_WEIGHTS {
        return Err(shape_err!("equi_linear: x {xs:?}, w {ws:?}, v {vs:?}"));
    }
    let cout = ws[0];
    let (xd, wd, vd) = (t.value(x).data(), t.value(w).data(), t.value(v).data());
    let mut out = vec![0.0; n * cout * DIM];
    for b in 0..DIM {
        let gr = GRADES[b];
        gemm(n, cin, cout, &xd[b..], cin * DIM, DIM, &wd[gr..], 5, cin * 5, 1.0, &mut out[b..], cout * DIM, DIM);
        if let Some(tg) = E0_LEFT[b] {
            gemm(n, cin, cout, &xd[b..], cin * DIM, DIM, &vd[gr..], 4, cin * 4, 1.0, &mut out[tg..], cout * DIM, DIM);
        }
    }
    let mut shape = xs;
    let l = shape.len();
    shape[l - 2] = cout;
    Ok(t.push_op(Tensor::new(&shape, out), &[x, w, v], EquiLinearOp { n, cin, cout }))
}

// ---------------------------------------------------------------- bilinear

struct BilinearOp {
    n: usize,
    c: usize,
}

impl Backward for BilinearOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let (x, y, r) = (ctx.input(0).data(), ctx.input(1).data(), ctx.input(2).data());
        let (n, c) = (self.n, self.c);
        for tok in 0..n {
            let z = r[tok * DIM + 15];
            let mut gz = 0.0;
            for ch in 0..c {
                let off = (tok * c + ch) * DIM;
                let (a, b) = (&x[off..off + DIM], &y[off..off + DIM]);
                let g_gp = &g[(tok * 2 * c + ch) * DIM..][..DIM];
                let g_j = &g[(tok * 2 * c + c + ch) * DIM..][..DIM];
                let mut gx = [0.0; DIM];
                let mut gy = [0.0; DIM];
                for &(i, j, k, s) in GP_TERMS.iter() {
                    gx[i] += s * g_gp[k] * b[j];
                    gy[j] += s * a[i] * g_gp[k];
                }
                // join = D(W(D a, D b)), scaled by z
                let mut jn = [0.0; DIM];
                join_into(a, b, &mut jn);
                gz += g_j.iter().zip(&jn).map(|(p, q)| p * q).sum::<f64>();
                let mut gw = [0.0; DIM];
                let scaled: [f64; DIM] = core::array::from_fn(|k| z * g_j[k]);
                dual_transpose_acc(&scaled, &mut gw);
                let (mut da, mut db) = ([0.0; DIM], [0.0; DIM]);
                dual_into(a, &mut da);
                dual_into(b, &mut db);
                let (mut gda, mut gdb) = ([0.0; DIM], [0.0; DIM]);
                for &(i, j, k, s) in WEDGE_TERMS.iter() {
                    gda[i] += s * gw[k] * db[j];
                    gdb[j] += s * da[i] * gw[k];
                }
                dual_transpose_acc(&gda, &mut gx);
                dual_transpose_acc(&gdb, &mut gy);
                if let Some(d) = &mut grads[0] {
                    for (p, q) in d[off..off + DIM].iter_mut().zip(&gx) {
                        *p += q;
                    }
                }
                if let Some(d) = &mut grads[1] {
                    for (p, q) in d[off..off + DIM].iter_mut().zip(&gy) {
                        *p += q;
                    }
                }
            }
            if let Some(d) = &mut grads[2] {
                d[tok * DIM + 15] += gz;
            }
        }
    }
}

/// Channel concatenation `[x y, z_0123 * join(x, y)]` with `z` read per token
/// from the pseudoscalar slot of `reference`.
///
/// `x`, `y`: `(..., C, 16)`; `reference`: `(..., 16)`; output `(..., 2C, 16)`.
pub fn bilinear_features(t: &mut Tape, x: Var, y: Var, reference: Var) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let (n, c) = mv_dims(&xs, "geometric_bilinear")?;
    let rs = t.shape(reference);
    let rn: usize = rs[..rs.len().saturating_sub(1)].iter().product();
    if t.shape(y) != xs.as_slice() || rs.last() != Some(&DIM) || rn != n {
        return Err(shape_err!(
            "geometric_bilinear: x {xs:?}, y {:?}, ref {rs:?}",
            t.shape(y)
        ));
    }
    let (xd, yd, rd) = (t.value(x).data(), t.value(y).data(), t.value(reference).data());
    let mut out = vec![0.0; n * 2 * c * DIM];
    for tok in 0..n {
        let z = rd[tok * DIM + 15];
        for ch in 0..c {
            let off = (tok * c + ch) * DIM;
            let (a, b) = (&xd[off..off + DIM], &yd[off..off + DIM]);
            gp_acc(a, b, &mut out[(tok * 2 * c + ch) * DIM..][..DIM]);
            let dst = &mut out[(tok * 2 * c + c + ch) * DIM..][..DIM];
            join_into(a, b, dst);
            for v in dst.iter_mut() {
                *v *= z;
            }
        }
    }
    let mut shape = xs;
    let l = shape.len();
    shape[l - 2] = 2 * c;
    Ok(t.push_op(Tensor::new(&shape, out), &[x, y, reference], BilinearOp { n, c }))
}

// ---------------------------------------------------------------- gated gelu

struct GatedGeluOp;
impl Backward for GatedGeluOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let x = ctx.input(0).data();
        if let Some(d) = &mut grads[0] {
            for ((xm, gm), dm) in x.chunks(DIM).zip(g.chunks(DIM)).zip(d.chunks_mut(DIM)) {
                let s = gelu(xm[0]);
                let ds = gelu_grad(xm[0]);
                let dot: f64 = xm.iter().zip(gm).map(|(a, b)| a * b).sum();
                for k in 0..DIM {
                    dm[k] += s * gm[k];
                }
                dm[0] += ds * dot;
            }
        }
    }
}

/// `GELU(<x>_0) * x` per multivector.
pub fn gated_gelu(t: &mut Tape, x: Var) -> Result<Var> {
    mv_dims(t.shape(x), "gated_gelu")?;
    let mut out = t.value(x).data().to_vec();
    for m in out.chunks_mut(DIM) {
        let s = gelu(m[0]);
        for v in m.iter_mut() {
            *v *= s;
        }
    }
    let v = Tensor::new(t.shape(x), out);
    Ok(t.push_op(v, &[x], GatedGeluOp))
}

// ---------------------------------------------------------------- layer norm

struct EquiNormOp {
    c: usize,
    inv_r: Vec<f64>,
}

impl Backward for EquiNormOp {
    fn backward(&self, ctx: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let x = ctx.input(0).data();
        let w = self.c * DIM;
        if let Some(d) = &mut grads[0] {
            for (tok, &ir) in self.inv_r.iter().enumerate() {
                let (xt, gt) = (&x[tok * w..][..w], &g[tok * w..][..w]);
                let dot: f64 = xt.iter().zip(gt).map(|(a, b)| a * b).sum();
                let coef = dot * ir * ir * ir / self.c as f64;
                let dt = &mut d[tok * w..][..w];
                for ch in 0..self.c {
                    for k in 0..DIM {
                        dt[ch * DIM + k] += ir * gt[ch * DIM + k];
                    }
                    for &k in EUCLIDEAN_BLADES.iter() {
                        dt[ch * DIM + k] -= coef * xt[ch * DIM + k];
                    }
                }
            }
        }
    }
}

/// Divides each token by `sqrt(mean_c <x_c, x_c> + eps)`.
pub fn equi_layernorm(t: &mut Tape, x: Var, eps: f64) -> Result<Var> {
    let (n, c) = mv_dims(t.shape(x), "equi_layernorm")?;
    let mut out = t.value(x).data().to_vec();
    let mut inv_r = Vec::with_capacity(n);
    for tok in out.chunks_mut(c * DIM) {
        let ss: f64 = tok
            .chunks(DIM)
            .map(|m| EUCLIDEAN_BLADES.iter().map(|&k| m[k] * m[k]).sum::<f64>())
            .sum();
        let ir = 1.0 / libm::sqrt(ss / c as f64 + eps);
        for v in tok.iter_mut() {
            *v *= ir;
        }
        inv_r.push(ir);
    }
    let v = Tensor::new(t.shape(x), out);
    Ok(t.push_op(v, &[x], EquiNormOp { c, inv_r }))
}

// ---------------------------------------------------------------- attention

/// Multivector attention over tokens. `q`: `(batch, nq, C, 16)`, `k`, `v`: `(batch, nk, C, 16)`.
/// Channels are split into `heads` groups of `n_c`; logits are the invariant
/// inner product summed over a head's channels, scaled by `1/sqrt(8 n_c)`.
pub fn mv_attention(t: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let qs = t.shape(q).to_vec();
    let ks = t.shape(k).to_vec();
    if qs.len() != 4 || qs[3] != DIM || ks.len() != 4 || ks[0] != qs[0] || ks[2..] != qs[2..] || t.shape(v) != ks.as_slice() {
        return Err(shape_err!(
            "mv_attention: q {qs:?}, k {:?}, v {:?}",
            t.shape(k),
            t.shape(v)
        ));
    }
    let (b, n, m, c) = (qs[0], qs[1], ks[1], qs[2]);
    if heads == 0 || c % heads != 0 {
        return Err(shape_err!("mv_attention: {c} channels not divisible into {heads} heads"));
    }
    let qe = select_last(t, q, &EUCLIDEAN_BLADES)?;
    let ke = select_last(t, k, &EUCLIDEAN_BLADES)?;
    let qf = reshape(t, qe, &[b, n, c * EUCLIDEAN_BLADES.len()])?;
    let kf = reshape(t, ke, &[b, m, c * EUCLIDEAN_BLADES.len()])?;
    let vf = reshape(t, v, &[b, m, c * DIM])?;
    let o = multi_head_attention(t, qf, kf, vf, heads)?;
    reshape(t, o, &qs)
}

// ---------------------------------------------------------------- markers

struct AddGrade0Op;
impl Backward for AddGrade0Op {
    fn backward(&self, _: &Ctx<'_>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        if let Some(d) = &mut grads[0] {
            for (a, b) in d.iter_mut().zip(g) {
                *a += b;
            }
        }
        if let Some(d) = &mut grads[1] {
            let m = d.len();
            for (i, gm) in g.chunks(DIM).enumerate() {
                d[i % m] += gm[0];
            }
        }
    }
}

/// Adds `p` to the scalar slot of every multivector of `x`, broadcasting `p`
/// over leading axes. `x`: `(..., T, C, 16)`, `p`: `(T, C)`.
pub fn add_grade0(t: &mut Tape, x: Var, p: Var) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let ps = t.shape(p).to_vec();
    let total = t.value(x).len() / DIM;
    let m: usize = ps.iter().product();
    if xs.len() < ps.len() + 1 || xs[xs.len() - 1 - ps.len()..xs.len() - 1] != ps[..] || m == 0 {
        return Err(shape_err!("add_grade0: x {xs:?}, markers {ps:?}"));
    }
    let mut out = t.value(x).data().to_vec();
    let pd = t.value(p).data();
    for i in 0..total {
        out[i * DIM] += pd[i % m];
    }
    let v = Tensor::new(&xs, out);
    Ok(t.push_op(v, &[x, p], AddGrade0Op))
}

/// Gathers the multivectors of channel `ch`: `(..., C, 16)` to `(..., 16)`.
pub fn channel(t: &mut Tape, x: Var, ch: usize) -> Result<Var> {
    let xs = t.shape(x).to_vec();
    let (_, c) = mv_dims(&xs, "channel")?;
    if ch >= c {
        return Err(shape_err!("channel {ch} out of range for {xs:?}"));
    }
    let l = xs.len();
    let s = crate::autodiff::ops::slice(t, x, l - 2, ch, 1)?;
    let mut shape = xs[..l - 2].to_vec();
    shape.push(DIM);
    reshape(t, s, &shape)
}
