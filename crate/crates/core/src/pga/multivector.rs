use core::ops::{Add, AddAssign, BitXor, Index, IndexMut, Mul, Neg, Sub};

use super::basis::{DIM, DUAL, E0_LEFT, EUCLIDEAN_BLADES, GP_TERMS, GRADES, WEDGE_TERMS};
use crate::error::{Error, Result};

/// `(-1)^(k(k-1)/2)` per blade.
pub(crate) const REVERSE_SIGN: [f64; DIM] = [
    1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, -1.0, 1.0,
];

/// Accumulates `a * b` into `out`.
#[inline]
pub(crate) fn gp_acc(a: &[f64], b: &[f64], out: &mut [f64]) {
    for &(i, j, k, s) in GP_TERMS.iter() {
        out[k] += s * a[i] * b[j];
    }
}

/// Accumulates `a ^ b` into `out`.
#[inline]
pub(crate) fn wedge_acc(a: &[f64], b: &[f64], out: &mut [f64]) {
    for &(i, j, k, s) in WEDGE_TERMS.iter() {
        out[k] += s * a[i] * b[j];
    }
}

#[inline]
pub(crate) fn dual_into(a: &[f64], out: &mut [f64]) {
    for (i, &(k, s)) in DUAL.iter().enumerate() {
        out[k] = s * a[i];
    }
}

/// Adjoint of [`dual_into`]: accumulates `D^T g` into `out`.
#[inline]
pub(crate) fn dual_transpose_acc(g: &[f64], out: &mut [f64]) {
    for (i, &(k, s)) in DUAL.iter().enumerate() {
        out[i] += s * g[k];
    }
}

/// `(dual(a) ^ dual(b))` dualized again, written into `out`.
#[inline]
pub(crate) fn join_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let mut da = [0.0; DIM];
    let mut db = [0.0; DIM];
    let mut w = [0.0; DIM];
    dual_into(a, &mut da);
    dual_into(b, &mut db);
    wedge_acc(&da, &db, &mut w);
    dual_into(&w, out);
}

/// Euclidean-part inner product: sum over blades without e0.
#[inline]
pub(crate) fn inner_invariant(a: &[f64], b: &[f64]) -> f64 {
    EUCLIDEAN_BLADES.iter().map(|&i| a[i] * b[i]).sum()
}

/// A multivector of G(3,0,1); see [`crate::pga::basis`] for the coefficient order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Multivector(pub [f64; DIM]);

impl Multivector {
    pub const ZERO: Self = Self([0.0; DIM]);

    pub const fn from_coeffs(coeffs: [f64; DIM]) -> Self {
        Self(coeffs)
    }

    pub fn coeffs(&self) -> &[f64; DIM] {
        &self.0
    }

    pub fn scalar(s: f64) -> Self {
        let mut m = Self::ZERO;
        m.0[0] = s;
        m
    }

    /// Unit basis blade `index`.
    pub fn blade(index: usize) -> Self {
        let mut m = Self::ZERO;
        m.0[index] = 1.0;
        m
    }

    pub fn pseudoscalar() -> Self {
        Self::blade(15)
    }

    pub fn from_slice(s: &[f64]) -> Self {
        let mut m = Self::ZERO;
        m.0.copy_from_slice(s);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.is_finite())
    }

    /// Euclidean norm over all 16 coefficients (not a geometric invariant).
    pub fn coeff_norm(&self) -> f64 {
        libm::sqrt(self.0.iter().map(|c| c * c).sum())
    }

    pub fn geometric_product(&self, other: &Self) -> Self {
        let mut out = Self::ZERO;
        gp_acc(&self.0, &other.0, &mut out.0);
        out
    }

    pub fn outer_product(&self, other: &Self) -> Self {
        let mut out = Self::ZERO;
        wedge_acc(&self.0, &other.0, &mut out.0);
        out
    }

    pub fn inner_product_invariant(&self, other: &Self) -> f64 {
        inner_invariant(&self.0, &other.0)
    }

    /// Right-complement dual, normalised so that `b ^ dual(b) = +e0123`.
    pub fn dual(&self) -> Self {
        let mut out = Self::ZERO;
        dual_into(&self.0, &mut out.0);
        out
    }

    pub fn join(&self, other: &Self) -> Self {
        let mut out = Self::ZERO;
        join_into(&self.0, &other.0, &mut out.0);
        out
    }

    pub fn reverse(&self) -> Self {
        let mut out = *self;
        for (c, s) in out.0.iter_mut().zip(REVERSE_SIGN) {
            *c *= s;
        }
        out
    }

    pub fn grade_project(&self, k: usize) -> Result<Self> {
        if k > 4 {
            return Err(Error::InvalidGrade(k));
        }
        let mut out = Self::ZERO;
        for i in 0..DIM {
            if GRADES[i] == k {
                out.0[i] = self.0[i];
            }
        }
        Ok(out)
    }

    /// Left multiplication by e0.
    pub fn e0_left(&self) -> Self {
        let mut out = Self::ZERO;
        for (i, t) in E0_LEFT.iter().enumerate() {
            if let Some(j) = t {
                out.0[*j] = self.0[i];
            }
        }
        out
    }
}

impl Index<usize> for Multivector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Multivector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl Add for Multivector {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl AddAssign for Multivector {
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for Multivector {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        self
    }
}

impl Neg for Multivector {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl Mul<f64> for Multivector {
    type Output = Self;
    fn mul(mut self, rhs: f64) -> Self {
        for a in self.0.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

/// Geometric product.
impl Mul for Multivector {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.geometric_product(&rhs)
    }
}

/// Outer (wedge) product.
impl BitXor for Multivector {
    type Output = Self;
    fn bitxor(self, rhs: Self) -> Self {
        self.outer_product(&rhs)
    }
}

pub fn geometric_product(a: &Multivector, b: &Multivector) -> Multivector {
    a.geometric_product(b)
}

pub fn outer_product(a: &Multivector, b: &Multivector) -> Multivector {
    a.outer_product(b)
}

pub fn inner_product_invariant(a: &Multivector, b: &Multivector) -> f64 {
    a.inner_product_invariant(b)
}

pub fn dual(a: &Multivector) -> Multivector {
    a.dual()
}

pub fn join(a: &Multivector, b: &Multivector) -> Multivector {
    a.join(b)
}

pub fn reverse(a: &Multivector) -> Multivector {
    a.reverse()
}

pub fn grade_project(a: &Multivector, k: usize) -> Result<Multivector> {
    a.grade_project(k)
}
