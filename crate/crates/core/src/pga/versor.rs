use super::basis::GRADES;
use super::multivector::Multivector;
use super::quat::UnitQuaternion;
use crate::error::{Error, Result};

/// Largest accepted `|v rev(v) - 1|` for a versor.
pub const VERSOR_TOL: f64 = 1e-6;

/// Even-grade unit element encoding a proper rigid motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Versor(Multivector);

fn versor_deviation(v: &Multivector) -> f64 {
    let mut odd = 0.0f64;
    for (i, c) in v.0.iter().enumerate() {
        if GRADES[i] % 2 == 1 {
            odd = odd.max(libm::fabs(*c));
        }
    }
    let n = *v * v.reverse() - Multivector::scalar(1.0);
    let dev = n.0.iter().fold(0.0f64, |m, c| m.max(libm::fabs(*c)));
    dev.max(odd)
}

impl Versor {
    pub fn new(mv: Multivector) -> Result<Self> {
        let deviation = versor_deviation(&mv);
        if !(deviation <= VERSOR_TOL) {
            return Err(Error::InvalidVersor { deviation });
        }
        Ok(Self(mv))
    }

    pub fn identity() -> Self {
        Self(Multivector::scalar(1.0))
    }

    /// Rotor for a unit quaternion (same coefficients as the orientation embedding).
    pub fn rotor(q: UnitQuaternion) -> Self {
        let mut m = Multivector::ZERO;
        m[0] = q.w;
        m[8] = -q.z;
        m[9] = q.y;
        m[10] = -q.x;
        Self(m)
    }

    /// Translator moving dual-form points by `+d`: `1 - (d/2) . (e01, e02, e03)`.
    pub fn translator(d: [f64; 3]) -> Self {
        let mut m = Multivector::scalar(1.0);
        m[5] = -0.5 * d[0];
        m[6] = -0.5 * d[1];
        m[7] = -0.5 * d[2];
        Self(m)
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Versor) -> Self {
        Self(self.0 * first.0)
    }

    pub fn as_multivector(&self) -> &Multivector {
        &self.0
    }

    /// `v x rev(v)`.
    pub fn apply(&self, x: &Multivector) -> Multivector {
        self.0 * *x * self.0.reverse()
    }
}

/// Validating sandwich product `v x rev(v)`.
pub fn sandwich(v: &Multivector, x: &Multivector) -> Result<Multivector> {
    Ok(Versor::new(*v)?.apply(x))
}
