use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by [`UnitQuaternion::new`].
pub const UNIT_TOL: f64 = 1e-6;

/// Unit quaternion `w + x i + y j + z k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Accepts the components as given if the norm is within [`UNIT_TOL`] of one.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = libm::sqrt(w * w + x * x + y * y + z * z);
        if !norm.is_finite() || libm::fabs(norm - 1.0) > UNIT_TOL {
            return Err(Error::NonUnitQuaternion { norm });
        }
        Ok(Self { w, x, y, z })
    }

    /// Normalises arbitrary components; fails on (near) zero norm.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let norm = libm::sqrt(w * w + x * x + y * y + z * z);
        if !(norm >= 1e-9) || !norm.is_finite() {
            return Err(Error::DegenerateOrientation { norm });
        }
        Ok(Self {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = libm::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
        if n < 1e-15 {
            return Self::IDENTITY;
        }
        let (s, c) = (libm::sin(angle / 2.0), libm::cos(angle / 2.0));
        Self {
            w: c,
            x: s * axis[0] / n,
            y: s * axis[1] / n,
            z: s * axis[2] / n,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn conjugate(self) -> Self {
        Self {
            w: self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Hamilton product `self * rhs`.
    pub fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self, rhs);
        Self {
            w: a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            x: a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            y: a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            z: a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        }
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    /// Flips the sign so that `w >= 0`.
    pub fn canonical(self) -> Self {
        if self.w < 0.0 {
            Self {
                w: -self.w,
                x: -self.x,
                y: -self.y,
                z: -self.z,
            }
        } else {
            self
        }
    }

    /// Rotates a 3-vector.
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let p = Self {
            w: 0.0,
            x: v[0],
            y: v[1],
            z: v[2],
        };
        let r = self.mul(p).mul(self.conjugate());
        [r.x, r.y, r.z]
    }

    /// Geodesic angle between the rotations, in `[0, pi]`.
    pub fn angle_to(self, other: Self) -> f64 {
        let d = libm::fabs(self.dot(other)).min(1.0);
        2.0 * libm::acos(d)
    }

    /// Spherical interpolation along the shorter arc.
    pub fn slerp(self, other: Self, t: f64) -> Self {
        let mut b = other;
        let mut d = self.dot(other);
        if d < 0.0 {
            b = Self {
                w: -b.w,
                x: -b.x,
                y: -b.y,
                z: -b.z,
            };
            d = -d;
        }
        let (wa, wb) = if d > 0.9995 {
            (1.0 - t, t)
        } else {
            let theta = libm::acos(d.min(1.0));
            let s = libm::sin(theta);
            (libm::sin((1.0 - t) * theta) / s, libm::sin(t * theta) / s)
        };
        let q = Self {
            w: wa * self.w + wb * b.w,
            x: wa * self.x + wb * b.x,
            y: wa * self.y + wb * b.y,
            z: wa * self.z + wb * b.z,
        };
        let n = libm::sqrt(q.dot(q));
        Self {
            w: q.w / n,
            x: q.x / n,
            y: q.y / n,
            z: q.z / n,
        }
    }
}
