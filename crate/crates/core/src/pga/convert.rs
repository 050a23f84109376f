//! Conversions between spatial entities and multivectors.
//!
//! * scalar `s` -> `s`
//! * direction `v` -> `v1 e1 + v2 e2 + v3 e3`
//! * point `x` -> `-x3 e012 + x2 e013 - x1 e023 + e123`
//! * unit quaternion `w + xi + yj + zk` -> `w - z e12 + y e13 - x e23`

use super::multivector::Multivector;
use super::quat::UnitQuaternion;
use crate::error::{Error, Result};

/// Smallest homogeneous weight / even-part norm accepted by [`extract`].
pub const EXTRACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Entity {
    Scalar(f64),
    Direction([f64; 3]),
    Point([f64; 3]),
    Quaternion(UnitQuaternion),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Scalar,
    Direction,
    Point,
    Quaternion,
}

pub fn embed_scalar(s: f64) -> Multivector {
    Multivector::scalar(s)
}

pub fn embed_direction(v: [f64; 3]) -> Multivector {
    let mut m = Multivector::ZERO;
    m[2] = v[0];
    m[3] = v[1];
    m[4] = v[2];
    m
}

pub fn embed_point(p: [f64; 3]) -> Multivector {
    let mut m = Multivector::ZERO;
    m[11] = -p[2];
    m[12] = p[1];
    m[13] = -p[0];
    m[14] = 1.0;
    m
}

pub fn embed_quaternion(q: UnitQuaternion) -> Multivector {
    let mut m = Multivector::ZERO;
    m[0] = q.w;
    m[8] = -q.z;
    m[9] = q.y;
    m[10] = -q.x;
    m
}

pub fn embed(entity: &Entity) -> Result<Multivector> {
    Ok(match *entity {
        Entity::Scalar(s) => embed_scalar(s),
        Entity::Direction(v) => embed_direction(v),
        Entity::Point(p) => embed_point(p),
        Entity::Quaternion(q) => {
            // Re-validate: the fields are public and may have been edited.
            let q = UnitQuaternion::new(q.w, q.x, q.y, q.z)?;
            embed_quaternion(q)
        }
    })
}

pub fn extract_point(mv: &Multivector) -> Result<[f64; 3]> {
    let w = mv[14];
    if !(libm::fabs(w) >= EXTRACT_EPS) {
        return Err(Error::PointAtInfinity { weight: w });
    }
    Ok([-mv[13] / w, mv[12] / w, -mv[11] / w])
}

pub fn extract_quaternion(mv: &Multivector) -> Result<UnitQuaternion> {
    UnitQuaternion::normalize(mv[0], -mv[10], mv[9], -mv[8])
}

pub fn extract(mv: &Multivector, kind: EntityKind) -> Result<Entity> {
    Ok(match kind {
        EntityKind::Scalar => Entity::Scalar(mv[0]),
        EntityKind::Direction => Entity::Direction([mv[2], mv[3], mv[4]]),
        EntityKind::Point => Entity::Point(extract_point(mv)?),
        EntityKind::Quaternion => Entity::Quaternion(extract_quaternion(mv)?),
    })
}
