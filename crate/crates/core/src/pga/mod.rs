//! Exact arithmetic for the projective geometric algebra G(3,0,1).

pub mod basis;
pub mod convert;
mod multivector;
pub mod quat;
pub mod versor;

pub use basis::{build_cayley_table, BasisBlade, CayleyTable, BLADE_NAMES, DIM, GRADES};
pub use convert::{embed, extract, Entity, EntityKind};
pub use multivector::{
    dual, geometric_product, grade_project, inner_product_invariant, join, outer_product, reverse,
    Multivector,
};
pub(crate) use multivector::{
    dual_into, dual_transpose_acc, gp_acc, join_into,
};
pub use quat::UnitQuaternion;
pub use versor::{sandwich, Versor};
