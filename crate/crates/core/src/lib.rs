//! Projective geometric algebra diffusion policy core.
//!
//! `no_std` + `alloc`. File formats, training drivers and the CLI live in the
//! `hpga` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod pga;

pub mod autodiff;
pub mod denoise;
pub mod diffusion;
pub mod envs;
pub mod gradcheck;
pub mod mvstack;
pub mod nn;
pub mod policy;

pub use error::{Error, Result};
pub use mvstack::MvStack;
