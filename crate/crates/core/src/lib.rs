//! Symmetry-reduced L² curvature flow.
//!
//! The negative gradient flow of `F(g) = ∫ |Rm|² dV` restricted to two
//! symmetric classes of metrics:
//!
//! * cohomogeneity-one warped products `g = φ(x)² dx² + ψ(x)² g_Σ` over a
//!   circle (`Σ × S¹`) or an interval with pole conditions (`SO(3)`-invariant
//!   metrics on `S³`), see [`geometry`] and [`flow`];
//! * homogeneous products of round spheres and flat factors, which reduce to
//!   ODEs in the factor scales, see [`reduced_ode`].
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation; file formats and the command line live in the companion
//! `l2flow` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
mod interp;
mod linalg;
pub mod reduced_ode;
pub mod spectral;
mod stencil;

pub use error::{Error, Result};
