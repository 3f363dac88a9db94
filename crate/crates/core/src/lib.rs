//! Numerical laboratory for convex-integration constructions of bounded,
//! non-unique weak solutions of the 2-D incompressible porous media equation
//! on the flat torus `[0,1)²`.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: the state space, its matrix embedding, the wave cone and
//!   distances to the constraint set `K = {(ρ, v, ρv)}`.
//! * [`hull`]: degenerate T4 configurations, the relaxed sets built around
//!   them, hull membership with witnesses and the staircase laminate.
//! * [`wave`]: saw-tooth profiles, the divergence-free potential and
//!   localized plane-wave patches; [`cover`] packs disjoint balls into a
//!   region.
//! * [`construct`]: subsolutions as patch forests and the iterative
//!   perturbation rounds.
//! * [`verify`]: quadrature checks of the weak identities, constraint
//!   statistics, weak traces and Sobolev diagnostics.
//! * [`testfn`], [`quadrature`] and [`patchquad`]: test functions and the
//!   rules that integrate against them.
//! * [`suite`]: property suites shared by the runner and the acceptance run.
//! * [`config`]: run configuration shared by the command-line runner.

pub mod config;
pub mod construct;
pub mod cover;
pub mod error;
pub mod geometry;
pub mod hull;
pub mod patchquad;
pub mod quadrature;
pub mod suite;
pub mod testfn;
pub mod verify;
pub mod wave;

pub use error::{ConstructError, HullError, VerifyError, WaveError};
pub use geometry::StateU;
