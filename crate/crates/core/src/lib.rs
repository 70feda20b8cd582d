//! Mixed-effects neural ODEs for panel data.
//!
//! Subjects share population-level dynamics `ż = Γ(z)·w` where the mixed
//! effect `w = β + b` is drawn once per subject. The crate bundles the pieces
//! needed to fit and use such models without an external ML framework:
//!
//! * [`autodiff`]: dense `f64` tensors and a define-by-run reverse-mode tape.
//! * [`ode`] and [`sde`]: fixed-step solvers (differentiable by unrolling) and
//!   a Stratonovich Euler–Heun integrator with a random-coefficient ODE
//!   ensemble for comparison.
//! * [`model`]: encoder, drift network, decoder and the mixed-effect posterior.
//! * [`train`]: the rejection-sampled (best-of-M) ELBO objective and the
//!   optimisation loop.
//! * [`calibrate`]: test-time selection of a personalised `w`.
//! * [`data`] and [`metrics`]: synthetic panels, per-step errors and
//!   permutation tests.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod autodiff;
pub mod calibrate;
pub mod data;
mod error;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod ode;
mod par;
pub mod rng;
pub mod sde;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
