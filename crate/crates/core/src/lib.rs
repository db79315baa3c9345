//! Finite-difference solvers for stiff Lotka-Volterra population models in
//! Hopf-Cole form, together with the limit scheme for the constrained
//! Hamilton-Jacobi equation they concentrate onto.
//!
//! The library is organised around two explicit-in-trait, implicit-in-scalar
//! time steppers:
//!
//! * [`stepper_eps`] advances the stiff problem for a mutation scale
//!   `eps > 0`; every step solves a scalar fixed-point equation for the total
//!   population `I`.
//! * [`stepper_limit`] advances the `eps = 0` limit, where the scalar `J`
//!   plays the role of a Lagrange multiplier enforcing `min v = 0`.
//!
//! Both share the monotone Hamiltonian machinery in [`hamiltonian`], the
//! lattice plumbing in [`grid`], and the problem data in [`model`].
//! [`analysis`] contains the error norms and study drivers used by the CLI
//! (`apsolve`) to reproduce the stability, convergence and uniform-accuracy
//! experiments; [`cli`] holds the config parser and command dispatch.

// `!(x > 0.0)` guards are deliberate: they reject NaN along with the sign.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cli;
pub mod error;
pub mod grid;
pub mod hamiltonian;
pub mod model;
pub mod runs;
pub mod stepper_eps;
pub mod stepper_limit;
pub mod trajectory;

pub use error::SolverError;
pub use grid::{Grid, State, TruncationPolicy};
pub use hamiltonian::{CflMode, CflSpec};
pub use model::{Model, ModelConstants};
pub use trajectory::Trajectory;
