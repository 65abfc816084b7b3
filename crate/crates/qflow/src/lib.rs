//! Dynamic optimal transport between two sampled distributions, learned as a
//! neural-ODE velocity field, plus infinitesimal density ratio estimation
//! along the learned flow.
//!
//! The pieces, bottom up:
//!
//! - [`array`] / [`rng`]: dense rank-≤2 `f64` arrays and a fixed,
//!   platform-independent random stream (xoshiro256++ / Box–Muller).
//! - [`autodiff`]: a small reverse-mode tape, differentiated end to end
//!   through every loss including the Runge–Kutta integration steps.
//! - [`nn`]: time-augmented MLPs and Adam.
//! - [`ode`]: fixed-grid RK4 integration of the velocity field in both time
//!   directions — the solution maps that transport samples.
//! - [`losses`]: classifier (logistic) losses, classifier-based KL
//!   estimates, the discrete kinetic-energy transport cost, and the
//!   trigonometric-interpolant matching loss used for initialization.
//! - [`flow`]: the end-to-end pipeline — interpolant initialization and
//!   bi-directional refinement with inner-loop classifier training.
//! - [`ratio`]: the flow-ratio network estimating the time score
//!   `∂ₜ log p(x,t)`, whose time integral yields `log(q/p)`.
//! - [`data`]: seeded synthetic generators for every built-in task.
//! - [`oracle`]: closed-form ground truths (Gaussian transport maps, mixture
//!   densities, exact small-sample assignment, mutual information).
//! - [`metrics`]: evaluation metrics computed against those oracles.

pub mod array;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod flow;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod ode;
pub mod oracle;
pub mod ratio;
pub mod rng;

pub use array::Array;
pub use error::Error;
