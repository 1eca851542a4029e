//! Dynamic spatiotemporal stochastic volatility models.
//!
//! The log-volatility of an `n`-site panel follows a general space-time
//! filter with spatial (`rho1`), temporal (`rho2`) and spatiotemporal
//! (`rho3`) spillovers plus time-invariant site effects:
//!
//! ```text
//! h_t - mu = rho1 W (h_t - mu) + rho2 (h_{t-1} - mu) + rho3 W (h_{t-1} - mu) + U_t
//! y_it     = exp(h_it / 2) v_it
//! ```
//!
//! The crate covers weights construction ([`weights`]), the log-chi-square
//! mixture approximation ([`mixture`]), the structured precision algebra
//! ([`spacetime`]), simulation ([`dgp`]), closed-form moments ([`moments`]),
//! the five-step Gibbs sampler ([`gibbs`]) and file I/O ([`io`]).

pub mod blocktri;
pub mod dgp;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod mixture;
pub mod moments;
pub mod rng;
pub mod spacetime;
pub mod stats;
pub mod weights;

pub use error::{Error, Result};
pub use spacetime::SpilloverParams;
pub use weights::WeightsMatrix;
