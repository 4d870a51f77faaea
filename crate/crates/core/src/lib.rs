//! Simulators, exact oracles and limit formulas for current fluctuations in
//! one-dimensional particle systems.
//!
//! The crate covers five model families:
//!
//! * independent random walks ([`iid`]) with an exact finite-n covariance oracle,
//! * random walks in a random environment ([`rwre`]),
//! * the random average process ([`rap`]),
//! * the asymmetric simple exclusion process ([`asep`]) with its couplings,
//! * the totally asymmetric zero-range process ([`zrp`]).
//!
//! [`gauss`] evaluates the Gaussian limit covariances, [`oracle`] builds exact
//! generators of small systems, and [`harness`] holds the Monte Carlo
//! accumulators and fits. [`experiment`] ties them into a JSON-configured runner.
//!
//! All randomness is counter based ([`rng`]): every random quantity is a pure
//! function of `(seed, stream, index)`, so coupled processes share clocks by
//! construction and results do not depend on scheduling.

pub mod asep;
pub mod error;
pub mod experiment;
pub mod gauss;
pub mod harness;
pub mod iid;
pub mod oracle;
pub mod quad;
pub mod rap;
pub mod real;
pub mod rng;
pub mod rwre;
pub mod zrp;

pub use error::{Error, Result};
