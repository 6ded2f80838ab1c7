//! Bounds for partially identifiable causal queries on discrete structural
//! causal models.
//!
//! The library takes a structural causal model (its equations, not its latent
//! distributions) together with a dataset of endogenous observations, and
//! answers interventional and counterfactual queries such as the probability
//! of necessity and sufficiency. Partially identifiable queries come back as
//! an interval:
//!
//! * [`credal`] maps the model and the empirical distribution to per-latent
//!   linear constraint sets, tests their feasibility, and optimizes the query
//!   over vertex combinations for exact bounds on quasi-Markovian models.
//! * [`emcc`] runs expectation maximization over the latent variables many
//!   times; accepted runs sample the compatible set and their query values
//!   give an inner range for the same interval on any semi-Markovian model.
//! * [`credible`] quantifies how close that inner range is to the exact
//!   bounds via Beta-model credible intervals.
//! * [`bench`] generates synthetic models and reproduces the accuracy-vs-runs
//!   experiment protocol.

pub mod bench;
pub mod credal;
pub mod credible;
pub mod data;
pub mod emcc;
mod exec;
mod index;
pub mod inference;
pub mod io;
pub mod model;
mod polytope;

pub use exec::ExecMode;
