//! Sequentially additive nonignorable (SAN) missing-data models on finite
//! categorical spaces.
//!
//! The crate provides, from the bottom up:
//!
//! * **Table algebra** ([`space`], [`table`], [`observed`]): exact dense
//!   probability tables, marginals, conditionals, moments, and the reduction
//!   of a full-data law over `(X, Y, M)` to its observed-data distribution.
//! * **f-projections** ([`link`], [`projection`]): for a link `λ` and odds
//!   factor `c`, the strictly convex generator `f_λ` and the projection of a
//!   table onto linear constraint sets (a fixed marginal plus moment
//!   conditions), solved exactly via a damped Newton method on the dual.
//! * **SAN models** ([`san`], [`reconstruct`]): sequentially additive
//!   nonignorable missingness mechanisms over an ordered Y block, the six
//!   standard submodels, simulation, and the backward identification pipeline
//!   that rebuilds a full-data law from the observed-data distribution plus
//!   auxiliary marginal information.
//! * **Bayesian inference** ([`inference`]): posterior sampling for the
//!   mechanism, outcome, and margin parameters by Gibbs sampling with exact
//!   discrete imputation and Polya-Gamma, probit data-augmentation, or
//!   random-walk coefficient updates.
//! * **File formats and the command-line front end** ([`io`], [`cli`]).
//!
//! # Example
//!
//! ```
//! use sanmiss::space::build_space;
//! use sanmiss::table::ProbTable;
//!
//! let vs = build_space(
//!     &[("x", &["no", "yes"]), ("y", &["low", "high"])],
//!     &["y"],
//! )?;
//! let joint = ProbTable::from_weights(vs.space().clone(), vec![4.0, 2.0, 1.0, 3.0])?;
//! let y_margin = joint.marginalize(&["y"])?;
//! assert!((y_margin.mass()[0] - 0.5).abs() < 1e-15);
//! # Ok::<(), sanmiss::error::Error>(())
//! ```

pub mod cli;
pub mod data;
pub mod error;
pub mod inference;
pub mod io;
pub mod link;
pub mod observed;
pub mod oracle;
pub mod projection;
pub mod reconstruct;
pub mod san;
pub mod space;
pub mod table;

pub use error::{Error, Result};
