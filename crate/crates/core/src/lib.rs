//! Prediction intervals for random-effects meta-analysis.
//!
//! The crate covers three layers:
//!
//! - [`model`] and [`freq`]: classical estimators (Q, I², DerSimonian–Laird and
//!   REML heterogeneity, Hartung–Knapp / Sidik–Jonkman variances) and the
//!   Higgins–Thompson–Spiegelhalter plug-in prediction interval.
//! - [`priors`] and [`bayes`]: eleven heterogeneity priors and a deterministic
//!   quadrature engine for the posterior predictive distribution of a new
//!   study's effect, with μ integrated out in closed form.
//! - [`sim`]: a reproducible Monte-Carlo harness measuring the frequentist
//!   coverage of every interval method.
//!
//! [`io`] holds the dataset/config parsers and report emitters used by the CLI.

pub mod bayes;
pub mod error;
pub mod freq;
pub mod io;
pub mod method;
pub mod model;
pub mod priors;
pub mod quad;
pub mod sim;
pub mod special;

pub use error::{Error, Result};
pub use freq::{IntervalEstimate, IntervalKind};
pub use method::Method;
pub use model::{MetaDataset, Study};
pub use priors::{BoundPrior, PriorFamily};
