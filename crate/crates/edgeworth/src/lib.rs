//! Edgeworth expansions for smooth functions of multivariate sample means.
//!
//! For i.i.d. random vectors `Z_1, .., Z_n` with mean `mu` and a smooth
//! function `H`, the statistic `W_n = sqrt(n) (H(Zbar) - H(mu))` is
//! asymptotically normal; this crate computes the first- and second-order
//! Edgeworth refinements of that limit and provides the tooling around them:
//!
//! - [`model`]: product models of chi-square, Poisson, normal, and lognormal
//!   bases mapped through monomial coordinates, with exact raw and central
//!   moments.
//! - [`statistics`]: built-in statistics (Pearson correlation, squared
//!   ratios of means, a two-sample z-score) plus arbitrary expression
//!   statistics, each yielding the derivative bundle of `H` at the mean.
//! - [`cumulants`]: the expansion coefficients `b1, b2, b3, b4` assembled
//!   from derivatives and central moment tensors through order four.
//! - [`expansion`]: evaluation of the expanded cdf and density.
//! - [`gpcc`]: numerical diagnostics for the conditional
//!   characteristic-function decay assumption backing the second-order term,
//!   including a Jacobian criterion and a tail-truncation bound.
//! - [`montecarlo`]: a deterministic, parallel simulation harness comparing
//!   the normal, first-order, and second-order approximations against the
//!   empirical distribution of `W_n`.
//! - [`report`]: JSON/CSV/SVG artifact writers.
//! - [`cli`]: the `edgeworth` command-line binary, including bundled
//!   experiment presets.
//!
//! The whole pipeline is deterministic: every random draw descends from one
//! master seed through tagged substreams, and reports serialize to
//! byte-identical JSON regardless of thread count.

pub mod cli;
pub mod cumulants;
pub mod error;
pub mod expansion;
pub mod gpcc;
pub mod model;
pub mod moments;
pub mod montecarlo;
pub mod report;
pub mod statistics;
pub mod sym;

pub use cumulants::{coefficients, ExpansionCoefficients};
pub use error::{Error, Result};
pub use expansion::EdgeworthApprox;
pub use gpcc::{estimate_modulus, jacobian_check, truncation_bound, GpccQuery, GpccReport};
pub use model::{BaseDistribution, CoordinateMap, VectorModel};
pub use moments::{analytic_moments, sample_moments, MomentTensor};
pub use montecarlo::{simulate, ExperimentConfig, SimulationReport};
pub use statistics::{DerivativeBundle, StatisticKind, StatisticSpec};
