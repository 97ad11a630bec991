//! Scalable Bayesian sparse covariance estimation.
//!
//! The estimator works in two stages. First, off-diagonal entries whose
//! absolute sample correlation falls below a threshold are screened out and
//! pinned to exact zero. Second, the posterior over the remaining entries is
//! sampled with a block Gibbs sampler under a beta-mixture (horseshoe-type)
//! shrinkage prior on the screened-in off-diagonals and gamma priors on the
//! diagonal. Screening shrinks the per-column conditional from dimension
//! `p - 1` down to the number of retained neighbours, which is what makes the
//! sampler scale.
//!
//! Module map:
//! - [`matstore`]: dense symmetric matrix storage, Cholesky, inverses, the
//!   rank-one submatrix-inverse update, and CSV I/O.
//! - [`randdist`]: seeded RNG streams, Normal/Gamma/GIG/MVN samplers, and the
//!   special functions backing the correlation Bayes factor.
//! - [`screen`]: sample correlations, the screening rule, and threshold
//!   selection (quantile-based and FNR-calibrated).
//! - [`sbm`]: the block Gibbs sampler and posterior summaries.
//! - [`simlab`]: synthetic covariance designs, data generation, accuracy
//!   metrics, and the replication harness.
//! - [`ldaeval`]: linear discriminant classification with leave-one-out
//!   cross-validation on top of a pluggable covariance estimator.

pub mod ldaeval;
pub mod matstore;
pub mod randdist;
pub mod sbm;
pub mod screen;
pub mod simlab;

pub use matstore::SymMatrix;
pub use randdist::RngStream;
pub use screen::ScreenSet;
pub use sbm::{ChainConfig, HyperParams, RunSummary};
