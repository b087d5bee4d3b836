//! Mixed spatio-temporal Ornstein-Uhlenbeck (MSTOU) random fields.
//!
//! An MSTOU field integrates an exponential kernel with a randomised
//! mean-reversion rate λ ~ f(λ) over a causal ambit set against a Lévy
//! basis:
//!
//! ```text
//! Y_t(x) = ∫_0^∞ ∫_{A_t(x)} exp(−λ(t − s)) L(dξ, ds, dλ)
//! ```
//!
//! The crate provides closed-form and quadrature moments, long-range
//! dependence classification, compound-Poisson shot-noise simulation with
//! truncation diagnostics, and two-step GMM estimation.
//!
//! ```
//! use mstou::moments::{correlation, lrd_classify};
//! use mstou::simulate::{simulate, Grid, SimulationDomain};
//! use mstou::{CompoundPoissonSeed, GClassAmbit, JumpDistribution, MstouModel, RateDensity};
//!
//! # fn main() -> mstou::Result<()> {
//! let seed = CompoundPoissonSeed::new(0.2, JumpDistribution::gamma(3.0, 1.0)?)?;
//! let model = MstouModel::new(seed, RateDensity::gamma(3.0, 1.0)?, GClassAmbit::linear(1, 1.0)?)?;
//! assert!((correlation(&model, 1.0, 0.0)? - 0.5).abs() < 1e-12);
//! assert_eq!(lrd_classify(&model).to_string(), "long_range");
//!
//! let domain = SimulationDomain::new(vec![(0.0, 50.0)], (0.0, 50.0), 40.0, 40.0)?;
//! let field = simulate(&model, &domain, &Grid::covering(&domain, 0.5)?, 42)?;
//! assert_eq!(field.values.len(), 101 * 101);
//! # Ok(())
//! # }
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ambit_geometry;
pub mod error;
pub mod estimate;
pub mod levy_basis;
pub mod moments;
pub mod optimize;
pub mod quadrature;
pub mod rate_mixture;
pub mod simulate;
pub mod special;

pub use ambit_geometry::{GClassAmbit, GFunction, TabulatedG};
pub use error::{MstouError, Result};
pub use levy_basis::{CompoundPoissonSeed, JumpDistribution, SeedMoments};
pub use moments::MstouModel;
pub use rate_mixture::RateDensity;
